#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "mrnn/diffcore.hpp"

namespace mrnn {

/// Perceptron in front of a softmax: affine -> PReLU -> affine -> softmax.
///
/// The conductor instance maps the N block scores of a position to N
/// weights (w1: N x N, w2: N x N). The document-aware instance applies a
/// shared scalar chain 1 -> k -> 1 to every dot-product score independently,
/// which keeps it defined for any document length.
struct SoftmaxBlock {
  Array w1, b1, slopes, w2, b2;

  std::size_t inputs() const { return w1.extent(0); }
  std::size_t hidden() const { return w1.extent(1); }
  std::size_t outputs() const { return w2.extent(1); }

  static SoftmaxBlock init(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
    auto uniform = [&](Shape shape, std::size_t fan_in) {
      Array a(std::move(shape));
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (double& v : a.data()) v = dist(rng);
      return a;
    };
    SoftmaxBlock b;
    b.w1 = uniform({in, hidden}, in);
    b.b1 = Array(Shape{hidden});
    b.slopes = Array::filled(Shape{hidden}, 0.25);
    b.w2 = uniform({hidden, out}, hidden);
    b.b2 = Array(Shape{out});
    return b;
  }
};

struct SoftmaxBlockVars {
  Var w1, b1, slopes, w2, b2;
};

inline SoftmaxBlockVars bind_softmax_block(Tape& tape, const SoftmaxBlock& b, bool trainable) {
  auto leaf = [&](const Array& a) { return trainable ? tape.parameter(a) : tape.constant(a); };
  return {leaf(b.w1), leaf(b.b1), leaf(b.slopes), leaf(b.w2), leaf(b.b2)};
}

/// Pre-softmax logits of the perceptron for each row of `rows` ([r x in]).
inline Var softmax_block_logits(Var rows, const SoftmaxBlockVars& p) {
  Var z = affine(rows, p.w1, p.b1);
  z = prelu(z, p.slopes);
  return affine(z, p.w2, p.b2);
}

/// Scalar adjusters: T[n][i] = sum_j G_n^i[j]. G is [N x h x s], T is [N x h].
inline Var transform(Var maps) {
  if (maps.shape().size() != 3) throw ShapeError("transform: expected [N x h x s] feature maps");
  return sum_last(maps);
}

struct ConductResult {
  Var mra;      // [h x s]
  Var weights;  // [h x N], one simplex vector per position
};

/// Multi-resolution n-gram attention: per position i, aw^i = softmax_block(t^i)
/// over the N blocks and mra^i = sum_n aw^i_n G_n^i.
inline ConductResult conduct(Var maps, Var adjusters, const SoftmaxBlockVars& p) {
  const Shape& gs = maps.shape();
  const Shape& ts = adjusters.shape();
  if (gs.size() != 3 || ts.size() != 2 || ts[0] != gs[0] || ts[1] != gs[1]) {
    throw ShapeError("conduct: adjusters " + shape_string(ts) + " do not match maps " + shape_string(gs));
  }
  if (p.w1.shape()[0] != gs[0] || p.w2.shape()[1] != gs[0]) {
    throw ShapeError("conduct: softmax block width does not match block count " + std::to_string(gs[0]));
  }
  const Var per_position = transpose(adjusters);
  const Var weights = softmax_masked(softmax_block_logits(per_position, p));
  return {block_mix(weights, maps), weights};
}

struct DocAwareResult {
  Var encodings;  // qe, [h_q]
  Var weights;    // aw', [h_q x h_d]
};

/// Document-aware query attention. score^i_j = mraq^i . mrad^j passes the
/// shared scalar chain, a softmax over valid document positions gives aw'^i,
/// sae^i = sum_j aw'^i_j mrad^j and qe^i = |sae^i - mraq^i|.
inline DocAwareResult doc_aware_encode(Var mra_query, Var mra_doc, const SoftmaxBlockVars& p,
                                       const std::vector<bool>& doc_mask = {}) {
  const Shape& qs = mra_query.shape();
  const Shape& ds = mra_doc.shape();
  if (qs.size() != 2 || ds.size() != 2 || qs[1] != ds[1]) {
    throw ShapeError("doc_aware_encode: query " + shape_string(qs) + " and document " + shape_string(ds) +
                     " must share the feature width");
  }
  if (p.w1.shape()[0] != 1 || p.w2.shape()[1] != 1) {
    throw ShapeError("doc_aware_encode: encoder block must map 1 -> k -> 1");
  }
  const std::size_t hq = qs[0], hd = ds[0];
  if (hd == 0) throw DomainError("doc_aware_encode: empty document");
  if (!doc_mask.empty()) {
    bool any = false;
    for (bool b : doc_mask) any = any || b;
    if (!any) throw DomainError("doc_aware_encode: document has no valid position");
  }
  const Var scores = matmul_nt(mra_query, mra_doc);
  const Var logits = reshape(softmax_block_logits(reshape(scores, {hq * hd, 1}), p), {hq, hd});
  const Var weights = softmax_masked(logits, doc_mask);
  const Var attended = matmul(weights, mra_doc);
  return {euclidean_rows(attended, mra_query), weights};
}

/// dist = sum_i qe^i
inline Var aggregate(Var encodings) { return sum(encodings); }

/// Every attention weight fired for one query-document forward pass.
struct AttentionTrace {
  Array mr_weights_query;  // [N x h_q]
  Array mr_weights_doc;    // [N x h_d]
  Array doc_aware;         // [h_q x h_d]
  Array encodings;         // qe, [h_q]
  double dist = 0.0;
};

}  // namespace mrnn
