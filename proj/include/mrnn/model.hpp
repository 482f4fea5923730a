#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mrnn/attention.hpp"
#include "mrnn/ngram.hpp"

namespace mrnn {

enum class Side { query, document };

/// All parameters and running statistics of a multi-resolution network.
/// With tied sides the document reuses the query-side blocks and conductor.
struct MrnnModel {
  ModelConfig config;
  std::size_t input_dim = 0;
  BlockParams query_blocks;
  BlockParams doc_blocks;  // empty when tied
  SoftmaxBlock query_conductor;
  SoftmaxBlock doc_conductor;  // unused when tied
  SoftmaxBlock encoder;

  static MrnnModel init(const ModelConfig& config, std::size_t input_dim, std::uint64_t seed) {
    config.validate();
    if (input_dim == 0) throw ConfigError("model: input dimension must be >= 1");
    std::mt19937_64 rng(seed);
    MrnnModel m;
    m.config = config;
    m.input_dim = input_dim;
    m.query_blocks = init_blocks(config, input_dim, rng);
    if (!config.tie_sides) m.doc_blocks = init_blocks(config, input_dim, rng);
    m.query_conductor = SoftmaxBlock::init(config.blocks, config.blocks, config.blocks, rng);
    if (!config.tie_sides) m.doc_conductor = SoftmaxBlock::init(config.blocks, config.blocks, config.blocks, rng);
    m.encoder = SoftmaxBlock::init(1, config.encoder_hidden, 1, rng);
    // Non-negative weights make the initial score chain increasing, so
    // attention starts out favouring the most similar document positions.
    for (double& v : m.encoder.w1.data()) v = std::abs(v);
    for (double& v : m.encoder.w2.data()) v = std::abs(v);
    return m;
  }

  bool tied() const noexcept { return config.tie_sides; }

  const BlockParams& blocks(Side side) const {
    return side == Side::document && !tied() ? doc_blocks : query_blocks;
  }
  BlockParams& blocks(Side side) { return side == Side::document && !tied() ? doc_blocks : query_blocks; }

  /// Visits every learnable array in declaration order as f(name, array).
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    auto blocks = [&](auto& list, const std::string& prefix) {
      for (std::size_t n = 0; n < list.size(); ++n) {
        const std::string p = prefix + std::to_string(n + 1) + ".";
        f(p + "kernels", list[n].kernels);
        f(p + "bias", list[n].bias);
        f(p + "gamma", list[n].gamma);
        f(p + "beta", list[n].beta);
        f(p + "slopes", list[n].slopes);
        f(p + "scale", list[n].scale);
      }
    };
    auto softmax = [&](auto& b, const std::string& prefix) {
      f(prefix + ".w1", b.w1);
      f(prefix + ".b1", b.b1);
      f(prefix + ".slopes", b.slopes);
      f(prefix + ".w2", b.w2);
      f(prefix + ".b2", b.b2);
    };
    blocks(self.query_blocks, "query_block");
    if (!self.tied()) blocks(self.doc_blocks, "doc_block");
    softmax(self.query_conductor, "query_conductor");
    if (!self.tied()) softmax(self.doc_conductor, "doc_conductor");
    softmax(self.encoder, "encoder");
  }

  template <class F>
  void visit_parameters(F&& f) {
    visit(*this, std::forward<F>(f));
  }
  template <class F>
  void visit_parameters(F&& f) const {
    visit(*this, std::forward<F>(f));
  }

  /// Visits every batch-norm running state as f(name, state).
  template <class F>
  void visit_norms(F&& f) {
    for (std::size_t n = 0; n < query_blocks.size(); ++n) f("query_block" + std::to_string(n + 1), query_blocks[n].norm);
    for (std::size_t n = 0; n < doc_blocks.size(); ++n) f("doc_block" + std::to_string(n + 1), doc_blocks[n].norm);
  }
  template <class F>
  void visit_norms(F&& f) const {
    for (std::size_t n = 0; n < query_blocks.size(); ++n) f("query_block" + std::to_string(n + 1), query_blocks[n].norm);
    for (std::size_t n = 0; n < doc_blocks.size(); ++n) f("doc_block" + std::to_string(n + 1), doc_blocks[n].norm);
  }

  std::vector<NamedArray> named_parameters() const {
    std::vector<NamedArray> out;
    visit_parameters([&](const std::string& name, const Array& a) { out.push_back({name, a}); });
    return out;
  }

  void set_parameters(const std::vector<Array>& values) {
    std::size_t i = 0;
    visit_parameters([&](const std::string& name, Array& a) {
      if (i >= values.size() || values[i].shape() != a.shape()) {
        throw ShapeError("set_parameters: mismatch at " + name);
      }
      a = values[i++];
    });
    if (i != values.size()) throw ShapeError("set_parameters: too many values");
  }

  void validate() const {
    config.validate();
    validate_blocks(query_blocks, config, input_dim);
    if (!tied()) validate_blocks(doc_blocks, config, input_dim);
  }
};

/// Tape leaves for every parameter of a model, grouped by role.
struct BoundModel {
  std::vector<GramBlockVars> query_blocks;
  std::vector<GramBlockVars> doc_blocks;
  SoftmaxBlockVars query_conductor;
  SoftmaxBlockVars doc_conductor;
  SoftmaxBlockVars encoder;
  std::vector<Var> parameters;  // visit order
  bool tied = true;

  const std::vector<GramBlockVars>& blocks(Side side) const {
    return side == Side::document && !tied ? doc_blocks : query_blocks;
  }
  const SoftmaxBlockVars& conductor(Side side) const {
    return side == Side::document && !tied ? doc_conductor : query_conductor;
  }
};

/// Groups existing leaves (in visit order) into a BoundModel shaped like `model`.
inline BoundModel assemble_bound(const MrnnModel& model, const std::vector<Var>& leaves) {
  BoundModel b;
  b.tied = model.tied();
  b.parameters = leaves;
  std::size_t i = 0;
  auto next = [&]() {
    if (i >= leaves.size()) throw ShapeError("assemble_bound: too few leaves");
    return leaves[i++];
  };
  auto blocks = [&](std::size_t count, std::vector<GramBlockVars>& out) {
    for (std::size_t n = 0; n < count; ++n) {
      GramBlockVars v;
      v.kernels = next();
      v.bias = next();
      v.gamma = next();
      v.beta = next();
      v.slopes = next();
      v.scale = next();
      out.push_back(v);
    }
  };
  auto softmax = [&](SoftmaxBlockVars& v) {
    v.w1 = next();
    v.b1 = next();
    v.slopes = next();
    v.w2 = next();
    v.b2 = next();
  };
  blocks(model.query_blocks.size(), b.query_blocks);
  if (!model.tied()) blocks(model.doc_blocks.size(), b.doc_blocks);
  softmax(b.query_conductor);
  if (!model.tied()) softmax(b.doc_conductor);
  softmax(b.encoder);
  if (i != leaves.size()) throw ShapeError("assemble_bound: too many leaves");
  return b;
}

inline BoundModel bind_model(Tape& tape, const MrnnModel& model, bool trainable) {
  std::vector<Var> leaves;
  model.visit_parameters([&](const std::string&, const Array& a) {
    leaves.push_back(trainable ? tape.parameter(a) : tape.constant(a));
  });
  return assemble_bound(model, leaves);
}

/// Zero-padded [B x h_max x w] batch plus the true length of each text.
struct PaddedBatch {
  Array embedded;
  std::vector<std::size_t> lengths;
};

inline PaddedBatch pad_sequences(const std::vector<const Array*>& texts) {
  if (texts.empty()) throw DomainError("pad_sequences: empty batch");
  const std::size_t w = texts.front()->extent(1);
  std::size_t longest = 0;
  for (const Array* t : texts) {
    if (t->rank() != 2 || t->extent(1) != w) throw ShapeError("pad_sequences: texts differ in width");
    if (t->extent(0) == 0) throw DomainError("pad_sequences: empty text");
    longest = std::max(longest, t->extent(0));
  }
  PaddedBatch batch{Array(Shape{texts.size(), longest, w}), {}};
  auto out = batch.embedded.data();
  for (std::size_t b = 0; b < texts.size(); ++b) {
    const auto src = texts[b]->data();
    std::copy(src.begin(), src.end(), out.begin() + b * longest * w);
    batch.lengths.push_back(texts[b]->extent(0));
  }
  return batch;
}

/// Runs one side's n-gram stack over a padded batch and returns each text's
/// feature map tensor [N x h_b x s]. In eval mode `norms` is only read.
inline std::vector<Var> encode_maps(Tape& tape, const std::vector<GramBlockVars>& vars,
                                    std::vector<BatchNormState*> norms, std::size_t pool_width,
                                    const std::vector<const Array*>& texts, Mode mode) {
  const PaddedBatch batch = pad_sequences(texts);
  const auto maps = multi_resolution_maps(tape.constant(batch.embedded), vars, std::move(norms), pool_width,
                                          mode, batch.lengths);
  std::vector<Var> per_text;
  per_text.reserve(texts.size());
  for (std::size_t b = 0; b < texts.size(); ++b) {
    std::vector<Var> slices;
    for (const Var& g : maps) slices.push_back(sequence_slice(g, b, batch.lengths[b]));
    per_text.push_back(stack(slices));
  }
  return per_text;
}

/// Working copies of running statistics for an eval-mode pass over a const model.
inline std::vector<BatchNormState> copy_norms(const BlockParams& blocks) {
  std::vector<BatchNormState> out;
  for (const auto& b : blocks) out.push_back(b.norm);
  return out;
}

inline std::vector<BatchNormState*> norm_pointers(std::vector<BatchNormState>& norms) {
  std::vector<BatchNormState*> out;
  for (auto& n : norms) out.push_back(&n);
  return out;
}

inline std::vector<BatchNormState*> norm_pointers(BlockParams& blocks) {
  std::vector<BatchNormState*> out;
  for (auto& b : blocks) out.push_back(&b.norm);
  return out;
}

/// Every intermediate of one query-document pass that callers may inspect.
struct PairVars {
  ConductResult query;
  ConductResult doc;
  DocAwareResult encoding;
  Var dist;
};

/// Attention stages and aggregation over precomputed feature maps.
inline PairVars score_maps(const BoundModel& bound, Var query_maps, Var doc_maps) {
  PairVars out;
  out.query = conduct(query_maps, transform(query_maps), bound.conductor(Side::query));
  out.doc = conduct(doc_maps, transform(doc_maps), bound.conductor(Side::document));
  out.encoding = doc_aware_encode(out.query.mra, out.doc.mra, bound.encoder);
  out.dist = aggregate(out.encoding.encodings);
  return out;
}

/// Full eval-mode pipeline for one pair on a caller-owned tape. The model
/// parameters enter the tape through `bound`.
inline PairVars forward_pair(Tape& tape, const BoundModel& bound, const MrnnModel& model,
                             const Array& query, const Array& doc) {
  if (query.rank() != 2 || query.extent(0) == 0) throw DomainError("forward_pair: empty query");
  if (doc.rank() != 2 || doc.extent(0) == 0) throw DomainError("forward_pair: empty document");
  auto qnorm = copy_norms(model.blocks(Side::query));
  auto dnorm = copy_norms(model.blocks(Side::document));
  const std::size_t pool = model.config.pool_width;
  const Var gq = encode_maps(tape, bound.blocks(Side::query), norm_pointers(qnorm), pool, {&query}, Mode::eval)[0];
  const Var gd = encode_maps(tape, bound.blocks(Side::document), norm_pointers(dnorm), pool, {&doc}, Mode::eval)[0];
  return score_maps(bound, gq, gd);
}

struct PairScore {
  double dist = 0.0;
  AttentionTrace trace;
};

/// Eval-mode distance and attention trace for one embedded query/document pair.
inline PairScore forward_pair(const MrnnModel& model, const Array& query, const Array& doc) {
  Tape tape;
  const BoundModel bound = bind_model(tape, model, false);
  const PairVars v = forward_pair(tape, bound, model, query, doc);
  PairScore out;
  out.dist = v.dist.value().item();
  out.trace.mr_weights_query = transpose(v.query.weights).value();
  out.trace.mr_weights_doc = transpose(v.doc.weights).value();
  out.trace.doc_aware = v.encoding.weights.value();
  out.trace.encodings = v.encoding.encodings.value();
  out.trace.dist = out.dist;
  return out;
}

/// Eval-mode multi-resolution attention matrix MRA [h x s] of one text. Texts
/// are encoded independently in eval mode, so ranking can cache these.
inline Array encode_text(const MrnnModel& model, const Array& embedded, Side side) {
  if (embedded.rank() != 2 || embedded.extent(0) == 0) throw DomainError("encode_text: empty text");
  Tape tape;
  const BoundModel bound = bind_model(tape, model, false);
  auto norms = copy_norms(model.blocks(side));
  const Var g = encode_maps(tape, bound.blocks(side), norm_pointers(norms), model.config.pool_width, {&embedded},
                            Mode::eval)[0];
  return conduct(g, transform(g), bound.conductor(side)).mra.value();
}

/// Distance from cached MRA matrices.
inline double pair_distance(const MrnnModel& model, const Array& mra_query, const Array& mra_doc) {
  Tape tape;
  const SoftmaxBlockVars enc = bind_softmax_block(tape, model.encoder, false);
  const auto r = doc_aware_encode(tape.constant(mra_query), tape.constant(mra_doc), enc);
  return aggregate(r.encodings).value().item();
}

}  // namespace mrnn
