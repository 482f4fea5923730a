#include "support.hpp"

using namespace mrnn;
using testing_support::expect_arrays_near;
using testing_support::random_array;

namespace {

struct Bound {
  Tape tape;
  SoftmaxBlock block;
  SoftmaxBlockVars vars;
  Bound(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    block = SoftmaxBlock::init(in, hidden, out, rng);
    block.b1 = random_array({hidden}, rng);
    block.b2 = random_array({out}, rng);
    vars = bind_softmax_block(tape, block, false);
  }
};

// affine -> PReLU -> affine -> softmax on one row, written out by hand.
std::vector<double> softmax_block_oracle(const SoftmaxBlock& b, const std::vector<double>& x) {
  std::vector<double> hdn(b.hidden()), out(b.outputs());
  for (std::size_t k = 0; k < b.hidden(); ++k) {
    double v = b.b1[k];
    for (std::size_t i = 0; i < x.size(); ++i) v += x[i] * b.w1.at(i, k);
    hdn[k] = v >= 0 ? v : b.slopes[k] * v;
  }
  double mx = -1e300;
  for (std::size_t o = 0; o < b.outputs(); ++o) {
    double v = b.b2[o];
    for (std::size_t k = 0; k < b.hidden(); ++k) v += hdn[k] * b.w2.at(k, o);
    out[o] = v;
    mx = std::max(mx, v);
  }
  double z = 0.0;
  for (double& v : out) z += (v = std::exp(v - mx));
  for (double& v : out) v /= z;
  return out;
}

}  // namespace

TEST(Transform, Examples) {
  Tape tape;
  std::mt19937_64 rng(1);
  const Array g1 = random_array({2, 3, 1}, rng);
  expect_arrays_near(transform(tape.constant(g1)).value(), g1.reshaped({2, 3}), 0.0);
  expect_arrays_near(transform(tape.constant(Array::filled({2, 3, 4}, 1.0))).value(), Array::filled({2, 3}, 4.0), 0.0);
  const Array g = random_array({3, 4, 5}, rng);
  const Array t = transform(tape.constant(g)).value();
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 5; ++j) s += g[(n * 4 + i) * 5 + j];
      EXPECT_EQ(t.at(n, i), s);
    }
}

TEST(Conduct, SingleBlockPassesThrough) {
  Bound b(1, 1, 1, 2);
  std::mt19937_64 rng(2);
  const Var g = b.tape.constant(random_array({1, 4, 3}, rng));
  const ConductResult r = conduct(g, transform(g), b.vars);
  expect_arrays_near(r.mra.value(), g.value().reshaped({4, 3}), 0.0);
  for (double w : r.weights.value().data()) EXPECT_EQ(w, 1.0);
}

TEST(Conduct, UniformWeightsGiveBlockMean) {
  Bound b(3, 3, 3, 3);
  b.block.w2 = Array(Shape{3, 3});
  b.block.b2 = Array(Shape{3});
  b.vars = bind_softmax_block(b.tape, b.block, false);
  std::mt19937_64 rng(3);
  const Array ga = random_array({3, 4, 2}, rng);
  const Var g = b.tape.constant(ga);
  const Array mra = conduct(g, transform(g), b.vars).mra.value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      EXPECT_NEAR(mra.at(i, j), (ga[(0 * 4 + i) * 2 + j] + ga[(1 * 4 + i) * 2 + j] + ga[(2 * 4 + i) * 2 + j]) / 3.0,
                  1e-15);
}

TEST(Conduct, MatchesCompositionOracle) {
  Bound b(3, 3, 3, 4);
  std::mt19937_64 rng(4);
  const Array ga = random_array({3, 5, 4}, rng);
  const Var g = b.tape.constant(ga);
  const ConductResult r = conduct(g, transform(g), b.vars);
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> t(3, 0.0);
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t j = 0; j < 4; ++j) t[n] += ga[(n * 5 + i) * 4 + j];
    const auto w = softmax_block_oracle(b.block, t);
    for (std::size_t n = 0; n < 3; ++n) EXPECT_NEAR(r.weights.value().at(i, n), w[n], 1e-14);
    for (std::size_t j = 0; j < 4; ++j) {
      double m = 0.0;
      for (std::size_t n = 0; n < 3; ++n) m += w[n] * ga[(n * 5 + i) * 4 + j];
      EXPECT_NEAR(r.mra.value().at(i, j), m, 1e-14);
    }
  }
}

TEST(DocAware, SingleDocumentPosition) {
  Bound b(1, 4, 1, 5);
  std::mt19937_64 rng(5);
  const Array q = random_array({3, 4}, rng), d = random_array({1, 4}, rng);
  const DocAwareResult r = doc_aware_encode(b.tape.constant(q), b.tape.constant(d), b.vars);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.weights.value().at(i, 0), 1.0);
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += (q.at(i, j) - d.at(0, j)) * (q.at(i, j) - d.at(0, j));
    EXPECT_NEAR(r.encodings.value()[i], std::sqrt(s), 1e-15);
  }
}

TEST(DocAware, IdenticalDocumentRows) {
  Bound b(1, 4, 1, 6);
  std::mt19937_64 rng(6);
  const Array row = random_array({1, 4}, rng);
  Array d(Shape{5, 4});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) d.at(i, j) = row.at(0, j);
  const Array q = random_array({3, 4}, rng);
  const Array qe = doc_aware_encode(b.tape.constant(q), b.tape.constant(d), b.vars).encodings.value();
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += (q.at(i, j) - row.at(0, j)) * (q.at(i, j) - row.at(0, j));
    EXPECT_NEAR(qe[i], std::sqrt(s), 1e-12);
  }
  Array qsame(Shape{3, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) qsame.at(i, j) = row.at(0, j);
  const Array zero = doc_aware_encode(b.tape.constant(qsame), b.tape.constant(d), b.vars).encodings.value();
  for (double v : zero.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(DocAware, MatchesCompositionOracle) {
  Bound b(1, 4, 1, 7);
  std::mt19937_64 rng(7);
  const Array q = random_array({3, 4}, rng), d = random_array({5, 4}, rng);
  const std::vector<bool> mask{true, true, false, true, true};
  const DocAwareResult r = doc_aware_encode(b.tape.constant(q), b.tape.constant(d), b.vars, mask);
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> logits;
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < 5; ++k) {
      if (!mask[k]) continue;
      double score = 0.0;
      for (std::size_t j = 0; j < 4; ++j) score += q.at(i, j) * d.at(k, j);
      // Scalar chain 1 -> 4 -> 1 on the raw dot product.
      double hsum = b.block.b2[0];
      for (std::size_t h = 0; h < 4; ++h) {
        double v = score * b.block.w1.at(0, h) + b.block.b1[h];
        v = v >= 0 ? v : b.block.slopes[h] * v;
        hsum += v * b.block.w2.at(h, 0);
      }
      logits.push_back(hsum);
      idx.push_back(k);
    }
    double mx = *std::max_element(logits.begin(), logits.end()), z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    std::vector<double> sae(4, 0.0);
    for (std::size_t a = 0; a < idx.size(); ++a) {
      const double w = logits[a] / z;
      EXPECT_NEAR(r.weights.value().at(i, idx[a]), w, 1e-14);
      for (std::size_t j = 0; j < 4; ++j) sae[j] += w * d.at(idx[a], j);
    }
    EXPECT_EQ(r.weights.value().at(i, 2), 0.0);
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += (sae[j] - q.at(i, j)) * (sae[j] - q.at(i, j));
    EXPECT_NEAR(r.encodings.value()[i], std::sqrt(s), 1e-13);
  }
}

TEST(Aggregate, Sums) {
  Tape tape;
  EXPECT_EQ(aggregate(tape.constant(Array(Shape{3}))).value().item(), 0.0);
  EXPECT_EQ(aggregate(tape.constant(Array::vector({0.5, 1.5}))).value().item(), 2.0);
  std::mt19937_64 rng(8);
  const Array qe = random_array({7}, rng, 0.0, 2.0);
  double s = 0.0;
  for (double v : qe.data()) s += v;
  EXPECT_NEAR(aggregate(tape.constant(qe)).value().item(), s, 1e-15);
}

TEST(Model, DistanceNonNegativeAndTraceIsStochastic) {
  ModelConfig c;
  c.blocks = 3;
  c.features = 8;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MrnnModel m = MrnnModel::init(c, 6, seed);
    std::mt19937_64 rng(seed + 100);
    const PairScore p = forward_pair(m, random_tokens(4, 6, rng), random_tokens(7, 6, rng));
    EXPECT_GE(p.dist, 0.0);
    EXPECT_EQ(p.trace.mr_weights_query.shape(), (Shape{3, 4}));
    EXPECT_EQ(p.trace.mr_weights_doc.shape(), (Shape{3, 7}));
    EXPECT_EQ(p.trace.doc_aware.shape(), (Shape{4, 7}));
    for (std::size_t i = 0; i < 4; ++i) {
      double col = 0.0, row = 0.0;
      for (std::size_t n = 0; n < 3; ++n) col += p.trace.mr_weights_query.at(n, i);
      for (std::size_t j = 0; j < 7; ++j) row += p.trace.doc_aware.at(i, j);
      EXPECT_NEAR(col, 1.0, 1e-9);
      EXPECT_NEAR(row, 1.0, 1e-9);
    }
  }
}

TEST(Model, CachedEncodingsAgreeWithFullPass) {
  ModelConfig c;
  c.blocks = 2;
  c.features = 8;
  const MrnnModel m = MrnnModel::init(c, 5, 3);
  std::mt19937_64 rng(9);
  const Array q = random_tokens(4, 5, rng), d = random_tokens(6, 5, rng);
  const double direct = forward_pair(m, q, d).dist;
  const double cached =
      pair_distance(m, encode_text(m, q, Side::query), encode_text(m, d, Side::document));
  EXPECT_NEAR(direct, cached, 1e-13);
}

TEST(Model, EndToEndGradientTiny) {
  ModelConfig c;
  c.blocks = 2;
  c.window = 3;
  c.features = 8;
  const MrnnModel m = MrnnModel::init(c, 6, 1);
  std::mt19937_64 rng(2);
  const GradReport r = check_model_gradients(m, random_tokens(4, 6, rng), random_tokens(6, 6, rng));
  EXPECT_LE(r.max_rel_error(), 1e-4);
  EXPECT_EQ(r.parameters.size(), 2u * 6u + 5u + 5u);
}

TEST(Model, UntiedSidesHaveSeparateParameters) {
  ModelConfig c;
  c.blocks = 2;
  c.features = 4;
  c.tie_sides = false;
  const MrnnModel m = MrnnModel::init(c, 3, 1);
  EXPECT_EQ(m.named_parameters().size(), 4u * 6u + 3u * 5u);
  std::mt19937_64 rng(3);
  const GradReport r = check_model_gradients(m, random_tokens(3, 3, rng), random_tokens(4, 3, rng));
  EXPECT_LE(r.max_rel_error(), 1e-4);
}

TEST(Model, IdentityCollapse) {
  // One block (window 1): a query repeating token t and a one-token document t
  // produce identical MRA rows, hence dist exactly 0.
  ModelConfig c;
  c.blocks = 1;
  c.features = 6;
  const MrnnModel m = MrnnModel::init(c, 4, 5);
  std::mt19937_64 rng(5);
  const Array t = random_tokens(1, 4, rng);
  Array q(Shape{3, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) q.at(i, j) = t.at(0, j);
  EXPECT_EQ(forward_pair(m, q, t).dist, 0.0);
}
