// Acceptance checks: one [PASS]/[FAIL] line per criterion, exit status 1 if
// any criterion fails. Runs without any external embedding data.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "mrnn/mrnn.hpp"

using namespace mrnn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Array uniform(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Array a(shape);
  for (double& v : a.data()) v = u(rng);
  return a;
}

// Magnitudes in [0.1, 1] so kinks at zero stay out of finite-difference reach.
Array off_zero(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Array a(shape);
  for (double& v : a.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return a;
}

// Distinct values 0.01 apart, so max pooling has no ties.
Array spread(const Shape& shape, std::mt19937_64& rng) {
  Array a(shape);
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * static_cast<double>(i) - 0.005 * static_cast<double>(v.size());
  std::shuffle(v.begin(), v.end(), rng);
  std::copy(v.begin(), v.end(), a.data().begin());
  return a;
}

Array transposed(const Array& m) {
  Array t(Shape{m.extent(1), m.extent(0)});
  for (std::size_t i = 0; i < m.extent(0); ++i)
    for (std::size_t j = 0; j < m.extent(1); ++j) t.at(j, i) = m.at(i, j);
  return t;
}

Var project(Var x) {
  std::mt19937_64 rng(99);
  return sum(mul(x, x.tape->constant(uniform(x.shape(), rng))));
}

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << name << ": " << o.detail << std::endl;
  if (!o.pass) ++failures;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  struct Case {
    std::string name;
    ScalarFunction f;
    std::vector<NamedArray> params;
  };
  const std::vector<std::size_t> lengths{4, 3};
  BatchNormState frozen;
  frozen.running_mean = {0.1, -0.2, 0.3};
  frozen.running_var = {0.5, 1.5, 2.0};
  auto two = [&](Shape s) { return std::vector<NamedArray>{{"a", off_zero(s, rng)}, {"b", off_zero(s, rng)}}; };

  std::vector<Case> cases;
  cases.push_back({"conv1d_same", [](Tape&, const std::vector<Var>& p) { return project(conv1d_same(p[0], p[1], p[2])); },
                   {{"x", uniform({2, 5, 3}, rng)}, {"k", uniform({4, 3, 3}, rng)}, {"b", uniform({4}, rng)}}});
  cases.push_back({"batch_norm/train",
                   [&](Tape&, const std::vector<Var>& p) {
                     BatchNormState st;
                     return project(batch_norm(p[0], p[1], p[2], st, Mode::train, lengths));
                   },
                   {{"x", uniform({2, 4, 3}, rng)}, {"gamma", uniform({3}, rng)}, {"beta", uniform({3}, rng)}}});
  cases.push_back({"batch_norm/eval",
                   [&](Tape&, const std::vector<Var>& p) {
                     return project(batch_norm(p[0], p[1], p[2], frozen, Mode::eval));
                   },
                   {{"x", uniform({4, 3}, rng)}, {"gamma", uniform({3}, rng)}, {"beta", uniform({3}, rng)}}});
  cases.push_back({"prelu", [](Tape&, const std::vector<Var>& p) { return project(prelu(p[0], p[1])); },
                   {{"x", off_zero({4, 3}, rng)}, {"slopes", uniform({3}, rng)}}});
  cases.push_back({"pool_same", [](Tape&, const std::vector<Var>& p) { return project(pool_same(p[0], 3, {5, 3})); },
                   {{"x", spread({2, 5, 3}, rng)}}});
  cases.push_back({"scale_unit", [](Tape&, const std::vector<Var>& p) { return project(scale_unit(p[0], p[1])); },
                   {{"x", uniform({4, 3}, rng)}, {"sc", uniform({1}, rng)}}});
  cases.push_back({"softmax_masked",
                   [](Tape&, const std::vector<Var>& p) {
                     return project(softmax_masked(p[0], {true, false, true, true}));
                   },
                   {{"scores", uniform({3, 4}, rng)}}});
  cases.push_back({"affine", [](Tape&, const std::vector<Var>& p) { return project(affine(p[0], p[1], p[2])); },
                   {{"x", uniform({4, 3}, rng)}, {"w", uniform({3, 2}, rng)}, {"b", uniform({2}, rng)}}});
  cases.push_back({"dot", [](Tape&, const std::vector<Var>& p) { return dot(p[0], p[1]); }, two({7})});
  cases.push_back({"euclidean", [](Tape&, const std::vector<Var>& p) { return euclidean(p[0], p[1]); }, two({7})});
  cases.push_back({"euclidean_rows", [](Tape&, const std::vector<Var>& p) { return project(euclidean_rows(p[0], p[1])); },
                   two({3, 4})});
  cases.push_back({"sum", [](Tape&, const std::vector<Var>& p) { return sum(mul(p[0], p[1])); }, two({3, 4})});
  cases.push_back({"sum_last", [](Tape&, const std::vector<Var>& p) { return project(sum_last(p[0])); }, two({2, 3, 4})});
  cases.push_back({"concat_channels",
                   [](Tape&, const std::vector<Var>& p) { return project(concat_channels({p[0], p[1]})); }, two({3, 4})});
  cases.push_back({"matmul", [](Tape&, const std::vector<Var>& p) { return project(matmul(p[0], p[1])); },
                   {{"a", uniform({3, 4}, rng)}, {"b", uniform({4, 2}, rng)}}});
  cases.push_back({"matmul_nt", [](Tape&, const std::vector<Var>& p) { return project(matmul_nt(p[0], p[1])); },
                   {{"a", uniform({3, 4}, rng)}, {"b", uniform({5, 4}, rng)}}});
  cases.push_back({"transpose", [](Tape&, const std::vector<Var>& p) { return project(transpose(p[0])); },
                   {{"a", uniform({3, 4}, rng)}}});
  cases.push_back({"reshape", [](Tape&, const std::vector<Var>& p) { return project(reshape(p[0], {2, 6})); },
                   {{"a", uniform({3, 4}, rng)}}});
  cases.push_back({"sequence_slice", [](Tape&, const std::vector<Var>& p) { return project(sequence_slice(p[0], 1, 2)); },
                   {{"a", uniform({2, 3, 4}, rng)}}});
  cases.push_back({"stack", [](Tape&, const std::vector<Var>& p) { return project(stack({p[0], p[1]})); }, two({3, 2})});
  cases.push_back({"block_mix", [](Tape&, const std::vector<Var>& p) { return project(block_mix(p[0], p[1])); },
                   {{"w", uniform({4, 3}, rng)}, {"maps", uniform({3, 4, 2}, rng)}}});
  cases.push_back({"add", [](Tape&, const std::vector<Var>& p) { return project(add(p[0], p[1])); }, two({2, 3})});
  cases.push_back({"sub", [](Tape&, const std::vector<Var>& p) { return project(sub(p[0], p[1])); }, two({2, 3})});
  cases.push_back({"mul", [](Tape&, const std::vector<Var>& p) { return project(mul(p[0], p[1])); }, two({2, 3})});
  cases.push_back({"add_scalar", [](Tape&, const std::vector<Var>& p) { return project(add_scalar(p[0], 0.7)); },
                   two({2, 3})});
  cases.push_back({"scale", [](Tape&, const std::vector<Var>& p) { return project(scale(p[0], -1.3)); }, two({2, 3})});
  cases.push_back({"relu", [](Tape&, const std::vector<Var>& p) { return project(relu(p[0])); }, two({2, 3})});
  cases.push_back({"square", [](Tape&, const std::vector<Var>& p) { return project(square(p[0])); }, two({2, 3})});

  double worst = 0.0;
  std::string worst_name;
  for (const auto& c : cases) {
    const double e = finite_diff_check(c.f, c.params, 1e-5).max_rel_error();
    if (e >= worst) {
      worst = e;
      worst_name = c.name;
    }
  }

  // End-to-end tiny network, eval-mode batch norm.
  ModelConfig cfg;
  cfg.blocks = 2;
  cfg.window = 3;
  cfg.features = 8;
  double model_worst = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const MrnnModel model = MrnnModel::init(cfg, 6, seed);
    std::mt19937_64 trng(seed + 100);
    const Array q = random_tokens(4, 6, trng), d = random_tokens(6, 6, trng);
    model_worst = std::max(model_worst, check_model_gradients(model, q, d, 1e-5).max_rel_error());
  }
  const double elapsed = seconds_since(t0);
  const bool ok = worst <= 1e-4 && model_worst <= 1e-4 && elapsed < 60.0;
  return {ok, std::to_string(cases.size()) + " primitives, worst rel " + fmt(worst) + " (" + worst_name +
                  "); tiny model worst rel " + fmt(model_worst) + "; " + fmt(elapsed) + " s (limits 1e-4, 60 s)"};
}

Outcome attention_laws() {
  std::size_t weight_vectors = 0, envelope_cells = 0;
  double worst_sum = 0.0, worst_neg = 0.0, worst_envelope = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    ModelConfig cfg;
    cfg.blocks = pick(1, 4);
    cfg.features = pick(3, 8);
    cfg.pool_width = pick(0, 1) ? 3 : 1;
    const std::size_t width = pick(2, 6), hq = pick(1, 8), hd = pick(1, 8);
    const MrnnModel model = MrnnModel::init(cfg, width, seed + 1000);
    const Array q = random_tokens(hq, width, rng), d = random_tokens(hd, width, rng);
    const PairScore s = forward_pair(model, q, d);

    auto check_columns = [&](const Array& w) {  // [N x h], one simplex per column
      for (std::size_t j = 0; j < w.extent(1); ++j) {
        double total = 0.0;
        for (std::size_t n = 0; n < w.extent(0); ++n) {
          worst_neg = std::min(worst_neg, w.at(n, j));
          total += w.at(n, j);
        }
        worst_sum = std::max(worst_sum, std::abs(total - 1.0));
        ++weight_vectors;
      }
    };
    check_columns(s.trace.mr_weights_query);
    check_columns(s.trace.mr_weights_doc);
    check_columns(transposed(s.trace.doc_aware));

    // Padded document: masked positions get exactly zero weight.
    std::vector<bool> mask(hd + 2, true);
    mask[hd] = mask[hd + 1] = false;
    Tape tape;
    const SoftmaxBlockVars enc = bind_softmax_block(tape, model.encoder, false);
    Array mra_d = encode_text(model, d, Side::document);
    Array padded(Shape{hd + 2, mra_d.extent(1)});
    std::copy(mra_d.data().begin(), mra_d.data().end(), padded.data().begin());
    for (std::size_t k = mra_d.size(); k < padded.size(); ++k) padded[k] = 5.0;
    const Array aw =
        doc_aware_encode(tape.constant(encode_text(model, q, Side::query)), tape.constant(padded), enc, mask)
            .weights.value();
    for (std::size_t i = 0; i < hq; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < hd + 2; ++j) {
        if (!mask[j] && aw.at(i, j) != 0.0) worst_sum = std::max(worst_sum, 1.0);
        worst_neg = std::min(worst_neg, aw.at(i, j));
        total += aw.at(i, j);
      }
      worst_sum = std::max(worst_sum, std::abs(total - 1.0));
      ++weight_vectors;
    }

    for (Side side : {Side::query, Side::document}) {
      const Array& text = side == Side::query ? q : d;
      const Array g = feature_map_tensor(text, model.blocks(side), cfg.pool_width);
      const Array mra = encode_text(model, text, side);
      const std::size_t h = text.extent(0), f = cfg.features;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < f; ++j) {
          double lo = g[i * f + j], hi = lo;
          for (std::size_t n = 1; n < cfg.blocks; ++n) {
            lo = std::min(lo, g[(n * h + i) * f + j]);
            hi = std::max(hi, g[(n * h + i) * f + j]);
          }
          const double v = mra.at(i, j);
          const double slack = 1e-12 * std::max(1.0, std::abs(v));
          worst_envelope = std::max({worst_envelope, lo - v - slack, v - hi - slack});
          ++envelope_cells;
        }
      }
    }
  }
  const bool ok = worst_neg >= 0.0 && worst_sum <= 1e-9 && worst_envelope <= 0.0;
  return {ok, std::to_string(weight_vectors) + " weight vectors, min weight " + fmt(worst_neg) + ", max |sum-1| " +
                  fmt(worst_sum) + "; " + std::to_string(envelope_cells) + " MRA cells inside block envelope" +
                  (worst_envelope > 0.0 ? " (violated by " + fmt(worst_envelope) + ")" : "")};
}

Outcome receptive_field() {
  std::size_t probes = 0, violations = 0, dead_edges = 0;
  for (std::size_t blocks = 1; blocks <= 4; ++blocks) {
    ModelConfig cfg;
    cfg.blocks = blocks;
    cfg.window = 3;
    cfg.features = 6;
    cfg.pool_width = 1;
    std::mt19937_64 rng(40 + blocks);
    auto params = init_blocks(cfg, 5, rng);
    for (auto& b : params) {  // non-trivial eval statistics
      for (double& v : b.norm.running_mean) v = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
      for (double& v : b.norm.running_var) v = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    }
    const std::size_t h = 12;
    const Array e = uniform({h, 5}, rng);
    const Array base = feature_map_tensor(e, params, 1);
    for (std::size_t j = 0; j < h; ++j) {
      Array p = e;
      for (std::size_t c = 0; c < 5; ++c) p.at(j, c) += 0.5;
      const Array g = feature_map_tensor(p, params, 1);
      for (std::size_t n = 0; n < blocks; ++n) {
        for (std::size_t i = 0; i < h; ++i) {
          bool changed = false;
          for (std::size_t c = 0; c < 6; ++c) changed |= g[(n * h + i) * 6 + c] != base[(n * h + i) * 6 + c];
          const std::size_t dist = i > j ? i - j : j - i;
          ++probes;
          if (dist > n && changed) ++violations;
          if (dist == n && !changed) ++dead_edges;
        }
      }
    }
  }
  return {violations == 0 && dead_edges == 0,
          std::to_string(probes) + " probes for N = 1..4, h = 12: " + std::to_string(violations) +
              " changes outside radius n-1, " + std::to_string(dead_edges) + " unchanged positions at radius n-1"};
}

Outcome dense_shapes() {
  bool ok = true;
  std::string detail;
  for (std::size_t blocks : {6u, 4u}) {
    const ModelConfig cfg = ModelConfig::full_scale(blocks);
    const std::size_t w = 2048;
    const auto shapes = block_kernel_shapes(cfg, w);
    ok = ok && shapes.size() == blocks && shapes[0] == Shape{1024, 1, w};
    for (std::size_t n = 2; n <= blocks; ++n) ok = ok && shapes[n - 1] == Shape{1024, 3, (n - 1) * 1024};
    detail += "N=" + std::to_string(blocks) + ": " + shape_string(shapes[0]) + " then " + shape_string(shapes[1]) +
              " .. " + shape_string(shapes.back()) + "; ";
  }
  return {ok, detail + "no parameters allocated"};
}

Outcome mining_oracle() {
  std::mt19937_64 rng(5);
  std::size_t agree = 0, skipped = 0;
  const std::size_t total = 1000;
  for (std::size_t q = 0; q < total; ++q) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 16)(rng);
    std::vector<ScoredCandidate> c;
    std::vector<std::size_t> ids(40);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = 0; i < n; ++i) {
      c.push_back({std::to_string(ids[i]), std::uniform_int_distribution<int>(0, 6)(rng) * 0.125,
                   std::bernoulli_distribution(0.35)(rng) ? 1 : 0});
    }
    // Brute force: a candidate wins if no same-label rival beats it.
    std::optional<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n; ++i) {
      bool wins = true;
      for (std::size_t j = 0; j < n && wins; ++j) {
        if (j == i || c[j].label != c[i].label) continue;
        const bool better = c[i].label ? c[j].dist > c[i].dist : c[j].dist < c[i].dist;
        const bool tie_first = c[j].dist == c[i].dist && std::stoul(c[j].doc_id) < std::stoul(c[i].doc_id);
        wins = !better && !tie_first;
      }
      if (wins) (c[i].label ? pos : neg) = i;
    }
    const auto t = mine_hard_triplets("q", c);
    if (!pos || !neg) {
      ++skipped;
      agree += t ? 0 : 1;
    } else {
      agree += t && t->positive == *pos && t->negative == *neg ? 1 : 0;
    }
  }
  return {agree == total, std::to_string(agree) + "/" + std::to_string(total) + " queries agree with the brute-force scan (" +
                              std::to_string(skipped) + " unminable pools)"};
}

Outcome metric_oracles() {
  std::mt19937_64 rng(6);
  std::vector<RankedList> lists;
  std::size_t mismatches = 0;
  std::vector<double> rr, ap;
  std::vector<std::vector<double>> hit(4);
  const std::vector<std::size_t> ks{1, 3, 5, 10};
  for (std::size_t q = 0; q < 1000; ++q) {
    RankedList l{"q" + std::to_string(q), {}};
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 20)(rng);
    for (std::size_t i = 0; i < n; ++i) {
      l.ranked.push_back({std::to_string(i), static_cast<double>(i), std::bernoulli_distribution(0.25)(rng) ? 1 : 0});
    }
    // Definitions over the raw label sequence.
    std::size_t first = 0, hits = 0;
    double precision_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!l.ranked[i].label) continue;
      if (!first) first = i + 1;
      ++hits;
      precision_sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
    const std::vector<RankedList> one{l};
    if (first) {
      rr.push_back(1.0 / static_cast<double>(first));
      ap.push_back(precision_sum / static_cast<double>(hits));
      for (std::size_t k = 0; k < ks.size(); ++k) hit[k].push_back(first <= ks[k] ? 1.0 : 0.0);
      mismatches += mrr(one).value != rr.back();
      mismatches += average_precision(l) != ap.back();
      for (std::size_t k = 0; k < ks.size(); ++k) mismatches += recall_at_k(one, ks[k]).value != hit[k].back();
    } else {
      mismatches += mrr(one).excluded != 1;
    }
    lists.push_back(std::move(l));
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  mismatches += mrr(lists).value != mean(rr);
  mismatches += map_metric(lists).value != mean(ap);
  for (std::size_t k = 0; k < ks.size(); ++k) mismatches += recall_at_k(lists, ks[k]).value != mean(hit[k]);

  auto ranks = [](std::size_t len, std::vector<std::size_t> rel) {
    RankedList l{"w", {}};
    for (std::size_t i = 1; i <= len; ++i)
      l.ranked.push_back({std::to_string(i), 0.0, std::count(rel.begin(), rel.end(), i) ? 1 : 0});
    return l;
  };
  const std::vector<RankedList> worked{ranks(5, {1}), ranks(5, {2}), ranks(5, {4})};
  const double m = mrr(worked).value, a = average_precision(ranks(4, {1, 3}));
  const bool worked_ok = std::abs(m - 0.58333333333333333) <= 1e-12 && std::abs(a - 0.83333333333333333) <= 1e-12;
  return {mismatches == 0 && worked_ok,
          std::to_string(mismatches) + " mismatches on 1000 instances (" + std::to_string(rr.size()) +
              " with a relevant doc); MRR{1,2,4} = " + std::to_string(m) + ", AP{1,3} = " + std::to_string(a)};
}

Outcome identity_collapse() {
  std::size_t cases = 0, nonzero_dist = 0, nonzero_grad = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    ModelConfig cfg;
    cfg.blocks = 1;
    cfg.features = 6;
    const MrnnModel model = MrnnModel::init(cfg, 4, seed + 50);
    const Array t = random_tokens(1, 4, rng);
    const std::size_t hq = 2 + seed % 4;
    Array q(Shape{hq, 4});
    for (std::size_t i = 0; i < hq; ++i)
      for (std::size_t j = 0; j < 4; ++j) q.at(i, j) = t.at(0, j);
    const Array negative = random_tokens(3, 4, rng);

    Tape tape;
    const BoundModel bound = bind_model(tape, model, true);
    const Var d_pos = forward_pair(tape, bound, model, q, t).dist;
    const Var d_neg = forward_pair(tape, bound, model, q, negative).dist;
    const double margin = 0.5 * d_neg.value().item();  // easier negative, margin satisfied
    ++cases;
    if (d_pos.value().item() != 0.0) ++nonzero_dist;
    if (!(margin > 0.0)) {
      ++nonzero_grad;
      continue;
    }
    tape.backward(triplet_loss(d_pos, d_neg, margin));
    for (const Var& p : bound.parameters) {
      const Array g = tape.grad(p);
      for (double v : g.data()) nonzero_grad += v != 0.0;
    }
  }
  return {nonzero_dist == 0 && nonzero_grad == 0,
          std::to_string(cases) + " cases: " + std::to_string(nonzero_dist) + " with dist != 0, " +
              std::to_string(nonzero_grad) + " nonzero loss-gradient entries"};
}

struct SyntheticRun {
  TrainResult result;
  double test_recall = 0.0;
  double seconds = 0.0;
};

ModelConfig synthetic_model() {
  ModelConfig cfg;
  cfg.blocks = 2;
  cfg.window = 3;
  cfg.features = 32;
  return cfg;
}

TrainingConfig synthetic_training() {
  TrainingConfig t;
  t.learning_rate = 1e-3;
  t.weight_decay = 1e-3;
  t.batch_size = 32;
  t.margin = 0.5;
  t.epochs = 10;
  t.patience = 10;
  t.seed = 7;
  return t;
}

SyntheticRun run_synthetic(const PreparedSplits& data) {
  SyntheticRun r;
  const auto t0 = Clock::now();
  r.result = train(data.train, data.valid, synthetic_model(), synthetic_training(), data.input_dim);
  r.test_recall = recall_at_k(rank_queries(r.result.checkpoint.model, data.test), 1).value;
  r.seconds = seconds_since(t0);
  return r;
}

Outcome synthetic_convergence(const PreparedSplits& data, const SyntheticRun& run) {
  const auto& log = run.result.log;
  bool decreasing = log.size() >= 5;
  std::string losses;
  for (std::size_t e = 0; e < std::min<std::size_t>(5, log.size()); ++e) {
    if (e > 0 && !(log[e].loss < log[e - 1].loss)) decreasing = false;
    losses += (e ? ", " : "") + fmt(log[e].loss);
  }
  const bool ok = decreasing && run.test_recall >= 0.9 && run.seconds <= 300.0;
  return {ok, std::to_string(data.train.size()) + " train / " + std::to_string(data.test.size()) +
                  " test queries; losses epochs 1-5: " + losses + (decreasing ? " (strictly decreasing)" : " (NOT decreasing)") +
                  "; test recall@1 " + fmt(run.test_recall) + " after " + std::to_string(log.size()) +
                  " epochs (need >= 0.9); " + fmt(run.seconds) + " s"};
}

Outcome determinism(const PreparedSplits& data, const SyntheticRun& first, const fs::path& dir) {
  const SyntheticRun second = run_synthetic(data);
  save_checkpoint(first.result.checkpoint, dir / "a.ckpt");
  save_checkpoint(second.result.checkpoint, dir / "b.ckpt");
  const std::string a = read_bytes(dir / "a.ckpt"), b = read_bytes(dir / "b.ckpt");
  save_checkpoint(load_checkpoint(dir / "a.ckpt"), dir / "c.ckpt");
  const std::string c = read_bytes(dir / "c.ckpt");
  return {!a.empty() && a == b && a == c, "two training runs " + std::string(a == b ? "byte-identical" : "DIFFER") +
                                              "; save/load/save " + (a == c ? "byte-identical" : "DIFFERS") + " (" +
                                              std::to_string(a.size()) + " bytes)"};
}

Outcome heatmap_export(const fs::path& dir) {
  ModelConfig cfg;
  cfg.blocks = 6;
  cfg.window = 3;
  cfg.features = 8;
  const MrnnModel model = MrnnModel::init(cfg, 5, 9);
  std::mt19937_64 rng(9);
  std::vector<std::string> qtok, dtok;
  for (int i = 0; i < 9; ++i) qtok.push_back("q" + std::to_string(i));
  for (int i = 0; i < 7; ++i) dtok.push_back("d" + std::to_string(i));
  const PairScore s = forward_pair(model, random_tokens(9, 5, rng), random_tokens(7, 5, rng));
  export_attention(s.trace, qtok, dtok, cfg, dir);

  auto load = [](const fs::path& p, std::size_t& header_cells) {
    std::ifstream is(p);
    std::string line;
    std::getline(is, line);
    header_cells = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    std::vector<std::vector<double>> rows;
    while (std::getline(is, line)) {
      std::istringstream ls(line);
      rows.emplace_back();
      for (std::string cell; std::getline(ls, cell, ',');) rows.back().push_back(std::stod(cell));
    }
    return rows;
  };
  std::size_t qcols = 0, dcols = 0;
  const auto mq = load(dir / "mr_weights_q.csv", qcols);
  const auto aw = load(dir / "doc_aware.csv", dcols);
  bool shape_ok = mq.size() == 6 && qcols == 9 && aw.size() == 9 && dcols == 7;
  for (const auto& r : mq) shape_ok = shape_ok && r.size() == 9;
  for (const auto& r : aw) shape_ok = shape_ok && r.size() == 7;
  if (!shape_ok) return {false, "unexpected CSV shape " + std::to_string(mq.size()) + "x" + std::to_string(qcols)};
  double worst = 0.0;
  for (std::size_t j = 0; j < 9; ++j) {
    double col = 0.0;
    for (std::size_t n = 0; n < 6; ++n) col += mq[n][j];
    worst = std::max(worst, std::abs(col - 1.0));
  }
  for (const auto& r : aw) {
    double row = 0.0;
    for (double v : r) row += v;
    worst = std::max(worst, std::abs(row - 1.0));
  }
  return {worst <= 1e-6, "mr_weights_q.csv 6x9, doc_aware.csv 9x7; max |sum-1| " + fmt(worst) + " (limit 1e-6)"};
}

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / ("mrnn_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  report("gradient suite", gradient_suite);
  report("attention laws", attention_laws);
  report("receptive field", receptive_field);
  report("dense connectivity shapes", dense_shapes);
  report("mining oracle", mining_oracle);
  report("metric oracles", metric_oracles);
  report("identity collapse", identity_collapse);

  std::optional<PreparedSplits> data;
  std::optional<SyntheticRun> run;
  try {
    data = prepare_synthetic(SyntheticTask{}, 32, synthetic_model());
    run = run_synthetic(*data);
  } catch (const std::exception& e) {
    std::cout << "synthetic training failed: " << e.what() << std::endl;
  }
  report("synthetic retrieval convergence", [&]() -> Outcome {
    if (!run) return {false, "training did not run"};
    return synthetic_convergence(*data, *run);
  });
  report("determinism", [&]() -> Outcome {
    if (!run) return {false, "training did not run"};
    return determinism(*data, *run, scratch);
  });
  report("heatmap export", [&] { return heatmap_export(scratch / "heatmap"); });

  std::error_code ec;
  fs::remove_all(scratch, ec);
  std::cout << (failures ? std::to_string(failures) + " criterion(s) failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
