#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mrnn/checkpoint.hpp"
#include "mrnn/evalrank.hpp"
#include "mrnn/parallel.hpp"

namespace mrnn {

struct TrainingConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-3;
  std::size_t batch_size = 32;
  double margin = 0.5;
  std::size_t epochs = 10;
  std::size_t patience = 3;
  std::uint64_t seed = 7;
  bool square_distance = false;
  bool decoupled_weight_decay = false;
  bool mine_per_step = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("training: learning_rate must be > 0");
    if (weight_decay < 0.0) throw ConfigError("training: weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
    if (!(margin > 0.0)) throw ConfigError("training: margin must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("training: betas must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw ConfigError("training: epsilon must be > 0");
  }

  AdamHypers adam() const {
    return {learning_rate, beta1, beta2, epsilon, weight_decay, decoupled_weight_decay};
  }

  /// ADAM, lr 1e-4, weight decay 1e-3, batch 512.
  static TrainingConfig full_scale() {
    TrainingConfig c;
    c.learning_rate = 1e-4;
    c.weight_decay = 1e-3;
    c.batch_size = 512;
    c.margin = 0.5;
    return c;
  }
};

inline nlohmann::json to_json(const TrainingConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"margin", c.margin},
          {"epochs", c.epochs},
          {"patience", c.patience},
          {"seed", c.seed},
          {"square_distance", c.square_distance},
          {"decoupled_weight_decay", c.decoupled_weight_decay},
          {"mine_per_step", c.mine_per_step},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon}};
}

/// Per-dataset triplet margins: SQuAD 1, QUASAR-T 0.8, WikiQA and TrecQA 0.5.
inline std::optional<double> default_margin(std::string_view dataset) {
  if (dataset == "squad") return 1.0;
  if (dataset == "quasar-t") return 0.8;
  if (dataset == "wikiqa" || dataset == "trecqa") return 0.5;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Mining and loss
// ---------------------------------------------------------------------------

struct Triplet {
  std::string query_id;
  std::size_t positive = 0;  // candidate index
  std::size_t negative = 0;
  std::string positive_id;
  std::string negative_id;
  double d_pos = 0.0;
  double d_neg = 0.0;
};

/// Hard mining over one query's labeled pool: the farthest positive and the
/// nearest negative under the current distances, ties to the smaller doc id.
/// Returns nothing when the pool lacks a positive or a negative.
inline std::optional<Triplet> mine_hard_triplets(const std::string& query_id,
                                                 std::span<const ScoredCandidate> candidates) {
  std::optional<std::size_t> pos, neg;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    if (c.label != 0) {
      if (!pos || c.dist > candidates[*pos].dist ||
          (c.dist == candidates[*pos].dist && doc_id_less(c.doc_id, candidates[*pos].doc_id))) {
        pos = i;
      }
    } else {
      if (!neg || c.dist < candidates[*neg].dist ||
          (c.dist == candidates[*neg].dist && doc_id_less(c.doc_id, candidates[*neg].doc_id))) {
        neg = i;
      }
    }
  }
  if (!pos || !neg) return std::nullopt;
  return Triplet{query_id,
                 *pos,
                 *neg,
                 candidates[*pos].doc_id,
                 candidates[*neg].doc_id,
                 candidates[*pos].dist,
                 candidates[*neg].dist};
}

/// max(0, d_pos - d_neg + m)
inline double triplet_loss(double d_pos, double d_neg, double margin) {
  if (!(margin > 0.0)) throw ConfigError("triplet_loss: margin must be > 0");
  return std::max(0.0, d_pos - d_neg + margin);
}

inline Var triplet_loss(Var d_pos, Var d_neg, double margin) {
  if (!(margin > 0.0)) throw ConfigError("triplet_loss: margin must be > 0");
  return relu(add_scalar(sub(d_pos, d_neg), margin));
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// A query and its candidate pool with every text already embedded.
struct PreparedQuery {
  std::string id;
  Array query;
  std::vector<CandidateText> candidates;

  bool minable() const {
    bool p = false, n = false;
    for (const auto& c : candidates) (c.label ? p : n) = true;
    return p && n;
  }
};

/// Eval-mode distances for every (query, candidate) pair. Queries are
/// scored in parallel; the output order matches the input.
inline std::vector<std::vector<ScoredCandidate>> score_queries(const MrnnModel& model,
                                                               std::span<const PreparedQuery> queries) {
  std::vector<std::vector<ScoredCandidate>> out(queries.size());
  parallel_for(queries.size(), [&](std::size_t i) {
    const auto& q = queries[i];
    const Array mra_q = encode_text(model, q.query, Side::query);
    for (const auto& c : q.candidates) {
      out[i].push_back(
          {c.doc_id, pair_distance(model, mra_q, encode_text(model, c.embedded, Side::document)), c.label});
    }
  });
  return out;
}

inline std::vector<RankedList> rank_queries(const MrnnModel& model, std::span<const PreparedQuery> queries) {
  auto scored = score_queries(model, queries);
  std::vector<RankedList> lists;
  for (std::size_t i = 0; i < queries.size(); ++i) lists.push_back(rank_scored(queries[i].id, std::move(scored[i])));
  return lists;
}

/// Mean hinge loss over a batch of triplets. All texts of the batch pass the
/// n-gram stack together in train mode, so batch-norm statistics span the
/// whole batch and the running statistics are updated once.
inline Var batch_triplet_loss(Tape& tape, const BoundModel& bound, MrnnModel& model,
                              std::span<const PreparedQuery* const> queries, std::span<const Triplet> triplets,
                              const TrainingConfig& config) {
  const std::size_t b = triplets.size();
  if (b == 0 || queries.size() != b) throw UsageError("batch_triplet_loss: empty or mismatched batch");
  std::vector<const Array*> query_texts, doc_texts;
  for (std::size_t i = 0; i < b; ++i) {
    query_texts.push_back(&queries[i]->query);
    doc_texts.push_back(&queries[i]->candidates.at(triplets[i].positive).embedded);
    doc_texts.push_back(&queries[i]->candidates.at(triplets[i].negative).embedded);
  }
  const std::size_t pool = model.config.pool_width;
  std::vector<Var> qmaps, dmaps;
  if (model.tied()) {
    std::vector<const Array*> all = query_texts;
    all.insert(all.end(), doc_texts.begin(), doc_texts.end());
    auto maps = encode_maps(tape, bound.query_blocks, norm_pointers(model.query_blocks), pool, all, Mode::train);
    qmaps.assign(maps.begin(), maps.begin() + static_cast<long>(b));
    dmaps.assign(maps.begin() + static_cast<long>(b), maps.end());
  } else {
    qmaps = encode_maps(tape, bound.query_blocks, norm_pointers(model.query_blocks), pool, query_texts, Mode::train);
    dmaps = encode_maps(tape, bound.doc_blocks, norm_pointers(model.doc_blocks), pool, doc_texts, Mode::train);
  }
  std::vector<Var> losses;
  for (std::size_t i = 0; i < b; ++i) {
    Var d_pos = score_maps(bound, qmaps[i], dmaps[2 * i]).dist;
    Var d_neg = score_maps(bound, qmaps[i], dmaps[2 * i + 1]).dist;
    if (config.square_distance) {
      d_pos = square(d_pos);
      d_neg = square(d_neg);
    }
    losses.push_back(reshape(triplet_loss(d_pos, d_neg, config.margin), {1}));
  }
  return scale(sum(concat_channels(losses)), 1.0 / static_cast<double>(b));
}

/// Re-estimates every running statistic from one train-mode pass over all
/// query and candidate texts, so eval-mode scoring sees population
/// statistics of the current weights instead of a lagging average.
inline void calibrate_norms(MrnnModel& model, std::span<const PreparedQuery> queries) {
  std::vector<const Array*> query_texts, doc_texts;
  for (const auto& q : queries) {
    query_texts.push_back(&q.query);
    for (const auto& c : q.candidates) doc_texts.push_back(&c.embedded);
  }
  auto run = [&](Side side, const std::vector<const Array*>& texts) {
    if (texts.empty()) return;
    BlockParams& blocks = model.blocks(side);
    for (auto& b : blocks) {
      b.norm.running_mean.clear();
      b.norm.running_var.clear();
    }
    Tape tape;
    const BoundModel bound = bind_model(tape, model, false);
    encode_maps(tape, bound.blocks(side), norm_pointers(blocks), model.config.pool_width, texts, Mode::train);
  };
  if (model.tied()) {
    std::vector<const Array*> all = query_texts;
    all.insert(all.end(), doc_texts.begin(), doc_texts.end());
    run(Side::query, all);
  } else {
    run(Side::query, query_texts);
    run(Side::document, doc_texts);
  }
}

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double recall_at_1 = 0.0;
  double seconds = 0.0;
  std::size_t triplets = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
  std::size_t skipped_queries = 0;
  bool stopped_early = false;
};

inline std::string rng_state_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

/// Epochs of: score candidates -> mine -> batch triplets -> loss ->
/// backward -> ADAM. Validation recall@1 is measured after every epoch and
/// training stops after `patience` epochs without improvement.
inline TrainResult train(std::span<const PreparedQuery> train_set, std::span<const PreparedQuery> valid_set,
                         const ModelConfig& model_config, const TrainingConfig& config, std::size_t input_dim,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  config.validate();
  model_config.validate();
  std::vector<std::size_t> minable;
  for (std::size_t i = 0; i < train_set.size(); ++i)
    if (train_set[i].minable()) minable.push_back(i);
  if (minable.empty()) throw DomainError("train: no query has both a positive and a negative candidate");

  TrainResult result;
  result.skipped_queries = train_set.size() - minable.size();
  Checkpoint& ck = result.checkpoint;
  ck.model = MrnnModel::init(model_config, input_dim, config.seed);
  ck.optimizer = fresh_optimizer(ck.model, config.adam());
  ck.seed = config.seed;
  std::mt19937_64 rng(config.seed ^ 0x5DEECE66DULL);

  // Running statistics start from the data rather than from identity.
  calibrate_norms(ck.model, train_set);
  double best_recall = -1.0;
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = minable;
    std::shuffle(order.begin(), order.end(), rng);

    auto mine = [&](std::span<const std::size_t> indices) {
      std::vector<PreparedQuery> subset;
      for (std::size_t i : indices) subset.push_back(train_set[i]);
      const auto scored = score_queries(ck.model, subset);
      std::vector<Triplet> out;
      for (std::size_t k = 0; k < indices.size(); ++k) {
        out.push_back(*mine_hard_triplets(subset[k].id, scored[k]));
      }
      return out;
    };

    std::vector<Triplet> mined;
    if (!config.mine_per_step) mined = mine(order);

    double loss_total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      std::vector<Triplet> triplets =
          config.mine_per_step ? mine(idx) : std::vector<Triplet>(mined.begin() + static_cast<long>(begin),
                                                                  mined.begin() + static_cast<long>(end));
      std::vector<const PreparedQuery*> batch;
      for (std::size_t i : idx) batch.push_back(&train_set[i]);

      Tape tape;
      const BoundModel bound = bind_model(tape, ck.model, true);
      const Var loss = batch_triplet_loss(tape, bound, ck.model, batch, triplets, config);
      tape.backward(loss);
      loss_total += loss.value().item() * static_cast<double>(idx.size());

      std::vector<Array> grads;
      for (const Var& p : bound.parameters) grads.push_back(tape.grad(p));
      std::vector<Array*> params;
      ck.model.visit_parameters([&](const std::string&, Array& a) { params.push_back(&a); });
      adam_step(params, grads, ck.optimizer);
    }

    EpochLog row;
    row.epoch = epoch;
    row.triplets = order.size();
    row.loss = loss_total / static_cast<double>(order.size());
    if (!valid_set.empty()) {
      const auto lists = rank_queries(ck.model, valid_set);
      row.recall_at_1 = recall_at_k(lists, 1).value;
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(row);
    ck.epoch = epoch;
    if (on_epoch) on_epoch(row);

    if (!valid_set.empty()) {
      if (row.recall_at_1 > best_recall) {
        best_recall = row.recall_at_1;
        stale = 0;
      } else if (++stale >= config.patience && config.patience > 0) {
        result.stopped_early = true;
        break;
      }
    }
  }
  ck.rng_state = rng_state_string(rng);
  return result;
}

}  // namespace mrnn
