#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrnn/model.hpp"

namespace mrnn {

/// Doc-id order used for ties: numeric when both ids are all digits,
/// otherwise lexicographic.
inline bool doc_id_less(const std::string& a, const std::string& b) {
  auto numeric = [](const std::string& s) {
    return !s.empty() && s.find_first_not_of("0123456789") == std::string::npos;
  };
  if (numeric(a) && numeric(b)) {
    const auto ta = a.find_first_not_of('0'), tb = b.find_first_not_of('0');
    const std::string ca = ta == std::string::npos ? "" : a.substr(ta);
    const std::string cb = tb == std::string::npos ? "" : b.substr(tb);
    if (ca.size() != cb.size()) return ca.size() < cb.size();
    if (ca != cb) return ca < cb;
  }
  return a < b;
}

struct ScoredCandidate {
  std::string doc_id;
  double dist = 0.0;
  int label = 0;
};

/// Candidates of one query ordered by ascending distance, ties by doc id.
struct RankedList {
  std::string query_id;
  std::vector<ScoredCandidate> ranked;

  bool has_relevant() const {
    return std::any_of(ranked.begin(), ranked.end(), [](const auto& c) { return c.label != 0; });
  }

  /// 1-based ranks of every relevant candidate.
  std::vector<std::size_t> relevant_ranks() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ranked.size(); ++i)
      if (ranked[i].label != 0) out.push_back(i + 1);
    return out;
  }

  std::optional<std::size_t> first_relevant_rank() const {
    for (std::size_t i = 0; i < ranked.size(); ++i)
      if (ranked[i].label != 0) return i + 1;
    return std::nullopt;
  }
};

inline RankedList rank_scored(std::string query_id, std::vector<ScoredCandidate> candidates) {
  if (candidates.empty()) throw DomainError("rank: query '" + query_id + "' has no candidates");
  std::sort(candidates.begin(), candidates.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return doc_id_less(a.doc_id, b.doc_id);
  });
  return {std::move(query_id), std::move(candidates)};
}

struct CandidateText {
  std::string doc_id;
  Array embedded;
  int label = 0;
};

/// Scores every candidate with the model and ranks them.
inline RankedList rank_candidates(const MrnnModel& model, const std::string& query_id, const Array& query,
                                  const std::vector<CandidateText>& candidates) {
  if (candidates.empty()) throw DomainError("rank_candidates: query '" + query_id + "' has no candidates");
  const Array mra_q = encode_text(model, query, Side::query);
  std::vector<ScoredCandidate> scored;
  for (const auto& c : candidates) {
    scored.push_back({c.doc_id, pair_distance(model, mra_q, encode_text(model, c.embedded, Side::document)), c.label});
  }
  return rank_scored(query_id, std::move(scored));
}

/// A metric value averaged over the queries that have at least one relevant
/// candidate; the others are counted in `excluded`.
struct MetricResult {
  double value = 0.0;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;
};

namespace detail {

template <class PerQuery>
MetricResult average_over_relevant(std::span<const RankedList> lists, PerQuery per_query) {
  MetricResult r;
  double total = 0.0;
  for (const auto& l : lists) {
    if (!l.has_relevant()) {
      ++r.excluded;
      continue;
    }
    total += per_query(l);
    ++r.evaluated;
  }
  r.value = r.evaluated ? total / static_cast<double>(r.evaluated) : 0.0;
  return r;
}

}  // namespace detail

/// Fraction of queries with a relevant candidate in the top k.
inline MetricResult recall_at_k(std::span<const RankedList> lists, std::size_t k) {
  if (k < 1) throw ConfigError("recall_at_k: k must be >= 1");
  return detail::average_over_relevant(lists, [k](const RankedList& l) {
    return *l.first_relevant_rank() <= k ? 1.0 : 0.0;
  });
}

inline MetricResult mrr(std::span<const RankedList> lists) {
  return detail::average_over_relevant(
      lists, [](const RankedList& l) { return 1.0 / static_cast<double>(*l.first_relevant_rank()); });
}

inline double average_precision(const RankedList& list) {
  const auto ranks = list.relevant_ranks();
  if (ranks.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    total += static_cast<double>(i + 1) / static_cast<double>(ranks[i]);
  }
  return total / static_cast<double>(ranks.size());
}

inline MetricResult map_metric(std::span<const RankedList> lists) {
  return detail::average_over_relevant(lists, average_precision);
}

/// JSON evaluation report: metric values, per-query ranks, exclusions.
inline nlohmann::json evaluation_report(std::span<const RankedList> lists,
                                        const std::vector<std::size_t>& ks = {1, 3, 5, 10}) {
  nlohmann::json metrics = nlohmann::json::object();
  for (std::size_t k : ks) metrics["recall@" + std::to_string(k)] = recall_at_k(lists, k).value;
  const MetricResult m = mrr(lists);
  metrics["mrr"] = m.value;
  metrics["map"] = map_metric(lists).value;
  nlohmann::json per_query = nlohmann::json::array();
  for (const auto& l : lists) {
    nlohmann::json q{{"query_id", l.query_id}, {"relevant_ranks", l.relevant_ranks()}};
    if (auto r = l.first_relevant_rank()) {
      q["first_relevant_rank"] = *r;
    } else {
      q["first_relevant_rank"] = nullptr;
    }
    per_query.push_back(std::move(q));
  }
  return {{"metrics", metrics},
          {"queries", lists.size()},
          {"evaluated", m.evaluated},
          {"excluded", m.excluded},
          {"per_query", per_query}};
}

}  // namespace mrnn
