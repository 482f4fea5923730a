#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrnn/embeddings.hpp"
#include "mrnn/error.hpp"

namespace mrnn {

struct Candidate {
  std::string doc_id;
  std::vector<std::string> tokens;
  int label = 0;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct Query {
  std::string query_id;
  std::string subset;  // train | valid | test
  std::vector<std::string> tokens;
  std::vector<Candidate> candidates;

  bool has_positive() const {
    return std::any_of(candidates.begin(), candidates.end(), [](const auto& c) { return c.label == 1; });
  }
  bool has_negative() const {
    return std::any_of(candidates.begin(), candidates.end(), [](const auto& c) { return c.label == 0; });
  }
  bool minable() const { return has_positive() && has_negative(); }

  friend bool operator==(const Query&, const Query&) = default;
};

/// Canonical JSON-lines dataset: one query per line with its candidate pool.
struct Dataset {
  std::vector<Query> queries;

  std::vector<const Query*> subset(const std::string& name) const {
    std::vector<const Query*> out;
    for (const auto& q : queries)
      if (name.empty() || q.subset == name) out.push_back(&q);
    return out;
  }

  /// Every text as (example id, tokens); documents shared across queries appear once.
  std::vector<TextRecord> texts() const {
    std::vector<TextRecord> out;
    std::set<std::string> seen;
    for (const auto& q : queries) {
      if (seen.insert(q.query_id).second) out.push_back({q.query_id, q.tokens});
      for (const auto& c : q.candidates)
        if (seen.insert(c.doc_id).second) out.push_back({c.doc_id, c.tokens});
    }
    return out;
  }

  void validate() const {
    std::set<std::string> ids;
    for (const auto& q : queries) {
      if (!ids.insert(q.query_id).second) throw DataError("duplicate query id '" + q.query_id + "'");
      if (q.tokens.empty()) throw DataError("query '" + q.query_id + "' has no tokens");
      std::set<std::string> docs;
      for (const auto& c : q.candidates) {
        if (!docs.insert(c.doc_id).second) {
          throw DataError("query '" + q.query_id + "' lists doc '" + c.doc_id + "' twice");
        }
        if (c.tokens.empty()) throw DataError("doc '" + c.doc_id + "' has no tokens");
        if (c.label != 0 && c.label != 1) throw DataError("doc '" + c.doc_id + "' has a non-binary label");
      }
    }
  }
};

inline nlohmann::json to_json(const Query& q) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : q.candidates) cands.push_back({{"doc_id", c.doc_id}, {"tokens", c.tokens}, {"label", c.label}});
  return {{"query_id", q.query_id}, {"subset", q.subset}, {"query", q.tokens}, {"candidates", cands}};
}

inline Query query_from_json(const nlohmann::json& j) {
  Query q;
  q.query_id = j.at("query_id").get<std::string>();
  q.subset = j.value("subset", std::string("train"));
  q.tokens = j.at("query").get<std::vector<std::string>>();
  for (const auto& c : j.at("candidates")) {
    q.candidates.push_back(
        {c.at("doc_id").get<std::string>(), c.at("tokens").get<std::vector<std::string>>(), c.at("label").get<int>()});
  }
  return q;
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read dataset " + path.string());
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      ds.queries.push_back(query_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  ds.validate();
  return ds;
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write dataset " + path.string());
  for (const auto& q : ds.queries) os << to_json(q).dump() << '\n';
}

/// Lower-cased whitespace tokenization with punctuation split off.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(cur);
    cur.clear();
  };
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      flush();
    } else if (std::ispunct(ch) && ch != '\'' && ch != '-') {
      flush();
      out.emplace_back(1, static_cast<char>(ch));
    } else {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  flush();
  return out;
}

struct IngestStats {
  std::size_t lines = 0;
  std::size_t queries_seen = 0;
  std::size_t dropped_no_positive = 0;
  std::size_t dropped_no_negative = 0;
  std::size_t queries_kept = 0;
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, '\t')) out.push_back(field);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

inline int parse_label(const std::string& s, const std::string& where) {
  if (s == "1") return 1;
  if (s == "0") return 0;
  throw DataError(where + ": label must be 0 or 1, got '" + s + "'");
}

// Drops queries that cannot form a triplet, in place, updating stats.
inline void filter_unusable(Dataset& ds, IngestStats& stats) {
  stats.queries_seen = ds.queries.size();
  std::vector<Query> kept;
  for (auto& q : ds.queries) {
    if (!q.has_positive()) {
      ++stats.dropped_no_positive;
    } else if (!q.has_negative()) {
      ++stats.dropped_no_negative;
    } else {
      kept.push_back(std::move(q));
    }
  }
  ds.queries = std::move(kept);
  stats.queries_kept = ds.queries.size();
}

}  // namespace detail

/// Converts a raw dataset file into the canonical form.
///
/// Formats: "jsonl" (canonical passthrough), "wikiqa" (the WikiQA TSV with
/// header QuestionID, Question, DocumentID, DocumentTitle, SentenceID,
/// Sentence, Label) and "trecqa" (header-less TSV: question id, question,
/// answer sentence, label). Queries with no positive or no negative
/// candidate are dropped and counted.
inline Dataset ingest(const std::filesystem::path& path, const std::string& format, const std::string& subset,
                      IngestStats* stats_out = nullptr) {
  IngestStats stats;
  Dataset ds;
  if (format == "jsonl") {
    ds = read_dataset(path);
    std::ifstream is(path);
    std::string line;
    while (std::getline(is, line)) ++stats.lines;
    if (!subset.empty()) {
      for (auto& q : ds.queries) q.subset = subset;
    }
  } else if (format == "wikiqa" || format == "trecqa") {
    std::ifstream is(path);
    if (!is) throw DataError("cannot read " + path.string());
    const bool wikiqa = format == "wikiqa";
    std::map<std::string, std::size_t> index;
    std::string line;
    while (std::getline(is, line)) {
      ++stats.lines;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const std::string where = path.string() + ":" + std::to_string(stats.lines);
      const auto f = detail::split_tabs(line);
      if (wikiqa && stats.lines == 1 && !f.empty() && f[0] == "QuestionID") continue;
      const std::size_t need = wikiqa ? 7 : 4;
      if (f.size() != need) {
        throw DataError(where + ": expected " + std::to_string(need) + " tab-separated fields, got " +
                        std::to_string(f.size()));
      }
      const std::string qid = f[0];
      const std::string question = f[1];
      const std::string sentence = wikiqa ? f[5] : f[2];
      const int label = detail::parse_label(wikiqa ? f[6] : f[3], where);
      auto [it, inserted] = index.emplace(qid, ds.queries.size());
      if (inserted) ds.queries.push_back({qid, subset.empty() ? "train" : subset, tokenize(question), {}});
      Query& q = ds.queries[it->second];
      const std::string doc_id = wikiqa ? f[4] : qid + "-" + std::to_string(q.candidates.size());
      auto tokens = tokenize(sentence);
      if (tokens.empty() || q.tokens.empty()) throw DataError(where + ": empty question or sentence");
      q.candidates.push_back({doc_id, std::move(tokens), label});
    }
    ds.validate();
  } else {
    throw ConfigError("unknown dataset format '" + format + "' (expected jsonl, wikiqa or trecqa)");
  }
  detail::filter_unusable(ds, stats);
  if (stats_out) *stats_out = stats;
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic retrieval task
// ---------------------------------------------------------------------------

/// Seeded toy task: each query embeds a key phrase that its single positive
/// document repeats; distractors reuse some of the query's filler words.
struct SyntheticTask {
  std::size_t train = 200;
  std::size_t valid = 50;
  std::size_t test = 50;
  std::size_t distractors = 7;
  std::size_t vocabulary = 400;
  std::size_t key_length = 3;
  std::size_t query_fillers = 3;
  std::size_t doc_length = 10;
  std::uint64_t seed = 13;
};

inline Dataset make_synthetic_dataset(const SyntheticTask& task) {
  if (task.key_length + 1 > task.doc_length) throw ConfigError("synthetic: doc_length too short for key phrase");
  std::mt19937_64 rng(task.seed);
  std::uniform_int_distribution<std::size_t> word(0, task.vocabulary - 1);
  auto token = [&] { return "w" + std::to_string(word(rng)); };
  auto pad = [](std::size_t n, int width) {
    std::string s = std::to_string(n);
    return std::string(width - std::min<int>(width, static_cast<int>(s.size())), '0') + s;
  };

  Dataset ds;
  const std::size_t total = task.train + task.valid + task.test;
  for (std::size_t qi = 0; qi < total; ++qi) {
    Query q;
    q.query_id = "q" + pad(qi, 4);
    q.subset = qi < task.train ? "train" : (qi < task.train + task.valid ? "valid" : "test");
    std::vector<std::string> key, fillers;
    for (std::size_t k = 0; k < task.key_length; ++k) key.push_back(token());
    for (std::size_t k = 0; k < task.query_fillers; ++k) fillers.push_back(token());
    const std::size_t key_at = std::uniform_int_distribution<std::size_t>(0, fillers.size())(rng);
    q.tokens = fillers;
    q.tokens.insert(q.tokens.begin() + static_cast<long>(key_at), key.begin(), key.end());

    const std::size_t positive_slot = std::uniform_int_distribution<std::size_t>(0, task.distractors)(rng);
    for (std::size_t d = 0; d <= task.distractors; ++d) {
      Candidate c;
      c.doc_id = q.query_id + "-d" + std::to_string(d);
      for (std::size_t t = 0; t < task.doc_length; ++t) c.tokens.push_back(token());
      if (d == positive_slot) {
        c.label = 1;
        const std::size_t at =
            std::uniform_int_distribution<std::size_t>(0, task.doc_length - task.key_length)(rng);
        std::copy(key.begin(), key.end(), c.tokens.begin() + static_cast<long>(at));
      } else if (!fillers.empty()) {
        const std::size_t at = std::uniform_int_distribution<std::size_t>(0, task.doc_length - 1)(rng);
        c.tokens[at] = fillers[std::uniform_int_distribution<std::size_t>(0, fillers.size() - 1)(rng)];
      }
      q.candidates.push_back(std::move(c));
    }
    ds.queries.push_back(std::move(q));
  }
  return ds;
}

}  // namespace mrnn
