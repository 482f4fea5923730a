#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrnn/diffcore/array.hpp"

namespace mrnn {

// ---------------------------------------------------------------------------
// IDF
// ---------------------------------------------------------------------------

/// Smoothed inverse document frequency: idf(t) = ln((1 + |D|) / (1 + df(t))) + 1.
class IdfTable {
 public:
  IdfTable() = default;
  IdfTable(std::size_t document_count, std::map<std::string, double> weights)
      : documents_(document_count), weights_(std::move(weights)) {}

  static double formula(std::size_t documents, std::size_t df) {
    return std::log((1.0 + static_cast<double>(documents)) / (1.0 + static_cast<double>(df))) + 1.0;
  }

  /// Weight of a token; tokens never seen take the df = 0 value.
  double weight(const std::string& token) const {
    const auto it = weights_.find(token);
    return it != weights_.end() ? it->second : formula(documents_, 0);
  }

  std::size_t document_count() const noexcept { return documents_; }
  const std::map<std::string, double>& weights() const noexcept { return weights_; }

  /// Text format: a "# documents N" header, then "token idf" lines.
  void save(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write idf table " + path.string());
    os << "# documents " << documents_ << '\n';
    os.precision(17);
    for (const auto& [token, w] : weights_) os << token << ' ' << w << '\n';
  }

  static IdfTable load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot read idf table " + path.string());
    std::size_t documents = 0;
    std::map<std::string, double> weights;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      if (line[0] == '#') {
        std::string hash, key;
        ls >> hash >> key;
        if (key == "documents") ls >> documents;
        continue;
      }
      std::string token;
      double w = 0.0;
      if (!(ls >> token >> w) || w < 0.0) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed idf line");
      }
      weights[token] = w;
    }
    return IdfTable(documents, std::move(weights));
  }

 private:
  std::size_t documents_ = 0;
  std::map<std::string, double> weights_;
};

/// df counts each document at most once per token.
inline IdfTable compute_idf(const std::vector<std::vector<std::string>>& corpus) {
  if (corpus.empty()) throw DomainError("compute_idf: empty corpus");
  std::map<std::string, std::size_t> df;
  for (const auto& doc : corpus) {
    const std::set<std::string> unique(doc.begin(), doc.end());
    for (const auto& t : unique) ++df[t];
  }
  std::map<std::string, double> weights;
  for (const auto& [token, count] : df) weights[token] = IdfTable::formula(corpus.size(), count);
  return IdfTable(corpus.size(), std::move(weights));
}

// ---------------------------------------------------------------------------
// Mixture / ensemble
// ---------------------------------------------------------------------------

enum class CombineOp { sum, concat };

inline CombineOp parse_combine_op(const std::string& s) {
  if (s == "sum") return CombineOp::sum;
  if (s == "concat") return CombineOp::concat;
  throw ConfigError("unknown combine op '" + s + "' (expected sum or concat)");
}

inline std::string to_string(CombineOp op) { return op == CombineOp::sum ? "sum" : "concat"; }

/// How one source's per-layer vectors collapse into a token vector.
struct SourceSpec {
  std::string name;
  std::vector<double> layer_weights;  // m
  bool idf = false;
  CombineOp op = CombineOp::sum;
};

/// Full input-assembly configuration: per-source mixtures and their ensemble.
struct MixtureSpec {
  std::vector<SourceSpec> sources;
  std::vector<double> ensemble_weights;  // u
  CombineOp ensemble_op = CombineOp::concat;

  void validate() const {
    if (sources.empty()) throw ConfigError("embedding: at least one source is required");
    if (ensemble_weights.size() != sources.size()) {
      throw ConfigError("embedding: " + std::to_string(ensemble_weights.size()) + " ensemble weights for " +
                        std::to_string(sources.size()) + " sources");
    }
    for (const auto& s : sources) {
      if (s.layer_weights.empty()) throw ConfigError("embedding: source '" + s.name + "' has no layer weights");
    }
  }
};

/// Collapses L layer vectors of one token. Sum mode: sum_i m_i layer_i.
/// Concat mode: concatenation of m_i layer_i over layers with m_i != 0.
/// The result is scaled by idf_weight when the source's idf flag is set.
inline std::vector<double> mixture(const std::vector<std::vector<double>>& layers, const SourceSpec& spec,
                                   double idf_weight) {
  const auto& m = spec.layer_weights;
  if (m.size() != layers.size()) {
    throw ShapeError("mixture: " + std::to_string(m.size()) + " layer weights for " +
                     std::to_string(layers.size()) + " layers");
  }
  const double factor = spec.idf ? idf_weight : 1.0;
  std::vector<double> out;
  if (spec.op == CombineOp::sum) {
    const std::size_t d = layers.empty() ? 0 : layers.front().size();
    out.assign(d, 0.0);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].size() != d) throw ShapeError("mixture: sum mode needs equal layer dimensions");
      for (std::size_t j = 0; j < d; ++j) out[j] += m[l] * layers[l][j];
    }
  } else {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (m[l] == 0.0) continue;
      for (double v : layers[l]) out.push_back(m[l] * v);
    }
  }
  for (double& v : out) v *= factor;
  return out;
}

inline std::vector<double> ensemble(const std::vector<std::vector<double>>& parts, const std::vector<double>& u,
                                    CombineOp op) {
  if (parts.size() != u.size()) {
    throw ShapeError("ensemble: " + std::to_string(u.size()) + " weights for " + std::to_string(parts.size()) +
                     " parts");
  }
  std::vector<double> out;
  if (op == CombineOp::concat) {
    for (std::size_t k = 0; k < parts.size(); ++k)
      for (double v : parts[k]) out.push_back(u[k] * v);
  } else {
    const std::size_t d = parts.empty() ? 0 : parts.front().size();
    out.assign(d, 0.0);
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (parts[k].size() != d) throw ShapeError("ensemble: sum mode needs equal part dimensions");
      for (std::size_t j = 0; j < d; ++j) out[j] += u[k] * parts[k][j];
    }
  }
  return out;
}

/// Width of one source's mixed vector given its per-layer dimension.
inline std::size_t mixture_dim(const SourceSpec& spec, std::size_t layer_dim) {
  if (spec.op == CombineOp::sum) return layer_dim;
  std::size_t kept = 0;
  for (double w : spec.layer_weights) kept += w != 0.0 ? 1 : 0;
  return kept * layer_dim;
}

// ---------------------------------------------------------------------------
// Sources
// ---------------------------------------------------------------------------

struct BundleMeta {
  std::string source;
  std::size_t layers = 0;
  std::size_t dim = 0;
  std::string tokenizer;
  bool synthetic = false;
  std::string checkpoint;

  nlohmann::json to_json() const {
    nlohmann::json j{{"source", source},       {"layers", layers},       {"dims", dim},
                     {"tokenizer", tokenizer}, {"synthetic", synthetic}};
    if (!checkpoint.empty()) j["checkpoint"] = checkpoint;
    return j;
  }

  static BundleMeta from_json(const nlohmann::json& j) {
    BundleMeta m;
    try {
      m.source = j.at("source").get<std::string>();
      m.layers = j.at("layers").get<std::size_t>();
      m.dim = j.at("dims").get<std::size_t>();
      m.tokenizer = j.value("tokenizer", std::string{});
      m.synthetic = j.value("synthetic", false);
      m.checkpoint = j.value("checkpoint", std::string{});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("bundle meta: ") + e.what());
    }
    if (m.layers == 0 || m.dim == 0) throw DataError("bundle meta: layers and dims must be positive");
    return m;
  }
};

/// Per-(example, position) layer vectors produced offline. Contextual sources
/// give identical strings different vectors, so lookups are positional.
class EmbeddingBundle {
 public:
  using Layers = std::vector<std::vector<double>>;

  EmbeddingBundle() = default;
  explicit EmbeddingBundle(BundleMeta meta) : meta_(std::move(meta)) {}

  const BundleMeta& meta() const noexcept { return meta_; }
  std::size_t size() const noexcept { return records_.size(); }

  void add(const std::string& example_id, std::size_t position, Layers layers) {
    if (layers.size() != meta_.layers) {
      throw DataError("bundle record (" + example_id + ", " + std::to_string(position) + ") has " +
                      std::to_string(layers.size()) + " layers, expected " + std::to_string(meta_.layers));
    }
    for (const auto& l : layers) {
      if (l.size() != meta_.dim) {
        throw DataError("bundle record (" + example_id + ", " + std::to_string(position) +
                        ") has a layer of width " + std::to_string(l.size()));
      }
    }
    records_[{example_id, position}] = std::move(layers);
  }

  const Layers& lookup(const std::string& example_id, std::size_t position) const {
    const auto it = records_.find({example_id, position});
    if (it == records_.end()) {
      throw DataError("missing bundle record (" + example_id + ", " + std::to_string(position) + ") in source '" +
                      meta_.source + "'");
    }
    return it->second;
  }

  bool contains(const std::string& example_id, std::size_t position) const {
    return records_.count({example_id, position}) != 0;
  }

  /// Writes meta.json and records.jsonl into `dir` (created if needed).
  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    {
      std::ofstream os(dir / "meta.json");
      if (!os) throw DataError("cannot write " + (dir / "meta.json").string());
      os << meta_.to_json().dump(2) << '\n';
    }
    std::ofstream os(dir / "records.jsonl");
    if (!os) throw DataError("cannot write " + (dir / "records.jsonl").string());
    for (const auto& [key, layers] : records_) {
      nlohmann::json j{{"example_id", key.first}, {"position", key.second}, {"layers", layers}};
      os << j.dump() << '\n';
    }
  }

  static EmbeddingBundle load(const std::filesystem::path& dir) {
    std::ifstream ms(dir / "meta.json");
    if (!ms) throw DataError("bundle " + dir.string() + " has no meta.json");
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(ms);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("bundle meta.json: " + std::string(e.what()));
    }
    EmbeddingBundle bundle(BundleMeta::from_json(meta));
    std::ifstream rs(dir / "records.jsonl");
    if (!rs) throw DataError("bundle " + dir.string() + " has no records.jsonl");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(rs, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        bundle.add(j.at("example_id").get<std::string>(), j.at("position").get<std::size_t>(),
                   j.at("layers").get<Layers>());
      } catch (const nlohmann::json::exception& e) {
        throw DataError("records.jsonl:" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return bundle;
  }

 private:
  BundleMeta meta_;
  std::map<std::pair<std::string, std::size_t>, Layers> records_;
};

/// Token-string lookup table with one vector per token and an
/// out-of-vocabulary fallback (the "<unk>" row when present, else zeros).
class StaticTable {
 public:
  StaticTable() = default;
  StaticTable(std::unordered_map<std::string, std::vector<double>> vectors, std::vector<double> fallback)
      : vectors_(std::move(vectors)), fallback_(std::move(fallback)) {
    for (const auto& [t, v] : vectors_) {
      if (v.size() != fallback_.size()) throw DataError("static table: token '" + t + "' has a different width");
    }
  }

  std::size_t dim() const noexcept { return fallback_.size(); }
  std::size_t size() const noexcept { return vectors_.size(); }

  const std::vector<double>& lookup(const std::string& token) const {
    const auto it = vectors_.find(token);
    return it != vectors_.end() ? it->second : fallback_;
  }

  /// "token v1 ... vd" lines; a leading "count dim" header line is skipped.
  static StaticTable load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot read static table " + path.string());
    std::unordered_map<std::string, std::vector<double>> vectors;
    std::optional<std::size_t> dim;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string token;
      ls >> token;
      std::vector<double> v;
      double x = 0.0;
      while (ls >> x) v.push_back(x);
      if (lineno == 1 && v.size() == 1 && token.find_first_not_of("0123456789") == std::string::npos) continue;
      if (v.empty()) throw DataError(path.string() + ":" + std::to_string(lineno) + ": no vector values");
      if (dim && *dim != v.size()) throw DataError(path.string() + ":" + std::to_string(lineno) + ": width changes");
      dim = v.size();
      vectors[token] = std::move(v);
    }
    if (!dim) throw DataError("static table " + path.string() + " is empty");
    std::vector<double> fallback(*dim, 0.0);
    if (auto it = vectors.find("<unk>"); it != vectors.end()) fallback = it->second;
    return StaticTable(std::move(vectors), std::move(fallback));
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write static table " + path.string());
    os.precision(17);
    std::map<std::string, std::vector<double>> sorted(vectors_.begin(), vectors_.end());
    for (const auto& [t, v] : sorted) {
      os << t;
      for (double x : v) os << ' ' << x;
      os << '\n';
    }
  }

 private:
  std::unordered_map<std::string, std::vector<double>> vectors_;
  std::vector<double> fallback_;
};

// ---------------------------------------------------------------------------
// Synthetic bundles
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

/// Deterministic unit-norm vector for (token, layer) under a seed.
inline std::vector<double> synthetic_vector(const std::string& token, std::size_t layer, std::size_t dim,
                                            std::uint64_t seed) {
  std::mt19937_64 rng(detail::fnv1a(token, seed * 0x9E3779B97F4A7C15ULL + layer + 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  for (double& x : v) {
    x = normal(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

struct TextRecord {
  std::string example_id;
  std::vector<std::string> tokens;
};

/// Stand-in for the offline extractor: every (example, position) record gets
/// per-layer unit vectors that depend only on the token string and seed.
inline EmbeddingBundle make_synthetic_bundle(const std::vector<TextRecord>& texts, std::size_t layers,
                                             std::size_t dim, std::uint64_t seed) {
  BundleMeta meta;
  meta.source = "synthetic";
  meta.layers = layers;
  meta.dim = dim;
  meta.tokenizer = "whitespace";
  meta.synthetic = true;
  EmbeddingBundle bundle(meta);
  for (const auto& t : texts) {
    for (std::size_t p = 0; p < t.tokens.size(); ++p) {
      EmbeddingBundle::Layers ls;
      for (std::size_t l = 0; l < layers; ++l) ls.push_back(synthetic_vector(t.tokens[p], l, dim, seed));
      bundle.add(t.example_id, p, std::move(ls));
    }
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Text embedding
// ---------------------------------------------------------------------------

/// One configured input source: a positional bundle or a static table.
struct EmbeddingSource {
  SourceSpec spec;
  std::optional<EmbeddingBundle> bundle;
  std::optional<StaticTable> table;

  std::size_t layer_count() const { return bundle ? bundle->meta().layers : 1; }
  std::size_t layer_dim() const { return bundle ? bundle->meta().dim : table->dim(); }
};

/// Builds the token matrix E [h x w] of a text from all configured sources.
class Embedder {
 public:
  Embedder(std::vector<EmbeddingSource> sources, std::vector<double> ensemble_weights, CombineOp ensemble_op,
           std::optional<IdfTable> idf = std::nullopt)
      : sources_(std::move(sources)), u_(std::move(ensemble_weights)), op_(ensemble_op), idf_(std::move(idf)) {
    MixtureSpec spec;
    for (const auto& s : sources_) spec.sources.push_back(s.spec);
    spec.ensemble_weights = u_;
    spec.ensemble_op = op_;
    spec.validate();
    for (const auto& s : sources_) {
      if (!s.bundle && !s.table) throw ConfigError("embedding: source '" + s.spec.name + "' has no data");
      if (s.spec.layer_weights.size() != s.layer_count()) {
        throw ConfigError("embedding: source '" + s.spec.name + "' declares " +
                          std::to_string(s.spec.layer_weights.size()) + " layer weights for " +
                          std::to_string(s.layer_count()) + " layers");
      }
      if (s.spec.idf && !idf_) throw ConfigError("embedding: source '" + s.spec.name + "' needs an idf table");
    }
    dim_ = compute_dim();
  }

  /// Output width w, fixed by the source specs and their dimensions.
  std::size_t dim() const noexcept { return dim_; }

  Array embed_text(const std::string& example_id, const std::vector<std::string>& tokens) const {
    if (tokens.empty()) throw DomainError("embed_text: '" + example_id + "' has no tokens");
    Array out(Shape{tokens.size(), dim_});
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      std::vector<std::vector<double>> parts;
      for (const auto& src : sources_) {
        const double w = src.spec.idf ? idf_->weight(tokens[i]) : 1.0;
        if (src.bundle) {
          parts.push_back(mixture(src.bundle->lookup(example_id, i), src.spec, w));
        } else {
          parts.push_back(mixture({src.table->lookup(tokens[i])}, src.spec, w));
        }
      }
      const auto row = ensemble(parts, u_, op_);
      std::copy(row.begin(), row.end(), out.data().begin() + i * dim_);
    }
    return out;
  }

 private:
  std::size_t compute_dim() const {
    std::vector<std::size_t> dims;
    for (const auto& s : sources_) dims.push_back(mixture_dim(s.spec, s.layer_dim()));
    if (op_ == CombineOp::concat) {
      std::size_t total = 0;
      for (auto d : dims) total += d;
      return total;
    }
    for (auto d : dims) {
      if (d != dims.front()) throw ConfigError("embedding: sum ensemble over sources of different widths");
    }
    return dims.front();
  }

  std::vector<EmbeddingSource> sources_;
  std::vector<double> u_;
  CombineOp op_;
  std::optional<IdfTable> idf_;
  std::size_t dim_ = 0;
};

/// Multi-resolution preset: contextual-deep (first four of its layers,
/// concat, no idf), contextual-3layer (last layer, sum, idf), static ([1],
/// sum, idf), joined by a concat ensemble with weights 1/3 each.
inline MixtureSpec multi_resolution_preset(std::size_t deep_layers = 12) {
  MixtureSpec spec;
  SourceSpec deep{"contextual-deep", std::vector<double>(deep_layers, 0.0), false, CombineOp::concat};
  for (std::size_t l = 0; l < std::min<std::size_t>(4, deep_layers); ++l) deep.layer_weights[l] = 0.25;
  spec.sources.push_back(deep);
  spec.sources.push_back({"contextual-3layer", {0.0, 0.0, 1.0}, true, CombineOp::sum});
  spec.sources.push_back({"static", {1.0}, true, CombineOp::sum});
  spec.ensemble_weights = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  spec.ensemble_op = CombineOp::concat;
  return spec;
}

}  // namespace mrnn
