#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrnn/embeddings.hpp"
#include "mrnn/ngram.hpp"
#include "mrnn/training.hpp"

namespace mrnn {

/// Where one embedding source's vectors come from.
struct SourceConfig {
  SourceSpec spec;
  std::string kind = "bundle";  // bundle | static | synthetic
  std::filesystem::path path;   // bundle directory or static table file
  std::size_t layers = 1;       // synthetic only
  std::size_t dim = 32;         // synthetic only
  std::uint64_t seed = 1;       // synthetic only
};

struct EmbeddingConfig {
  std::vector<SourceConfig> sources;
  std::vector<double> ensemble_weights;
  CombineOp ensemble_op = CombineOp::concat;
  std::filesystem::path idf_path;  // optional; computed from the dataset when empty
};

struct PathsConfig {
  std::filesystem::path dataset;
  std::filesystem::path checkpoint;
  std::filesystem::path out;
};

/// Parsed run configuration.
///
/// Text format: `[section]` headers, `key = value` lines and `#` comments.
/// Sections are model, training, embedding, paths, plus one `[source.NAME]`
/// per embedding source in ensemble order. Lists are comma separated and
/// may use fractions (`1/3`). Unknown sections and keys are rejected.
struct RunConfig {
  std::string preset = "desk";
  std::string dataset_name;
  ModelConfig model;
  TrainingConfig training;
  EmbeddingConfig embedding;
  PathsConfig paths;

  static RunConfig desk_defaults() {
    RunConfig c;
    c.model.blocks = 2;
    c.model.features = 32;
    c.training.batch_size = 32;
    c.training.learning_rate = 1e-3;
    return c;
  }

  static RunConfig full_defaults() {
    RunConfig c;
    c.preset = "full";
    c.model = ModelConfig::full_scale(6);
    c.training = TrainingConfig::full_scale();
    return c;
  }

  void validate() const {
    if (preset != "desk" && preset != "full") throw ConfigError("preset must be desk or full");
    model.validate();
    training.validate();
    if (embedding.sources.empty()) throw ConfigError("config: no [source.*] section");
    if (embedding.ensemble_weights.size() != embedding.sources.size()) {
      throw ConfigError("config: embedding.weights needs one entry per source");
    }
    for (const auto& s : embedding.sources) {
      if (s.kind != "bundle" && s.kind != "static" && s.kind != "synthetic") {
        throw ConfigError("source '" + s.spec.name + "': kind must be bundle, static or synthetic");
      }
      if (s.kind != "synthetic" && s.path.empty()) throw ConfigError("source '" + s.spec.name + "' needs a path");
      if (s.kind == "synthetic" && s.spec.layer_weights.size() != s.layers) {
        throw ConfigError("source '" + s.spec.name + "': layer_weights must have `layers` entries");
      }
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json sources = nlohmann::json::array();
    for (const auto& s : embedding.sources) {
      sources.push_back({{"name", s.spec.name},
                         {"kind", s.kind},
                         {"path", s.path.string()},
                         {"layer_weights", s.spec.layer_weights},
                         {"mix", mrnn::to_string(s.spec.op)},
                         {"idf", s.spec.idf},
                         {"layers", s.layers},
                         {"dim", s.dim},
                         {"seed", s.seed}});
    }
    return {{"preset", preset},
            {"dataset_name", dataset_name},
            {"model", mrnn::to_json(model)},
            {"training", mrnn::to_json(training)},
            {"embedding",
             {{"sources", sources},
              {"weights", embedding.ensemble_weights},
              {"op", mrnn::to_string(embedding.ensemble_op)},
              {"idf", embedding.idf_path.string()}}}};
  }

  static RunConfig parse(const std::string& text, const std::filesystem::path& base_dir = {});

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path.parent_path());
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string unquote(std::string s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

struct ConfigValue {
  std::string text;
  std::size_t line = 0;
};

class ConfigReader {
 public:
  ConfigReader(std::string section, std::map<std::string, ConfigValue> values)
      : section_(std::move(section)), values_(std::move(values)) {}

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::optional<std::string> str(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_.insert(key);
    return unquote(it->second.text);
  }

  template <class T>
  void read(const std::string& key, T& out) {
    auto v = str(key);
    if (!v) return;
    out = convert<T>(*v, key);
  }

  void read_list(const std::string& key, std::vector<double>& out) {
    auto v = str(key);
    if (!v) return;
    std::string s = *v;
    if (!s.empty() && s.front() == '[') s.erase(0, 1);
    if (!s.empty() && s.back() == ']') s.pop_back();
    out.clear();
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      out.push_back(number(item, key));
    }
  }

  void reject_unknown() const {
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) {
        throw ConfigError("config line " + std::to_string(v.line) + ": unknown key '" + k + "' in [" + section_ + "]");
      }
    }
  }

 private:
  double number(const std::string& s, const std::string& key) const {
    try {
      const auto slash = s.find('/');
      std::size_t pos = 0;
      if (slash != std::string::npos) {
        const double a = std::stod(s.substr(0, slash));
        const double b = std::stod(s.substr(slash + 1));
        return a / b;
      }
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config [" + section_ + "] " + key + ": '" + s + "' is not a number");
    }
  }

  template <class T>
  T convert(const std::string& s, const std::string& key) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (s == "true") return true;
      if (s == "false") return false;
      throw ConfigError("config [" + section_ + "] " + key + ": expected true or false");
    } else if constexpr (std::is_same_v<T, std::string>) {
      return s;
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      return std::filesystem::path(s);
    } else if constexpr (std::is_integral_v<T>) {
      const double v = number(s, key);
      if (v < 0 || v != static_cast<double>(static_cast<std::uint64_t>(v))) {
        throw ConfigError("config [" + section_ + "] " + key + ": expected a non-negative integer");
      }
      return static_cast<T>(v);
    } else {
      return static_cast<T>(number(s, key));
    }
  }

  std::string section_;
  std::map<std::string, ConfigValue> values_;
  std::set<std::string> used_;
};

}  // namespace detail

inline RunConfig RunConfig::parse(const std::string& text, const std::filesystem::path& base_dir) {
  std::vector<std::pair<std::string, std::map<std::string, detail::ConfigValue>>> sections;
  sections.emplace_back("", std::map<std::string, detail::ConfigValue>{});
  std::istringstream is(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    std::string line = raw;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": bad section header");
      const std::string name = detail::trim(line.substr(1, line.size() - 2));
      for (const auto& s : sections) {
        if (s.first == name) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate [" + name + "]");
      }
      sections.emplace_back(name, std::map<std::string, detail::ConfigValue>{});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!sections.back().second.emplace(key, detail::ConfigValue{value, lineno}).second) {
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }

  // The preset chooses the base defaults, so it is read first.
  std::string preset = "desk";
  if (auto it = sections.front().second.find("preset"); it != sections.front().second.end()) {
    preset = detail::unquote(it->second.text);
  }
  RunConfig c = preset == "full" ? full_defaults() : desk_defaults();
  c.preset = preset;
  auto resolve = [&](const std::filesystem::path& p) {
    return p.empty() || p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };

  bool margin_set = false;
  for (auto& [name, values] : sections) {
    detail::ConfigReader r(name, values);
    if (name.empty()) {
      r.read("preset", c.preset);
      r.read("dataset_name", c.dataset_name);
    } else if (name == "model") {
      r.read("blocks", c.model.blocks);
      r.read("window", c.model.window);
      r.read("features", c.model.features);
      r.read("pool_width", c.model.pool_width);
      r.read("encoder_hidden", c.model.encoder_hidden);
      r.read("tie_sides", c.model.tie_sides);
      r.read("max_query_length", c.model.max_query_length);
      r.read("max_doc_length", c.model.max_doc_length);
    } else if (name == "training") {
      margin_set = r.has("margin");
      r.read("learning_rate", c.training.learning_rate);
      r.read("weight_decay", c.training.weight_decay);
      r.read("batch_size", c.training.batch_size);
      r.read("margin", c.training.margin);
      r.read("epochs", c.training.epochs);
      r.read("patience", c.training.patience);
      r.read("seed", c.training.seed);
      r.read("square_distance", c.training.square_distance);
      r.read("decoupled_weight_decay", c.training.decoupled_weight_decay);
      r.read("mine_per_step", c.training.mine_per_step);
      r.read("beta1", c.training.beta1);
      r.read("beta2", c.training.beta2);
      r.read("epsilon", c.training.epsilon);
    } else if (name == "embedding") {
      r.read_list("weights", c.embedding.ensemble_weights);
      if (auto op = r.str("op")) c.embedding.ensemble_op = parse_combine_op(*op);
      std::filesystem::path idf;
      r.read("idf", idf);
      c.embedding.idf_path = resolve(idf);
    } else if (name == "paths") {
      r.read("dataset", c.paths.dataset);
      r.read("checkpoint", c.paths.checkpoint);
      r.read("out", c.paths.out);
      c.paths.dataset = resolve(c.paths.dataset);
      c.paths.checkpoint = resolve(c.paths.checkpoint);
      c.paths.out = resolve(c.paths.out);
    } else if (name.rfind("source.", 0) == 0) {
      SourceConfig s;
      s.spec.name = name.substr(7);
      r.read("kind", s.kind);
      r.read("path", s.path);
      s.path = resolve(s.path);
      r.read_list("layer_weights", s.spec.layer_weights);
      if (auto op = r.str("mix")) s.spec.op = parse_combine_op(*op);
      r.read("idf", s.spec.idf);
      r.read("layers", s.layers);
      r.read("dim", s.dim);
      r.read("seed", s.seed);
      if (s.spec.layer_weights.empty()) s.spec.layer_weights.assign(s.kind == "synthetic" ? s.layers : 1, 1.0);
      c.embedding.sources.push_back(std::move(s));
    } else {
      throw ConfigError("config: unknown section [" + name + "]");
    }
    r.reject_unknown();
  }
  if (c.embedding.ensemble_weights.empty()) c.embedding.ensemble_weights.assign(c.embedding.sources.size(), 1.0);
  if (!margin_set && !c.dataset_name.empty()) {
    if (auto m = default_margin(c.dataset_name)) c.training.margin = *m;
  }
  c.validate();
  return c;
}

}  // namespace mrnn
