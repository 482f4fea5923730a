#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrnn/model.hpp"
#include "mrnn/optimizer.hpp"

namespace mrnn {

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"blocks", c.blocks},
          {"window", c.window},
          {"features", c.features},
          {"pool_width", c.pool_width},
          {"encoder_hidden", c.encoder_hidden},
          {"tie_sides", c.tie_sides},
          {"max_query_length", c.max_query_length},
          {"max_doc_length", c.max_doc_length}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.blocks = j.at("blocks").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.features = j.at("features").get<std::size_t>();
  c.pool_width = j.at("pool_width").get<std::size_t>();
  c.encoder_hidden = j.at("encoder_hidden").get<std::size_t>();
  c.tie_sides = j.at("tie_sides").get<bool>();
  c.max_query_length = j.at("max_query_length").get<std::size_t>();
  c.max_doc_length = j.at("max_doc_length").get<std::size_t>();
  c.validate();
  return c;
}

inline nlohmann::json to_json(const AdamHypers& h) {
  return {{"learning_rate", h.learning_rate}, {"beta1", h.beta1},
          {"beta2", h.beta2},                 {"epsilon", h.epsilon},
          {"weight_decay", h.weight_decay},   {"decoupled_weight_decay", h.decoupled_weight_decay}};
}

inline AdamHypers adam_hypers_from_json(const nlohmann::json& j) {
  AdamHypers h;
  h.learning_rate = j.at("learning_rate").get<double>();
  h.beta1 = j.at("beta1").get<double>();
  h.beta2 = j.at("beta2").get<double>();
  h.epsilon = j.at("epsilon").get<double>();
  h.weight_decay = j.at("weight_decay").get<double>();
  h.decoupled_weight_decay = j.at("decoupled_weight_decay").get<bool>();
  return h;
}

/// Everything needed to resume or evaluate a run.
struct Checkpoint {
  MrnnModel model;
  OptimizerState optimizer;
  std::uint64_t seed = 0;
  std::string rng_state;
  std::size_t epoch = 0;
  nlohmann::json run_config = nlohmann::json::object();
};

inline OptimizerState fresh_optimizer(const MrnnModel& model, const AdamHypers& hypers) {
  std::vector<std::size_t> sizes;
  model.visit_parameters([&](const std::string&, const Array& a) { sizes.push_back(a.size()); });
  return OptimizerState::for_shapes(sizes, hypers);
}

namespace detail {

inline constexpr char kCheckpointMagic[] = "MRNNCKPT1\n";

inline void write_u64(std::ostream& os, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(bytes, 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw DataError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

inline void write_doubles(std::ostream& os, std::span<const double> values) {
  for (double v : values) write_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline void read_doubles(std::istream& is, std::span<double> out) {
  for (double& v : out) v = std::bit_cast<double>(read_u64(is));
}

}  // namespace detail

/// Layout: magic line, u64 header length, JSON header (config, shapes,
/// seed, ...), then little-endian binary64 blocks in declaration order:
/// parameters, batch-norm running mean/var, ADAM first moments, second moments.
inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  nlohmann::json params = nlohmann::json::array();
  ck.model.visit_parameters([&](const std::string& name, const Array& a) {
    params.push_back({{"name", name}, {"shape", a.shape()}});
  });
  nlohmann::json norms = nlohmann::json::array();
  ck.model.visit_norms([&](const std::string& name, const BatchNormState& s) {
    norms.push_back({{"name", name},
                     {"channels", s.running_mean.size()},
                     {"momentum", s.momentum},
                     {"epsilon", s.epsilon}});
  });
  const nlohmann::json header{{"format", "mrnn-checkpoint"},
                              {"version", 1},
                              {"model", to_json(ck.model.config)},
                              {"input_dim", ck.model.input_dim},
                              {"parameters", params},
                              {"norms", norms},
                              {"optimizer", {{"hypers", to_json(ck.optimizer.hypers)}, {"step", ck.optimizer.step}}},
                              {"seed", ck.seed},
                              {"rng_state", ck.rng_state},
                              {"epoch", ck.epoch},
                              {"run_config", ck.run_config}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  os.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic) - 1);
  detail::write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  ck.model.visit_parameters([&](const std::string&, const Array& a) { detail::write_doubles(os, a.data()); });
  ck.model.visit_norms([&](const std::string&, const BatchNormState& s) {
    detail::write_doubles(os, s.running_mean);
    detail::write_doubles(os, s.running_var);
  });
  for (const auto& m : ck.optimizer.first) detail::write_doubles(os, m);
  for (const auto& v : ck.optimizer.second) detail::write_doubles(os, v);
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read checkpoint " + path.string());
  std::string magic(sizeof(detail::kCheckpointMagic) - 1, '\0');
  is.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (magic != detail::kCheckpointMagic) throw DataError(path.string() + " is not an mrnn checkpoint");
  const std::uint64_t length = detail::read_u64(is);
  std::string text(length, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(length))) throw DataError("checkpoint: truncated header");

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    const ModelConfig config = model_config_from_json(header.at("model"));
    ck.model = MrnnModel::init(config, header.at("input_dim").get<std::size_t>(), 0);
    std::size_t i = 0;
    const auto& shapes = header.at("parameters");
    ck.model.visit_parameters([&](const std::string& name, Array& a) {
      if (i >= shapes.size() || shapes[i].at("name") != name || shapes[i].at("shape").get<Shape>() != a.shape()) {
        throw DataError("checkpoint: parameter table does not match model at " + name);
      }
      ++i;
    });
    if (i != shapes.size()) throw DataError("checkpoint: parameter table has extra entries");
    const auto& norms = header.at("norms");
    std::size_t k = 0;
    ck.model.visit_norms([&](const std::string&, BatchNormState& s) {
      const auto& n = norms.at(k++);
      const std::size_t c = n.at("channels").get<std::size_t>();
      s.running_mean.assign(c, 0.0);
      s.running_var.assign(c, 0.0);
      s.momentum = n.at("momentum").get<double>();
      s.epsilon = n.at("epsilon").get<double>();
    });
    ck.optimizer = fresh_optimizer(ck.model, adam_hypers_from_json(header.at("optimizer").at("hypers")));
    ck.optimizer.step = header.at("optimizer").at("step").get<std::uint64_t>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.rng_state = header.at("rng_state").get<std::string>();
    ck.epoch = header.at("epoch").get<std::size_t>();
    ck.run_config = header.at("run_config");
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint header: " + std::string(e.what()));
  }
  ck.model.visit_parameters([&](const std::string&, Array& a) { detail::read_doubles(is, a.data()); });
  ck.model.visit_norms([&](const std::string&, BatchNormState& s) {
    detail::read_doubles(is, s.running_mean);
    detail::read_doubles(is, s.running_var);
  });
  for (auto& m : ck.optimizer.first) detail::read_doubles(is, m);
  for (auto& v : ck.optimizer.second) detail::read_doubles(is, v);
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint: trailing bytes");
  return ck;
}

}  // namespace mrnn
