#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mrnn/diffcore.hpp"

namespace mrnn {

/// Architecture hyperparameters of the network.
struct ModelConfig {
  std::size_t blocks = 2;          // number of n-gram blocks
  std::size_t window = 3;          // convolution window of blocks n > 1
  std::size_t features = 32;       // feature width of every block output
  std::size_t pool_width = 1;      // stride-1 max-pool window, 1 = identity
  std::size_t encoder_hidden = 4;  // width of the per-score chain in the document-aware block
  bool tie_sides = true;           // query and document share block + conductor weights
  std::size_t max_query_length = 64;
  std::size_t max_doc_length = 256;

  void validate() const {
    if (blocks < 1) throw ConfigError("model: blocks must be >= 1");
    if (window % 2 == 0) throw ConfigError("model: window must be odd, got " + std::to_string(window));
    if (features < 1) throw ConfigError("model: features must be >= 1");
    if (pool_width % 2 == 0) throw ConfigError("model: pool_width must be odd");
    if (encoder_hidden < 1) throw ConfigError("model: encoder_hidden must be >= 1");
    if (max_query_length < 1 || max_doc_length < 1) throw ConfigError("model: max lengths must be >= 1");
  }

  /// Block count 6 for SQuAD/QUASAR-T, 4 for WikiQA/TrecQA.
  static ModelConfig full_scale(std::size_t block_count = 6) {
    ModelConfig c;
    c.blocks = block_count;
    c.window = 3;
    c.features = 1024;
    return c;
  }
};

/// Learnable state of one n-gram block: CONV -> BN -> PReLU -> POOL -> SU.
struct GramBlock {
  Array kernels;  // features x window x input_channels
  Array bias;     // features
  Array gamma;    // features
  Array beta;     // features
  Array slopes;   // features, PReLU
  Array scale;    // scalar
  BatchNormState norm;

  std::size_t window() const { return kernels.extent(1); }
  std::size_t input_channels() const { return kernels.extent(2); }
  std::size_t features() const { return kernels.extent(0); }
};

using BlockParams = std::vector<GramBlock>;

/// Kernel-bank shapes implied by the dense connectivity rule, without
/// allocating any parameters. Block 1 projects the embedding width with a
/// window of 1; block n > 1 convolves the (n-1)*s concatenated upstream maps.
inline std::vector<Shape> block_kernel_shapes(const ModelConfig& config, std::size_t input_dim) {
  config.validate();
  std::vector<Shape> shapes;
  for (std::size_t n = 1; n <= config.blocks; ++n) {
    if (n == 1) {
      shapes.push_back({config.features, 1, input_dim});
    } else {
      shapes.push_back({config.features, config.window, (n - 1) * config.features});
    }
  }
  return shapes;
}

/// Asserts the dense connectivity channel law on constructed blocks.
inline void validate_blocks(const BlockParams& blocks, const ModelConfig& config, std::size_t input_dim) {
  const auto expected = block_kernel_shapes(config, input_dim);
  if (blocks.size() != expected.size()) {
    throw ShapeError("n-gram stack has " + std::to_string(blocks.size()) + " blocks, config says " +
                     std::to_string(expected.size()));
  }
  for (std::size_t n = 0; n < blocks.size(); ++n) {
    const GramBlock& b = blocks[n];
    const std::size_t s = config.features;
    if (b.kernels.shape() != expected[n]) {
      throw ShapeError("block " + std::to_string(n + 1) + " kernels " + shape_string(b.kernels.shape()) +
                       ", expected " + shape_string(expected[n]));
    }
    if (b.bias.shape() != Shape{s} || b.gamma.shape() != Shape{s} || b.beta.shape() != Shape{s} ||
        b.slopes.shape() != Shape{s} || b.scale.size() != 1) {
      throw ShapeError("block " + std::to_string(n + 1) + " has malformed per-channel parameters");
    }
  }
}

namespace detail {

inline Array uniform_array(Shape shape, double bound, std::mt19937_64& rng) {
  Array a(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : a.data()) v = dist(rng);
  return a;
}

}  // namespace detail

/// Fresh block parameters: kernels ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// zero bias, unit BN affine and identity running stats, PReLU slopes 0.25,
/// scale 1.
inline BlockParams init_blocks(const ModelConfig& config, std::size_t input_dim, std::mt19937_64& rng) {
  BlockParams blocks;
  const std::size_t s = config.features;
  for (const Shape& ks : block_kernel_shapes(config, input_dim)) {
    GramBlock b;
    const double fan_in = static_cast<double>(ks[1] * ks[2]);
    b.kernels = detail::uniform_array(ks, 1.0 / std::sqrt(fan_in), rng);
    b.bias = Array(Shape{s});
    b.gamma = Array::filled(Shape{s}, 1.0);
    b.beta = Array(Shape{s});
    b.slopes = Array::filled(Shape{s}, 0.25);
    b.scale = Array::scalar(1.0);
    b.norm = BatchNormState::identity(s);
    blocks.push_back(std::move(b));
  }
  return blocks;
}

inline BlockParams init_blocks(const ModelConfig& config, std::size_t input_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return init_blocks(config, input_dim, rng);
}

/// Tape leaves of one block's learnable arrays.
struct GramBlockVars {
  Var kernels, bias, gamma, beta, slopes, scale;
};

inline GramBlockVars bind_block(Tape& tape, const GramBlock& b, bool trainable) {
  auto leaf = [&](const Array& a) { return trainable ? tape.parameter(a) : tape.constant(a); };
  return {leaf(b.kernels), leaf(b.bias), leaf(b.gamma), leaf(b.beta), leaf(b.slopes), leaf(b.scale)};
}

/// One n-gram block applied to its upstream input UB ([h x c] or [B x h x c]).
/// `norm` is updated in train mode and only read in eval mode.
inline Var gram_block(Var upstream, const GramBlockVars& vars, BatchNormState& norm, std::size_t pool_width,
                      Mode mode, const std::vector<std::size_t>& lengths = {}) {
  Var x = conv1d_same(upstream, vars.kernels, vars.bias);
  x = batch_norm(x, vars.gamma, vars.beta, norm, mode, lengths);
  x = prelu(x, vars.slopes);
  x = pool_same(x, pool_width, lengths);
  return scale_unit(x, vars.scale);
}

/// Runs the densely connected stack: block 1 sees E, block n sees the
/// channel concatenation of G_1..G_{n-1}. Returns G_1..G_N, each shaped like
/// E with the channel axis replaced by s.
inline std::vector<Var> multi_resolution_maps(Var embedded, const std::vector<GramBlockVars>& vars,
                                              std::vector<BatchNormState*> norms, std::size_t pool_width,
                                              Mode mode, const std::vector<std::size_t>& lengths = {}) {
  if (vars.size() != norms.size() || vars.empty()) {
    throw ShapeError("multi_resolution_maps: block count mismatch");
  }
  std::vector<Var> maps;
  maps.reserve(vars.size());
  for (std::size_t n = 0; n < vars.size(); ++n) {
    const Var upstream = n == 0 ? embedded : (n == 1 ? maps[0] : concat_channels(maps));
    const std::size_t expected = vars[n].kernels.shape()[2];
    const std::size_t got = upstream.shape().back();
    if (expected != got) {
      throw ShapeError("block " + std::to_string(n + 1) + " expects " + std::to_string(expected) +
                       " upstream channels, got " + std::to_string(got));
    }
    maps.push_back(gram_block(upstream, vars[n], *norms[n], pool_width, mode, lengths));
  }
  return maps;
}

/// Convenience evaluation of G = [G_1..G_N] for a single text, as an
/// [N x h x s] array. Running statistics are read, never written.
inline Array feature_map_tensor(const Array& embedded, const BlockParams& blocks, std::size_t pool_width) {
  Tape tape;
  std::vector<GramBlockVars> vars;
  std::vector<BatchNormState> norms;
  for (const auto& b : blocks) {
    vars.push_back(bind_block(tape, b, false));
    norms.push_back(b.norm);
  }
  std::vector<BatchNormState*> ptrs;
  for (auto& n : norms) ptrs.push_back(&n);
  const auto maps = multi_resolution_maps(tape.constant(embedded), vars, ptrs, pool_width, Mode::eval);
  return stack(maps).value();
}

}  // namespace mrnn
