#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "mrnn/diffcore/tape.hpp"

namespace mrnn {

enum class Mode { train, eval };

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

// Views a rank-2 (h x c) or rank-3 (B x h x c) sequence tensor as B x h x c.
struct SeqDims {
  std::size_t batch, length, channels;
};

inline SeqDims seq_dims(const Shape& s, const char* op) {
  if (s.size() == 2) return {1, s[0], s[1]};
  if (s.size() == 3) return {s[0], s[1], s[2]};
  throw ShapeError(std::string(op) + ": expected rank-2 or rank-3 input, got " + shape_string(s));
}

// Per-sequence valid lengths; empty means every position is valid.
inline std::vector<std::size_t> resolve_lengths(const std::vector<std::size_t>& lengths,
                                                const SeqDims& d, const char* op) {
  if (lengths.empty()) return std::vector<std::size_t>(d.batch, d.length);
  if (lengths.size() != d.batch) {
    throw ShapeError(std::string(op) + ": " + std::to_string(lengths.size()) +
                     " lengths for batch of " + std::to_string(d.batch));
  }
  for (std::size_t len : lengths) {
    if (len > d.length) throw ShapeError(std::string(op) + ": length exceeds padded extent");
  }
  return lengths;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution over the position axis with zero "same" padding.
//
// input   [h x c_in] or [B x h x c_in]
// kernels [c_out x win x c_in], win odd
// bias    [c_out]
// ---------------------------------------------------------------------------
inline Var conv1d_same(Var input, Var kernels, Var bias) {
  const auto d = detail::seq_dims(input.shape(), "conv1d_same");
  const Shape& ks = kernels.shape();
  detail::require(ks.size() == 3, "conv1d_same: kernels must be c_out x win x c_in");
  const std::size_t c_out = ks[0], win = ks[1], c_in = ks[2];
  if (win % 2 == 0) throw ConfigError("conv1d_same: window must be odd, got " + std::to_string(win));
  detail::require(c_in == d.channels, "conv1d_same: input has " + std::to_string(d.channels) +
                                          " channels, kernels expect " + std::to_string(c_in));
  detail::require(bias.shape() == Shape{c_out}, "conv1d_same: bias must have c_out entries");

  const long radius = static_cast<long>(win / 2);
  const long h = static_cast<long>(d.length);
  Shape out_shape = input.shape();
  out_shape.back() = c_out;
  Array out(out_shape);
  const auto x = input.value().data();
  const auto k = kernels.value().data();
  const auto b = bias.value().data();
  auto y = out.data();
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (long i = 0; i < h; ++i) {
      double* yrow = &y[(n * d.length + i) * c_out];
      for (std::size_t o = 0; o < c_out; ++o) yrow[o] = b[o];
      for (std::size_t dd = 0; dd < win; ++dd) {
        const long src = i + static_cast<long>(dd) - radius;
        if (src < 0 || src >= h) continue;
        const double* xrow = &x[(n * d.length + src) * c_in];
        for (std::size_t o = 0; o < c_out; ++o) {
          const double* krow = &k[(o * win + dd) * c_in];
          double acc = 0.0;
          for (std::size_t j = 0; j < c_in; ++j) acc += krow[j] * xrow[j];
          yrow[o] += acc;
        }
      }
    }
  }

  Tape* tape = input.tape;
  const std::size_t xid = input.id, kid = kernels.id, bid = bias.id;
  return tape->record(
      "conv1d_same", {input, kernels, bias}, std::move(out),
      [=](Tape& t, std::span<const double> gy) {
        const auto xv = t.value(xid).data();
        const auto kv = t.value(kid).data();
        auto gx = t.grad_buffer(xid);
        auto gk = t.grad_buffer(kid);
        auto gb = t.grad_buffer(bid);
        for (std::size_t n = 0; n < d.batch; ++n) {
          for (long i = 0; i < h; ++i) {
            const double* grow = &gy[(n * d.length + i) * c_out];
            if (!gb.empty()) {
              for (std::size_t o = 0; o < c_out; ++o) gb[o] += grow[o];
            }
            for (std::size_t dd = 0; dd < win; ++dd) {
              const long src = i + static_cast<long>(dd) - radius;
              if (src < 0 || src >= h) continue;
              const std::size_t xoff = (n * d.length + src) * c_in;
              for (std::size_t o = 0; o < c_out; ++o) {
                const double g = grow[o];
                if (g == 0.0) continue;
                const std::size_t koff = (o * win + dd) * c_in;
                if (!gx.empty()) {
                  for (std::size_t j = 0; j < c_in; ++j) gx[xoff + j] += g * kv[koff + j];
                }
                if (!gk.empty()) {
                  for (std::size_t j = 0; j < c_in; ++j) gk[koff + j] += g * xv[xoff + j];
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Batch normalization with masking of padded positions.
// ---------------------------------------------------------------------------

/// Running statistics of one batch-norm layer. Empty vectors mean the state
/// has never been initialized.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  bool initialized() const noexcept { return !running_mean.empty(); }

  static BatchNormState identity(std::size_t channels) {
    BatchNormState s;
    s.running_mean.assign(channels, 0.0);
    s.running_var.assign(channels, 1.0);
    return s;
  }
};

/// Normalizes each channel of [h x c] or [B x h x c] input. Positions at or
/// beyond `lengths[b]` are excluded from statistics and produce 0. Train mode
/// updates `state` by exponential moving average (an empty state is seeded
/// with the batch statistics); eval mode only reads it.
inline Var batch_norm(Var input, Var gamma, Var beta, BatchNormState& state, Mode mode,
                      const std::vector<std::size_t>& lengths = {}) {
  const auto d = detail::seq_dims(input.shape(), "batch_norm");
  const std::size_t c = d.channels;
  detail::require(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
                  "batch_norm: gamma/beta must have one entry per channel");
  const auto lens = detail::resolve_lengths(lengths, d, "batch_norm");
  const auto x = input.value().data();
  const auto gm = gamma.value().data();
  const auto bt = beta.value().data();

  std::size_t valid = 0;
  for (std::size_t len : lens) valid += len;

  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  if (mode == Mode::train) {
    if (valid == 0) throw DomainError("batch_norm: train mode needs at least one valid position");
    std::vector<double> var(c, 0.0);
    for (std::size_t n = 0; n < d.batch; ++n)
      for (std::size_t i = 0; i < lens[n]; ++i)
        for (std::size_t j = 0; j < c; ++j) mean[j] += x[(n * d.length + i) * c + j];
    for (auto& m : mean) m /= static_cast<double>(valid);
    for (std::size_t n = 0; n < d.batch; ++n)
      for (std::size_t i = 0; i < lens[n]; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          const double dv = x[(n * d.length + i) * c + j] - mean[j];
          var[j] += dv * dv;
        }
    for (auto& v : var) v /= static_cast<double>(valid);
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + state.epsilon);
    if (!state.initialized()) {
      // First batch seeds the averages directly.
      state.running_mean = mean;
      state.running_var = var;
    } else {
      if (state.running_mean.size() != c) throw StateError("batch_norm: running stats have wrong width");
      for (std::size_t j = 0; j < c; ++j) {
        state.running_mean[j] = state.momentum * state.running_mean[j] + (1.0 - state.momentum) * mean[j];
        state.running_var[j] = state.momentum * state.running_var[j] + (1.0 - state.momentum) * var[j];
      }
    }
  } else {
    if (!state.initialized()) throw StateError("batch_norm: eval mode with uninitialized running stats");
    if (state.running_mean.size() != c) throw StateError("batch_norm: running stats have wrong width");
    mean = state.running_mean;
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(state.running_var[j] + state.epsilon);
  }

  Array out(input.shape());
  std::vector<double> xhat(x.size(), 0.0);
  auto y = out.data();
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t i = 0; i < lens[n]; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t idx = (n * d.length + i) * c + j;
        xhat[idx] = (x[idx] - mean[j]) * inv_std[j];
        y[idx] = gm[j] * xhat[idx] + bt[j];
      }

  Tape* tape = input.tape;
  const std::size_t xid = input.id, gid = gamma.id, bid = beta.id;
  return tape->record(
      "batch_norm", {input, gamma, beta}, std::move(out),
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::span<const double> gy) {
        const auto gmv = t.value(gid).data();
        auto gx = t.grad_buffer(xid);
        auto gg = t.grad_buffer(gid);
        auto gb = t.grad_buffer(bid);
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t n = 0; n < d.batch; ++n)
          for (std::size_t i = 0; i < lens[n]; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              const std::size_t idx = (n * d.length + i) * c + j;
              sum_g[j] += gy[idx];
              sum_gx[j] += gy[idx] * xhat[idx];
            }
        if (!gg.empty())
          for (std::size_t j = 0; j < c; ++j) gg[j] += sum_gx[j];
        if (!gb.empty())
          for (std::size_t j = 0; j < c; ++j) gb[j] += sum_g[j];
        if (gx.empty()) return;
        const double m = static_cast<double>(valid);
        for (std::size_t n = 0; n < d.batch; ++n)
          for (std::size_t i = 0; i < lens[n]; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              const std::size_t idx = (n * d.length + i) * c + j;
              if (mode == Mode::train) {
                gx[idx] += gmv[j] * inv_std[j] *
                           (gy[idx] - sum_g[j] / m - xhat[idx] * sum_gx[j] / m);
              } else {
                gx[idx] += gmv[j] * inv_std[j] * gy[idx];
              }
            }
      });
}

// ---------------------------------------------------------------------------
// Parametric ReLU with one learnable slope per channel (last axis).
// ---------------------------------------------------------------------------
inline Var prelu(Var input, Var slopes) {
  const Shape& s = input.shape();
  const std::size_t c = s.empty() ? 1 : s.back();
  detail::require(slopes.shape() == Shape{c}, "prelu: slopes length must equal channel extent " +
                                                  std::to_string(c));
  const auto x = input.value().data();
  const auto a = slopes.value().data();
  Array out(s);
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] >= 0.0 ? x[i] : a[i % c] * x[i];

  const std::size_t xid = input.id, aid = slopes.id;
  return input.tape->record("prelu", {input, slopes}, std::move(out),
                            [=](Tape& t, std::span<const double> gy) {
                              const auto xv = t.value(xid).data();
                              const auto av = t.value(aid).data();
                              auto gx = t.grad_buffer(xid);
                              auto ga = t.grad_buffer(aid);
                              for (std::size_t i = 0; i < xv.size(); ++i) {
                                const bool pos = xv[i] >= 0.0;
                                if (!gx.empty()) gx[i] += pos ? gy[i] : av[i % c] * gy[i];
                                if (!ga.empty() && !pos) ga[i % c] += gy[i] * xv[i];
                              }
                            });
}

// ---------------------------------------------------------------------------
// Stride-1 max pooling over a centered window of valid positions; output
// length equals input length and padded positions produce 0.
// ---------------------------------------------------------------------------
inline Var pool_same(Var input, std::size_t width, const std::vector<std::size_t>& lengths = {}) {
  if (width % 2 == 0) throw ConfigError("pool_same: width must be odd, got " + std::to_string(width));
  const auto d = detail::seq_dims(input.shape(), "pool_same");
  const auto lens = detail::resolve_lengths(lengths, d, "pool_same");
  const std::size_t c = d.channels;
  const std::size_t radius = width / 2;
  const auto x = input.value().data();
  Array out(input.shape());
  auto y = out.data();
  std::vector<std::size_t> argmax(x.size(), 0);
  for (std::size_t n = 0; n < d.batch; ++n) {
    const std::size_t len = lens[n];
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t lo = i >= radius ? i - radius : 0;
      const std::size_t hi = std::min(len - 1, i + radius);
      for (std::size_t j = 0; j < c; ++j) {
        std::size_t best = (n * d.length + lo) * c + j;
        for (std::size_t p = lo + 1; p <= hi; ++p) {
          const std::size_t idx = (n * d.length + p) * c + j;
          if (x[idx] > x[best]) best = idx;
        }
        const std::size_t out_idx = (n * d.length + i) * c + j;
        y[out_idx] = x[best];
        argmax[out_idx] = best;
      }
    }
  }
  const std::size_t xid = input.id;
  return input.tape->record(
      "pool_same", {input}, std::move(out),
      [=, argmax = std::move(argmax)](Tape& t, std::span<const double> gy) {
        auto gx = t.grad_buffer(xid);
        if (gx.empty()) return;
        for (std::size_t n = 0; n < d.batch; ++n)
          for (std::size_t i = 0; i < lens[n]; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              const std::size_t idx = (n * d.length + i) * c + j;
              gx[argmax[idx]] += gy[idx];
            }
      });
}

// ---------------------------------------------------------------------------
// Multiplication of every element by one learnable scalar.
// ---------------------------------------------------------------------------
inline Var scale_unit(Var input, Var scale) {
  detail::require(scale.value().size() == 1, "scale_unit: scale must be a scalar");
  const double sc = scale.value()[0];
  Array out(input.shape());
  const auto x = input.value().data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sc * x[i];
  const std::size_t xid = input.id, sid = scale.id;
  return input.tape->record("scale_unit", {input, scale}, std::move(out),
                            [=](Tape& t, std::span<const double> gy) {
                              const auto xv = t.value(xid).data();
                              const double s = t.value(sid)[0];
                              auto gx = t.grad_buffer(xid);
                              auto gs = t.grad_buffer(sid);
                              double acc = 0.0;
                              for (std::size_t i = 0; i < xv.size(); ++i) {
                                if (!gx.empty()) gx[i] += s * gy[i];
                                acc += gy[i] * xv[i];
                              }
                              if (!gs.empty()) gs[0] += acc;
                            });
}

// ---------------------------------------------------------------------------
// Softmax over the last axis. `mask` (length = last extent, empty = all
// valid) marks positions that may receive weight; masked weights are exactly 0.
// ---------------------------------------------------------------------------
inline Var softmax_masked(Var scores, const std::vector<bool>& mask = {}) {
  const Shape& s = scores.shape();
  detail::require(!s.empty(), "softmax_masked: scores must have rank >= 1");
  const std::size_t k = s.back();
  const std::size_t rows = scores.value().size() / std::max<std::size_t>(k, 1);
  detail::require(mask.empty() || mask.size() == k, "softmax_masked: mask length must equal score length");
  auto valid = [&](std::size_t j) { return mask.empty() || mask[j]; };
  bool any = false;
  for (std::size_t j = 0; j < k; ++j) any = any || valid(j);
  if (!any) throw DomainError("softmax_masked: every position is masked");

  const auto x = scores.value().data();
  Array out(s);
  auto y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x[r * k];
    double* yr = &y[r * k];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j)
      if (valid(j)) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      yr[j] = valid(j) ? std::exp(xr[j] - mx) : 0.0;
      z += yr[j];
    }
    for (std::size_t j = 0; j < k; ++j) yr[j] /= z;
  }
  const std::size_t xid = scores.id;
  const Tape* self_tape = scores.tape;
  const std::size_t out_id = self_tape->size();
  return scores.tape->record("softmax_masked", {scores}, std::move(out),
                             [=](Tape& t, std::span<const double> gy) {
                               const auto yv = t.value(out_id).data();
                               auto gx = t.grad_buffer(xid);
                               if (gx.empty()) return;
                               for (std::size_t r = 0; r < rows; ++r) {
                                 double dotp = 0.0;
                                 for (std::size_t j = 0; j < k; ++j) dotp += yv[r * k + j] * gy[r * k + j];
                                 for (std::size_t j = 0; j < k; ++j)
                                   gx[r * k + j] += yv[r * k + j] * (gy[r * k + j] - dotp);
                               }
                             });
}

// ---------------------------------------------------------------------------
// Fully connected layer: out = input . weights + bias, applied to a vector
// [a] or to each row of [rows x a].
// ---------------------------------------------------------------------------
inline Var affine(Var input, Var weights, Var bias) {
  const Shape& s = input.shape();
  const Shape& ws = weights.shape();
  detail::require(s.size() == 1 || s.size() == 2, "affine: input must be a vector or matrix");
  detail::require(ws.size() == 2 && ws[0] == s.back(),
                  "affine: weights " + shape_string(ws) + " incompatible with input " + shape_string(s));
  const std::size_t a = ws[0], b = ws[1];
  detail::require(bias.shape() == Shape{b}, "affine: bias must have " + std::to_string(b) + " entries");
  const std::size_t rows = s.size() == 1 ? 1 : s[0];
  Shape out_shape = s.size() == 1 ? Shape{b} : Shape{rows, b};
  Array out(out_shape);
  const auto x = input.value().data();
  const auto w = weights.value().data();
  const auto bb = bias.value().data();
  auto y = out.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < b; ++o) {
      double acc = bb[o];
      for (std::size_t i = 0; i < a; ++i) acc += x[r * a + i] * w[i * b + o];
      y[r * b + o] = acc;
    }
  const std::size_t xid = input.id, wid = weights.id, bid = bias.id;
  return input.tape->record("affine", {input, weights, bias}, std::move(out),
                            [=](Tape& t, std::span<const double> gy) {
                              const auto xv = t.value(xid).data();
                              const auto wv = t.value(wid).data();
                              auto gx = t.grad_buffer(xid);
                              auto gw = t.grad_buffer(wid);
                              auto gb = t.grad_buffer(bid);
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t o = 0; o < b; ++o) {
                                  const double g = gy[r * b + o];
                                  if (!gb.empty()) gb[o] += g;
                                  for (std::size_t i = 0; i < a; ++i) {
                                    if (!gx.empty()) gx[r * a + i] += g * wv[i * b + o];
                                    if (!gw.empty()) gw[i * b + o] += g * xv[r * a + i];
                                  }
                                }
                            });
}

// ---------------------------------------------------------------------------
// Reductions, distances and shape plumbing.
// ---------------------------------------------------------------------------

/// Concatenates along the last axis; all leading extents must agree.
inline Var concat_channels(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_channels: no inputs");
  const Shape& first = parts.front().shape();
  detail::require(!first.empty(), "concat_channels: inputs must have rank >= 1");
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    detail::require(s.size() == first.size() && std::equal(s.begin(), s.end() - 1, first.begin()),
                    "concat_channels: leading extents differ (" + shape_string(s) + " vs " +
                        shape_string(first) + ")");
    widths.push_back(s.back());
    total += s.back();
  }
  Shape out_shape = first;
  out_shape.back() = total;
  const std::size_t rows = element_count(first) / std::max<std::size_t>(first.back(), 1);
  Array out(out_shape);
  auto y = out.data();
  std::size_t offset = 0;
  std::vector<std::size_t> ids;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto x = parts[p].value().data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(&x[r * widths[p]], widths[p], &y[r * total + offset]);
    offset += widths[p];
    ids.push_back(parts[p].id);
  }
  return parts.front().tape->record("concat_channels", parts, std::move(out),
                                    [=](Tape& t, std::span<const double> gy) {
                                      std::size_t off = 0;
                                      for (std::size_t p = 0; p < ids.size(); ++p) {
                                        auto gx = t.grad_buffer(ids[p]);
                                        if (!gx.empty()) {
                                          for (std::size_t r = 0; r < rows; ++r)
                                            for (std::size_t j = 0; j < widths[p]; ++j)
                                              gx[r * widths[p] + j] += gy[r * total + off + j];
                                        }
                                        off += widths[p];
                                      }
                                    });
}

inline Var dot(Var u, Var v) {
  detail::require(u.shape().size() == 1 && u.shape() == v.shape(), "dot: operands must be equal-length vectors");
  const auto a = u.value().data();
  const auto b = v.value().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  const std::size_t uid = u.id, vid = v.id;
  return u.tape->record("dot", {u, v}, Array::scalar(acc), [=](Tape& t, std::span<const double> gy) {
    const auto av = t.value(uid).data();
    const auto bv = t.value(vid).data();
    auto gu = t.grad_buffer(uid);
    auto gv = t.grad_buffer(vid);
    for (std::size_t i = 0; i < av.size(); ++i) {
      if (!gu.empty()) gu[i] += gy[0] * bv[i];
      if (!gv.empty()) gv[i] += gy[0] * av[i];
    }
  });
}

namespace detail {

// Row-wise euclidean distance between equally shaped [rows x width] blocks.
inline Var euclidean_impl(Var u, Var v, std::size_t rows, std::size_t width, Shape out_shape,
                          const char* op) {
  const auto a = u.value().data();
  const auto b = v.value().data();
  Array out(std::move(out_shape));
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const double diff = a[r * width + j] - b[r * width + j];
      acc += diff * diff;
    }
    out[r] = std::sqrt(acc);
  }
  const std::size_t uid = u.id, vid = v.id;
  const std::size_t out_id = u.tape->size();
  return u.tape->record(op, {u, v}, std::move(out), [=](Tape& t, std::span<const double> gy) {
    const auto av = t.value(uid).data();
    const auto bv = t.value(vid).data();
    const auto dist = t.value(out_id).data();
    auto gu = t.grad_buffer(uid);
    auto gv = t.grad_buffer(vid);
    for (std::size_t r = 0; r < rows; ++r) {
      // Subgradient 0 at coincident points.
      if (dist[r] == 0.0) continue;
      const double scale = gy[r] / dist[r];
      for (std::size_t j = 0; j < width; ++j) {
        const double g = scale * (av[r * width + j] - bv[r * width + j]);
        if (!gu.empty()) gu[r * width + j] += g;
        if (!gv.empty()) gv[r * width + j] -= g;
      }
    }
  });
}

}  // namespace detail

/// sqrt(sum (u_i - v_i)^2) for equal-length vectors; scalar result.
inline Var euclidean(Var u, Var v) {
  detail::require(u.shape().size() == 1 && u.shape() == v.shape(),
                  "euclidean: operands must be equal-length vectors");
  return detail::euclidean_impl(u, v, 1, u.shape()[0], Shape{}, "euclidean");
}

/// Per-row euclidean distance of two [rows x width] matrices; result [rows].
inline Var euclidean_rows(Var u, Var v) {
  detail::require(u.shape().size() == 2 && u.shape() == v.shape(),
                  "euclidean_rows: operands must be equally shaped matrices");
  return detail::euclidean_impl(u, v, u.shape()[0], u.shape()[1], Shape{u.shape()[0]}, "euclidean_rows");
}

inline Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const std::size_t xid = x.id;
  return x.tape->record("sum", {x}, Array::scalar(acc), [=](Tape& t, std::span<const double> gy) {
    auto gx = t.grad_buffer(xid);
    for (double& g : gx) g += gy[0];
  });
}

/// Sums over the last axis, dropping it.
inline Var sum_last(Var x) {
  const Shape& s = x.shape();
  detail::require(!s.empty(), "sum_last: input must have rank >= 1");
  const std::size_t k = s.back();
  const std::size_t rows = x.value().size() / std::max<std::size_t>(k, 1);
  Array out(Shape(s.begin(), s.end() - 1));
  const auto xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += xv[r * k + j];
    out[r] = acc;
  }
  const std::size_t xid = x.id;
  return x.tape->record("sum_last", {x}, std::move(out), [=](Tape& t, std::span<const double> gy) {
    auto gx = t.grad_buffer(xid);
    if (gx.empty()) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += gy[r];
  });
}

/// [m x k] . [k x n]
inline Var matmul(Var a, Var b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  detail::require(as.size() == 2 && bs.size() == 2 && as[1] == bs[0],
                  "matmul: incompatible " + shape_string(as) + " . " + shape_string(bs));
  const std::size_t m = as[0], k = as[1], n = bs[1];
  Array out(Shape{m, n});
  const auto x = a.value().data();
  const auto y = b.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += xv * y[p * n + j];
    }
  const std::size_t aid = a.id, bid = b.id;
  return a.tape->record("matmul", {a, b}, std::move(out), [=](Tape& t, std::span<const double> g) {
    const auto av = t.value(aid).data();
    const auto bv = t.value(bid).data();
    auto ga = t.grad_buffer(aid);
    auto gb = t.grad_buffer(bid);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          if (!ga.empty()) ga[i * k + p] += gij * bv[p * n + j];
          if (!gb.empty()) gb[p * n + j] += gij * av[i * k + p];
        }
  });
}

/// [m x k] . [n x k]^T, i.e. all pairwise row dot products.
inline Var matmul_nt(Var a, Var b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  detail::require(as.size() == 2 && bs.size() == 2 && as[1] == bs[1],
                  "matmul_nt: incompatible " + shape_string(as) + " . " + shape_string(bs) + "^T");
  const std::size_t m = as[0], k = as[1], n = bs[0];
  Array out(Shape{m, n});
  const auto x = a.value().data();
  const auto y = b.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += x[i * k + p] * y[j * k + p];
      out[i * n + j] = acc;
    }
  const std::size_t aid = a.id, bid = b.id;
  return a.tape->record("matmul_nt", {a, b}, std::move(out), [=](Tape& t, std::span<const double> g) {
    const auto av = t.value(aid).data();
    const auto bv = t.value(bid).data();
    auto ga = t.grad_buffer(aid);
    auto gb = t.grad_buffer(bid);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double gij = g[i * n + j];
        for (std::size_t p = 0; p < k; ++p) {
          if (!ga.empty()) ga[i * k + p] += gij * bv[j * k + p];
          if (!gb.empty()) gb[j * k + p] += gij * av[i * k + p];
        }
      }
  });
}

inline Var transpose(Var a) {
  const Shape& s = a.shape();
  detail::require(s.size() == 2, "transpose: input must be a matrix");
  const std::size_t r = s[0], c = s[1];
  Array out(Shape{c, r});
  const auto x = a.value().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  const std::size_t aid = a.id;
  return a.tape->record("transpose", {a}, std::move(out), [=](Tape& t, std::span<const double> g) {
    auto ga = t.grad_buffer(aid);
    if (ga.empty()) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

inline Var reshape(Var a, Shape shape) {
  detail::require(element_count(shape) == a.value().size(),
                  "reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  const std::size_t aid = a.id;
  return a.tape->record("reshape", {a}, a.value().reshaped(std::move(shape)),
                        [=](Tape& t, std::span<const double> g) {
                          auto ga = t.grad_buffer(aid);
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                        });
}

/// Rows [0, length) of sequence `index` of a [B x h x c] tensor, as [length x c].
inline Var sequence_slice(Var batch, std::size_t index, std::size_t length) {
  const Shape& s = batch.shape();
  detail::require(s.size() == 3 && index < s[0] && length <= s[1], "sequence_slice: out of range");
  const std::size_t h = s[1], c = s[2];
  const std::size_t base = index * h * c;
  const auto x = batch.value().data();
  Array out(Shape{length, c}, std::vector<double>(x.begin() + base, x.begin() + base + length * c));
  const std::size_t bid = batch.id;
  return batch.tape->record("sequence_slice", {batch}, std::move(out),
                            [=](Tape& t, std::span<const double> g) {
                              auto gb = t.grad_buffer(bid);
                              if (gb.empty()) return;
                              for (std::size_t i = 0; i < length * c; ++i) gb[base + i] += g[i];
                            });
}

/// Stacks equally shaped inputs along a new leading axis.
inline Var stack(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "stack: no inputs");
  const Shape& s = parts.front().shape();
  const std::size_t n = element_count(s);
  Shape out_shape{parts.size()};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Array out(out_shape);
  std::vector<std::size_t> ids;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    detail::require(parts[p].shape() == s, "stack: inputs differ in shape");
    const auto x = parts[p].value().data();
    std::copy(x.begin(), x.end(), out.data().begin() + p * n);
    ids.push_back(parts[p].id);
  }
  return parts.front().tape->record("stack", parts, std::move(out),
                                    [=](Tape& t, std::span<const double> g) {
                                      for (std::size_t p = 0; p < ids.size(); ++p) {
                                        auto gx = t.grad_buffer(ids[p]);
                                        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[p * n + i];
                                      }
                                    });
}

/// Per-position convex mixing of block features:
/// out[i] = sum_n weights[i][n] * maps[n][i], weights [h x N], maps [N x h x s].
inline Var block_mix(Var weights, Var maps) {
  const Shape& ws = weights.shape();
  const Shape& ms = maps.shape();
  detail::require(ws.size() == 2 && ms.size() == 3 && ws[0] == ms[1] && ws[1] == ms[0],
                  "block_mix: weights " + shape_string(ws) + " incompatible with maps " + shape_string(ms));
  const std::size_t blocks = ms[0], h = ms[1], s = ms[2];
  Array out(Shape{h, s});
  const auto w = weights.value().data();
  const auto g = maps.value().data();
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t n = 0; n < blocks; ++n) {
      const double a = w[i * blocks + n];
      for (std::size_t j = 0; j < s; ++j) out[i * s + j] += a * g[(n * h + i) * s + j];
    }
  const std::size_t wid = weights.id, mid = maps.id;
  return weights.tape->record("block_mix", {weights, maps}, std::move(out),
                              [=](Tape& t, std::span<const double> gy) {
                                const auto wv = t.value(wid).data();
                                const auto gv = t.value(mid).data();
                                auto gw = t.grad_buffer(wid);
                                auto gm = t.grad_buffer(mid);
                                for (std::size_t i = 0; i < h; ++i)
                                  for (std::size_t n = 0; n < blocks; ++n) {
                                    double acc = 0.0;
                                    for (std::size_t j = 0; j < s; ++j) {
                                      const std::size_t gi = (n * h + i) * s + j;
                                      acc += gy[i * s + j] * gv[gi];
                                      if (!gm.empty()) gm[gi] += wv[i * blocks + n] * gy[i * s + j];
                                    }
                                    if (!gw.empty()) gw[i * blocks + n] += acc;
                                  }
                              });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic.
// ---------------------------------------------------------------------------
namespace detail {

template <class Fwd, class DA, class DB>
Var binary(const char* op, Var a, Var b, Fwd fwd, DA da, DB db) {
  require(a.shape() == b.shape(), std::string(op) + ": shapes differ (" + shape_string(a.shape()) +
                                      " vs " + shape_string(b.shape()) + ")");
  const auto x = a.value().data();
  const auto y = b.value().data();
  Array out(a.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i], y[i]);
  const std::size_t aid = a.id, bid = b.id;
  return a.tape->record(op, {a, b}, std::move(out), [=](Tape& t, std::span<const double> g) {
    const auto xv = t.value(aid).data();
    const auto yv = t.value(bid).data();
    auto ga = t.grad_buffer(aid);
    auto gb = t.grad_buffer(bid);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!ga.empty()) ga[i] += g[i] * da(xv[i], yv[i]);
      if (!gb.empty()) gb[i] += g[i] * db(xv[i], yv[i]);
    }
  });
}

template <class Fwd, class D>
Var unary(const char* op, Var a, Fwd fwd, D deriv) {
  const auto x = a.value().data();
  Array out(a.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  const std::size_t aid = a.id;
  return a.tape->record(op, {a}, std::move(out), [=](Tape& t, std::span<const double> g) {
    const auto xv = t.value(aid).data();
    auto ga = t.grad_buffer(aid);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * deriv(xv[i]);
  });
}

}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::binary("add", a, b, [](double x, double y) { return x + y; },
                        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return detail::binary("sub", a, b, [](double x, double y) { return x - y; },
                        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
  return detail::binary("mul", a, b, [](double x, double y) { return x * y; },
                        [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Var add_scalar(Var a, double c) {
  return detail::unary("add_scalar", a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

inline Var scale(Var a, double c) {
  return detail::unary("scale", a, [c](double x) { return c * x; }, [c](double) { return c; });
}

/// max(0, x); derivative 0 at the kink.
inline Var relu(Var a) {
  return detail::unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var square(Var a) {
  return detail::unary("square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

}  // namespace mrnn
