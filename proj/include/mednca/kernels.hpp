#pragma once

// Forward and backward compute kernels for the fixed op set the NCA needs.
// All kernels accumulate in a fixed per-element order so that results are
// bit-identical across runs and across spatial shifts of the input.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "mednca/tensor.hpp"

namespace mednca {

using i64 = std::int64_t;

// Deterministic reductions with a fixed 8-lane structure: lane l accumulates
// elements at positions congruent to l mod 8 and the lanes are combined in a
// fixed tree, so results are reproducible bit-for-bit. Used only for gradient
// reductions, where shift-equivariance of the accumulation order is not
// required. The float path is written with gcc vector extensions because the
// scalar lane loop does not get auto-vectorized.
namespace lanes_detail {

template <typename T>
struct LaneAcc {
  T lane[8] = {};

  void mac(const T* a, const T* b, i64 n) {
    i64 i = 0;
    for (; i + 8 <= n; i += 8)
      for (int l = 0; l < 8; ++l) lane[l] += a[i + l] * b[i + l];
    for (int l = 0; i < n; ++i, ++l) lane[l] += a[i] * b[i];
  }
  void add(const T* a, i64 n) {
    i64 i = 0;
    for (; i + 8 <= n; i += 8)
      for (int l = 0; l < 8; ++l) lane[l] += a[i + l];
    for (int l = 0; i < n; ++i, ++l) lane[l] += a[i];
  }
  T reduce() const {
    const T s0 = lane[0] + lane[4], s1 = lane[1] + lane[5];
    const T s2 = lane[2] + lane[6], s3 = lane[3] + lane[7];
    return (s0 + s2) + (s1 + s3);
  }
};

#if defined(__GNUC__) && !defined(__clang__)
typedef float v8f __attribute__((vector_size(32)));

template <>
struct LaneAcc<float> {
  v8f acc = {0, 0, 0, 0, 0, 0, 0, 0};
  float tail[8] = {};

  void mac(const float* a, const float* b, i64 n) {
    i64 i = 0;
    for (; i + 8 <= n; i += 8) {
      v8f va, vb;
      __builtin_memcpy(&va, a + i, sizeof va);
      __builtin_memcpy(&vb, b + i, sizeof vb);
      acc += va * vb;
    }
    for (int l = 0; i < n; ++i, ++l) tail[l] += a[i] * b[i];
  }
  void add(const float* a, i64 n) {
    i64 i = 0;
    for (; i + 8 <= n; i += 8) {
      v8f va;
      __builtin_memcpy(&va, a + i, sizeof va);
      acc += va;
    }
    for (int l = 0; i < n; ++i, ++l) tail[l] += a[i];
  }
  float reduce() const {
    float lane[8];
    __builtin_memcpy(lane, &acc, sizeof lane);
    for (int l = 0; l < 8; ++l) lane[l] += tail[l];
    const float s0 = lane[0] + lane[4], s1 = lane[1] + lane[5];
    const float s2 = lane[2] + lane[6], s3 = lane[3] + lane[7];
    return (s0 + s2) + (s1 + s3);
  }
};
#endif

}  // namespace lanes_detail

template <typename T>
T dot_lanes(const T* a, const T* b, i64 n) {
  lanes_detail::LaneAcc<T> acc;
  acc.mac(a, b, n);
  return acc.reduce();
}

// Row-strided variant: one horizontal reduction for the whole tile.
template <typename T>
T dot_lanes_2d(const T* a, i64 lda, const T* b, i64 ldb, i64 rows, i64 n) {
  lanes_detail::LaneAcc<T> acc;
  for (i64 r = 0; r < rows; ++r) acc.mac(a + r * lda, b + r * ldb, n);
  return acc.reduce();
}

template <typename T>
T sum_lanes(const T* a, i64 n) {
  lanes_detail::LaneAcc<T> acc;
  acc.add(a, n);
  return acc.reduce();
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// reflect(-1, L) = 1, reflect(L, L) = L-2 (mirror without edge repetition).
inline i64 reflect_index(i64 i, i64 len) {
  if (i < 0) return -i;
  if (i >= len) return 2 * len - 2 - i;
  return i;
}

// ---------------------------------------------------------------------------
// Reflect padding

template <typename T>
Tensor<T> pad_reflect1(const Tensor<T>& in) {
  const i64 C = in.dim(0), H = in.dim(1), W = in.dim(2);
  require(H >= 2 && W >= 2, "pad_reflect1: H and W must be >= 2");
  Tensor<T> out({C, H + 2, W + 2});
  for (i64 c = 0; c < C; ++c)
    for (i64 y = -1; y <= H; ++y) {
      const i64 sy = reflect_index(y, H);
      T* dst = &out.at3(c, y + 1, 0);
      const T* src = &in.at3(c, sy, 0);
      dst[0] = src[1];
      for (i64 x = 0; x < W; ++x) dst[x + 1] = src[x];
      dst[W + 1] = src[W - 2];
    }
  return out;
}

// General reflect pad (used for non-divisible inference sizes).
template <typename T>
Tensor<T> pad_reflect(const Tensor<T>& in, i64 top, i64 bottom, i64 left, i64 right) {
  const i64 C = in.dim(0), H = in.dim(1), W = in.dim(2);
  require(top < H && bottom < H && left < W && right < W, "pad_reflect: pad too large");
  Tensor<T> out({C, H + top + bottom, W + left + right});
  for (i64 c = 0; c < C; ++c)
    for (i64 y = 0; y < H + top + bottom; ++y) {
      const i64 sy = reflect_index(y - top, H);
      for (i64 x = 0; x < W + left + right; ++x)
        out.at3(c, y, x) = in.at3(c, sy, reflect_index(x - left, W));
    }
  return out;
}

// ---------------------------------------------------------------------------
// 3x3 convolution with reflect padding

template <typename T>
void conv3x3_reflect_into(const Tensor<T>& in, const Tensor<T>& weight,
                          const Tensor<T>& bias, Tensor<T>& out, Tensor<T>& pad_scratch) {
  const i64 C = in.dim(0), H = in.dim(1), W = in.dim(2);
  const i64 K = weight.dim(0);
  require(in.rank() == 3, "conv3x3_reflect: input must be CxHxW");
  require(weight.rank() == 4 && weight.dim(1) == C && weight.dim(2) == 3 && weight.dim(3) == 3,
          "conv3x3_reflect: weight must be KxCx3x3 with matching C");
  require(bias.rank() == 1 && bias.dim(0) == K, "conv3x3_reflect: bias must be K");
  pad_scratch = pad_reflect1(in);
  const i64 PW = W + 2;
  if (out.shape() != std::vector<i64>{K, H, W}) out = Tensor<T>({K, H, W});
  for (i64 k = 0; k < K; ++k) {
    const T b = bias[k];
    for (i64 y = 0; y < H; ++y) {
      T* orow = &out.at3(k, y, 0);
      for (i64 x = 0; x < W; ++x) orow[x] = b;
      for (i64 c = 0; c < C; ++c) {
        const T* wk = &weight[(k * C + c) * 9];
        for (i64 dy = 0; dy < 3; ++dy) {
          const T* prow = &pad_scratch.at3(c, y + dy, 0);
          const T w0 = wk[dy * 3 + 0], w1 = wk[dy * 3 + 1], w2 = wk[dy * 3 + 2];
          for (i64 x = 0; x < W; ++x) {
            T acc = orow[x];
            acc += w0 * prow[x];
            acc += w1 * prow[x + 1];
            acc += w2 * prow[x + 2];
            orow[x] = acc;
          }
        }
      }
    }
  }
  (void)PW;
}

template <typename T>
Tensor<T> conv3x3_reflect(const Tensor<T>& in, const Tensor<T>& weight, const Tensor<T>& bias) {
  Tensor<T> out, scratch;
  conv3x3_reflect_into(in, weight, bias, out, scratch);
  return out;
}

// Backward: accumulates into grad_in / grad_w / grad_b (callers zero-init).
template <typename T>
void conv3x3_reflect_backward(const Tensor<T>& in, const Tensor<T>& weight,
                              const Tensor<T>& grad_out, Tensor<T>& grad_in,
                              Tensor<T>& grad_w, Tensor<T>& grad_b) {
  const i64 C = in.dim(0), H = in.dim(1), W = in.dim(2);
  const i64 K = weight.dim(0);
  Tensor<T> pad = pad_reflect1(in);
  Tensor<T> gpad({C, H + 2, W + 2});

  for (i64 k = 0; k < K; ++k) {
    grad_b[k] += sum_lanes(&grad_out.at3(k, 0, 0), H * W);

    for (i64 c = 0; c < C; ++c) {
      T* gw = &grad_w[(k * C + c) * 9];
      const T* w = &weight[(k * C + c) * 9];
      for (i64 dy = 0; dy < 3; ++dy) {
        for (i64 dx = 0; dx < 3; ++dx)
          gw[dy * 3 + dx] += dot_lanes_2d(&grad_out.at3(k, 0, 0), W,
                                          &pad.at3(c, dy, dx), W + 2, H, W);
        // input gradient: scatter into the padded buffer, one axpy pass per
        // tap so no iteration writes a slot the next one reads
        T* gprow_base = &gpad.at3(c, 0, 0);
        const i64 PW = W + 2;
        for (i64 y = 0; y < H; ++y) {
          const T* grow = &grad_out.at3(k, y, 0);
          T* gprow = gprow_base + (y + dy) * PW;
          for (i64 dx = 0; dx < 3; ++dx) {
            const T wv = w[dy * 3 + dx];
            T* dst = gprow + dx;
            for (i64 x = 0; x < W; ++x) dst[x] += wv * grow[x];
          }
        }
      }
    }
  }

  // Fold padded-border gradients back through the reflect map.
  for (i64 c = 0; c < C; ++c) {
    for (i64 y = -1; y <= H; ++y) {
      const i64 sy = reflect_index(y, H);
      for (i64 x = -1; x <= W; ++x) {
        const i64 sx = reflect_index(x, W);
        grad_in.at3(c, sy, sx) += gpad.at3(c, y + 1, x + 1);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Per-cell dense layer (1x1 convolution): out[m,p] = bias[m] + sum_c w[m,c] in[c,p]

template <typename T>
void dense_per_cell_into(const Tensor<T>& in, const Tensor<T>& weight, const Tensor<T>* bias,
                         Tensor<T>& out) {
  require(in.rank() == 3, "dense_per_cell: input must be CxHxW");
  const i64 C = in.dim(0), H = in.dim(1), W = in.dim(2);
  const i64 M = weight.dim(0);
  require(weight.rank() == 2 && weight.dim(1) == C, "dense_per_cell: weight must be MxC");
  if (bias) require(bias->rank() == 1 && bias->dim(0) == M, "dense_per_cell: bias must be M");
  const i64 A = H * W;
  if (out.shape() != std::vector<i64>{M, H, W}) out = Tensor<T>({M, H, W});
  for (i64 m = 0; m < M; ++m) {
    T* orow = out.data() + m * A;
    const T b = bias ? (*bias)[m] : T(0);
    for (i64 p = 0; p < A; ++p) orow[p] = b;
    const T* wrow = weight.data() + m * C;
    i64 c = 0;
    for (; c + 4 <= C; c += 4) {
      const T w0 = wrow[c], w1 = wrow[c + 1], w2 = wrow[c + 2], w3 = wrow[c + 3];
      const T* i0 = in.data() + c * A;
      const T* i1 = i0 + A;
      const T* i2 = i1 + A;
      const T* i3 = i2 + A;
      for (i64 p = 0; p < A; ++p) {
        T acc = orow[p];
        acc += w0 * i0[p];
        acc += w1 * i1[p];
        acc += w2 * i2[p];
        acc += w3 * i3[p];
        orow[p] = acc;
      }
    }
    for (; c < C; ++c) {
      const T w0 = wrow[c];
      const T* i0 = in.data() + c * A;
      for (i64 p = 0; p < A; ++p) orow[p] += w0 * i0[p];
    }
  }
}

template <typename T>
Tensor<T> dense_per_cell(const Tensor<T>& in, const Tensor<T>& weight,
                         const Tensor<T>* bias = nullptr) {
  Tensor<T> out;
  dense_per_cell_into(in, weight, bias, out);
  return out;
}

template <typename T>
void dense_per_cell_backward(const Tensor<T>& in, const Tensor<T>& weight,
                             const Tensor<T>& grad_out, Tensor<T>& grad_in,
                             Tensor<T>& grad_w, Tensor<T>* grad_b) {
  const i64 C = in.dim(0), A = in.dim(1) * in.dim(2);
  const i64 M = weight.dim(0);
  for (i64 m = 0; m < M; ++m) {
    const T* g = grad_out.data() + m * A;
    if (grad_b) (*grad_b)[m] += sum_lanes(g, A);
    T* gw = grad_w.data() + m * C;
    const T* wrow = weight.data() + m * C;
    for (i64 c = 0; c < C; ++c) {
      const T* irow = in.data() + c * A;
      gw[c] += dot_lanes(g, irow, A);
      T* girow = grad_in.data() + c * A;
      const T w = wrow[c];
      for (i64 p = 0; p < A; ++p) girow[p] += w * g[p];
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> relu(const Tensor<T>& in) {
  Tensor<T> out(in.shape());
  for (i64 i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
  return out;
}

template <typename T>
void relu_backward(const Tensor<T>& in, const Tensor<T>& grad_out, Tensor<T>& grad_in) {
  for (i64 i = 0; i < in.size(); ++i)
    if (in[i] > T(0)) grad_in[i] += grad_out[i];
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& in) {
  Tensor<T> out(in.shape());
  for (i64 i = 0; i < in.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-in[i]));
  return out;
}

template <typename T>
void sigmoid_backward(const Tensor<T>& out, const Tensor<T>& grad_out, Tensor<T>& grad_in) {
  for (i64 i = 0; i < out.size(); ++i) grad_in[i] += grad_out[i] * out[i] * (T(1) - out[i]);
}

// ---------------------------------------------------------------------------
// Channel concat / slice / crop

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  require(!parts.empty(), "concat_channels: empty argument list");
  const i64 H = parts[0]->dim(1), W = parts[0]->dim(2);
  i64 C = 0;
  for (auto* p : parts) {
    require(p->rank() == 3 && p->dim(1) == H && p->dim(2) == W,
            "concat_channels: spatial mismatch");
    C += p->dim(0);
  }
  Tensor<T> out({C, H, W});
  i64 off = 0;
  for (auto* p : parts) {
    std::copy(p->data(), p->data() + p->size(), out.data() + off);
    off += p->size();
  }
  return out;
}

template <typename T>
Tensor<T> slice_channel(const Tensor<T>& in, i64 c) {
  const i64 H = in.dim(1), W = in.dim(2);
  require(c >= 0 && c < in.dim(0), "slice_channel: out of range");
  Tensor<T> out({1, H, W});
  std::copy(&in.at3(c, 0, 0), &in.at3(c, 0, 0) + H * W, out.data());
  return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& in, i64 top, i64 left, i64 outH, i64 outW) {
  const i64 C = in.dim(0), H = in.dim(1), W = in.dim(2);
  require(top >= 0 && left >= 0 && top + outH <= H && left + outW <= W,
          "crop: window out of bounds");
  Tensor<T> out({C, outH, outW});
  for (i64 c = 0; c < C; ++c)
    for (i64 y = 0; y < outH; ++y)
      std::copy(&in.at3(c, top + y, left), &in.at3(c, top + y, left) + outW,
                &out.at3(c, y, 0));
  return out;
}

// ---------------------------------------------------------------------------
// Resampling

enum class ResampleMode { kNearest, kAverageArea, kBilinear };

template <typename T>
Tensor<T> resample_nearest(const Tensor<T>& in, i64 outH, i64 outW) {
  const i64 C = in.dim(0), H = in.dim(1), W = in.dim(2);
  require(outH >= 1 && outW >= 1, "resample: output size must be >= 1");
  Tensor<T> out({C, outH, outW});
  std::vector<i64> sx(static_cast<std::size_t>(outW));
  for (i64 x = 0; x < outW; ++x) {
    i64 s = static_cast<i64>(std::floor((static_cast<double>(x) + 0.5) * W / outW));
    sx[static_cast<std::size_t>(x)] = std::clamp<i64>(s, 0, W - 1);
  }
  for (i64 c = 0; c < C; ++c)
    for (i64 y = 0; y < outH; ++y) {
      i64 sy = static_cast<i64>(std::floor((static_cast<double>(y) + 0.5) * H / outH));
      sy = std::clamp<i64>(sy, 0, H - 1);
      const T* src = &in.at3(c, sy, 0);
      T* dst = &out.at3(c, y, 0);
      for (i64 x = 0; x < outW; ++x) dst[x] = src[sx[static_cast<std::size_t>(x)]];
    }
  return out;
}

template <typename T>
void resample_nearest_backward(i64 H, i64 W, const Tensor<T>& grad_out, Tensor<T>& grad_in) {
  const i64 C = grad_out.dim(0), outH = grad_out.dim(1), outW = grad_out.dim(2);
  for (i64 c = 0; c < C; ++c)
    for (i64 y = 0; y < outH; ++y) {
      i64 sy = std::clamp<i64>(
          static_cast<i64>(std::floor((static_cast<double>(y) + 0.5) * H / outH)), 0, H - 1);
      for (i64 x = 0; x < outW; ++x) {
        i64 sx = std::clamp<i64>(
            static_cast<i64>(std::floor((static_cast<double>(x) + 0.5) * W / outW)), 0, W - 1);
        grad_in.at3(c, sy, sx) += grad_out.at3(c, y, x);
      }
    }
}

template <typename T>
Tensor<T> resample_average_area(const Tensor<T>& in, i64 outH, i64 outW) {
  const i64 C = in.dim(0), H = in.dim(1), W = in.dim(2);
  require(outH >= 1 && outW >= 1, "resample: output size must be >= 1");
  require(H % outH == 0 && W % outW == 0,
          "resample average-area: requires integer downscale factor");
  const i64 fy = H / outH, fx = W / outW;
  const T inv = T(1) / static_cast<T>(fy * fx);
  Tensor<T> out({C, outH, outW});
  for (i64 c = 0; c < C; ++c)
    for (i64 y = 0; y < outH; ++y)
      for (i64 x = 0; x < outW; ++x) {
        T acc = 0;
        for (i64 dy = 0; dy < fy; ++dy) {
          const T* row = &in.at3(c, y * fy + dy, x * fx);
          for (i64 dx = 0; dx < fx; ++dx) acc += row[dx];
        }
        out.at3(c, y, x) = acc * inv;
      }
  return out;
}

template <typename T>
void resample_average_area_backward(i64 H, i64 W, const Tensor<T>& grad_out,
                                    Tensor<T>& grad_in) {
  const i64 C = grad_out.dim(0), outH = grad_out.dim(1), outW = grad_out.dim(2);
  const i64 fy = H / outH, fx = W / outW;
  const T inv = T(1) / static_cast<T>(fy * fx);
  for (i64 c = 0; c < C; ++c)
    for (i64 y = 0; y < outH; ++y)
      for (i64 x = 0; x < outW; ++x) {
        const T g = grad_out.at3(c, y, x) * inv;
        for (i64 dy = 0; dy < fy; ++dy) {
          T* row = &grad_in.at3(c, y * fy + dy, x * fx);
          for (i64 dx = 0; dx < fx; ++dx) row[dx] += g;
        }
      }
}

// align-corners-false bilinear
template <typename T>
Tensor<T> resample_bilinear(const Tensor<T>& in, i64 outH, i64 outW) {
  const i64 C = in.dim(0), H = in.dim(1), W = in.dim(2);
  require(outH >= 1 && outW >= 1, "resample: output size must be >= 1");
  Tensor<T> out({C, outH, outW});
  for (i64 c = 0; c < C; ++c)
    for (i64 y = 0; y < outH; ++y) {
      double sy = (static_cast<double>(y) + 0.5) * H / outH - 0.5;
      sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
      const i64 y0 = static_cast<i64>(std::floor(sy));
      const i64 y1 = std::min(y0 + 1, H - 1);
      const T wy = static_cast<T>(sy - static_cast<double>(y0));
      for (i64 x = 0; x < outW; ++x) {
        double sxd = (static_cast<double>(x) + 0.5) * W / outW - 0.5;
        sxd = std::clamp(sxd, 0.0, static_cast<double>(W - 1));
        const i64 x0 = static_cast<i64>(std::floor(sxd));
        const i64 x1 = std::min(x0 + 1, W - 1);
        const T wx = static_cast<T>(sxd - static_cast<double>(x0));
        const T v00 = in.at3(c, y0, x0), v01 = in.at3(c, y0, x1);
        const T v10 = in.at3(c, y1, x0), v11 = in.at3(c, y1, x1);
        const T top = v00 + (v01 - v00) * wx;
        const T bot = v10 + (v11 - v10) * wx;
        out.at3(c, y, x) = top + (bot - top) * wy;
      }
    }
  return out;
}

template <typename T>
Tensor<T> resample(const Tensor<T>& in, i64 outH, i64 outW, ResampleMode mode) {
  switch (mode) {
    case ResampleMode::kNearest: return resample_nearest(in, outH, outW);
    case ResampleMode::kAverageArea: return resample_average_area(in, outH, outW);
    case ResampleMode::kBilinear: return resample_bilinear(in, outH, outW);
  }
  throw std::invalid_argument("resample: unknown mode");
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (i64 i = 0; i < t.size(); ++i)
    if (!std::isfinite(static_cast<double>(t[i]))) return false;
  return true;
}

}  // namespace mednca
