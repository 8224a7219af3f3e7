#pragma once

// Input-invariance transforms (scale, shape, translation) and synthetic MRI
// acquisition artefacts (ghosting, anisotropy, bias field), each driven by a
// scalar severity. Geometric transforms move the mask with the image;
// artefact transforms leave the mask untouched.

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "mednca/kernels.hpp"
#include "mednca/pipeline.hpp"
#include "mednca/rng.hpp"

namespace mednca {

enum class PerturbKind { kScale, kShape, kTranslate, kGhosting, kAnisotropy, kBiasField };
enum class Axis { kHorizontal, kVertical };

struct PerturbSpec {
  PerturbKind kind = PerturbKind::kScale;
  double severity = 1.0;
  Axis axis = Axis::kVertical;
  std::uint64_t seed = 0;
  i64 num_ghosts = 4;
};

inline std::string perturb_kind_name(PerturbKind k) {
  switch (k) {
    case PerturbKind::kScale: return "scale";
    case PerturbKind::kShape: return "shape";
    case PerturbKind::kTranslate: return "translate";
    case PerturbKind::kGhosting: return "ghosting";
    case PerturbKind::kAnisotropy: return "anisotropy";
    case PerturbKind::kBiasField: return "bias_field";
  }
  return "?";
}

inline PerturbKind perturb_kind_from_name(const std::string& s) {
  if (s == "scale") return PerturbKind::kScale;
  if (s == "shape") return PerturbKind::kShape;
  if (s == "translate") return PerturbKind::kTranslate;
  if (s == "ghosting") return PerturbKind::kGhosting;
  if (s == "anisotropy") return PerturbKind::kAnisotropy;
  if (s == "bias_field") return PerturbKind::kBiasField;
  throw std::invalid_argument("unknown perturbation kind: " + s);
}

namespace perturb_detail {
inline i64 round_to_multiple_of4(double v) {
  i64 r = static_cast<i64>(std::llround(v / 4.0)) * 4;
  return std::max<i64>(r, 8);
}
}  // namespace perturb_detail

// Uniform rescale by r; image bilinear, mask nearest; sizes snapped to
// multiples of 4.
template <typename T>
TrainSample<T> apply_scale(const TrainSample<T>& s, double r) {
  require(r > 0, "apply_scale: r must be positive");
  const i64 outH = perturb_detail::round_to_multiple_of4(r * s.image.dim(1));
  const i64 outW = perturb_detail::round_to_multiple_of4(r * s.image.dim(2));
  require(outH >= 8 && outW >= 8, "apply_scale: result too small");
  if (outH == s.image.dim(1) && outW == s.image.dim(2) && r == 1.0) return s;
  TrainSample<T> out;
  out.image = resample_bilinear(s.image, outH, outW);
  out.mask = resample_nearest(s.mask, outH, outW);
  return out;
}

// Anisotropic stretch along one axis only.
template <typename T>
TrainSample<T> apply_shape(const TrainSample<T>& s, double rv, Axis axis) {
  require(rv > 0, "apply_shape: rv must be positive");
  i64 outH = s.image.dim(1), outW = s.image.dim(2);
  if (axis == Axis::kVertical) outH = perturb_detail::round_to_multiple_of4(rv * outH);
  else outW = perturb_detail::round_to_multiple_of4(rv * outW);
  require(outH >= 8 && outW >= 8, "apply_shape: result too small");
  if (outH == s.image.dim(1) && outW == s.image.dim(2) && rv == 1.0) return s;
  TrainSample<T> out;
  out.image = resample_bilinear(s.image, outH, outW);
  out.mask = resample_nearest(s.mask, outH, outW);
  return out;
}

// Shift by t pixels along the axis; vacated region filled with 0 in both
// image and mask, shifted-out content discarded.
template <typename T>
TrainSample<T> apply_translate(const TrainSample<T>& s, i64 t, Axis axis) {
  const i64 H = s.image.dim(1), W = s.image.dim(2);
  require(std::abs(t) < (axis == Axis::kVertical ? H : W), "apply_translate: |t| >= side");
  auto shift = [&](const Tensor<T>& in) {
    Tensor<T> out({1, H, W}, T(0));
    for (i64 y = 0; y < H; ++y)
      for (i64 x = 0; x < W; ++x) {
        const i64 sy = axis == Axis::kVertical ? y - t : y;
        const i64 sx = axis == Axis::kHorizontal ? x - t : x;
        if (sy >= 0 && sy < H && sx >= 0 && sx < W) out.at3(0, y, x) = in.at3(0, sy, sx);
      }
    return out;
  };
  TrainSample<T> out;
  out.image = shift(s.image);
  out.mask = shift(s.mask);
  return out;
}

namespace perturb_detail {

// naive 1D DFT, exact enough at these line lengths
inline void dft(const std::vector<std::complex<double>>& in,
                std::vector<std::complex<double>>& out, bool inverse) {
  const std::size_t N = in.size();
  out.assign(N, {0.0, 0.0});
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < N; ++k) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t j = 0; j < N; ++j) {
      const double ang = sign * 6.283185307179586476925286766559 *
                         static_cast<double>(k * j % N) / static_cast<double>(N);
      acc += in[j] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = inverse ? acc / static_cast<double>(N) : acc;
  }
}

}  // namespace perturb_detail

// Ghosting: attenuate every k-th frequency line along the chosen axis by
// (1 - s), sparing the DC component and the central 6% of the spectrum.
template <typename T>
Tensor<T> apply_ghosting(const Tensor<T>& image, i64 num_ghosts, double s, Axis axis) {
  require(num_ghosts >= 2, "apply_ghosting: num_ghosts must be >= 2");
  require(s >= 0.0 && s <= 1.0, "apply_ghosting: intensity in [0,1]");
  const i64 H = image.dim(1), W = image.dim(2);
  const i64 N = axis == Axis::kVertical ? H : W;
  const i64 lines = axis == Axis::kVertical ? W : H;
  const i64 guard = static_cast<i64>(std::floor(0.03 * static_cast<double>(N)));

  Tensor<T> out({1, H, W});
  std::vector<std::complex<double>> line(static_cast<std::size_t>(N)), freq, back;
  for (i64 l = 0; l < lines; ++l) {
    for (i64 j = 0; j < N; ++j) {
      const i64 y = axis == Axis::kVertical ? j : l;
      const i64 x = axis == Axis::kVertical ? l : j;
      line[static_cast<std::size_t>(j)] = {static_cast<double>(image.at3(0, y, x)), 0.0};
    }
    perturb_detail::dft(line, freq, false);
    for (i64 j = 0; j < N; ++j) {
      i64 f = j <= N / 2 ? j : j - N;  // signed frequency index
      const i64 af = std::abs(f);
      if (af <= guard) continue;  // preserve DC and the low-frequency core
      if (af % num_ghosts == 0) freq[static_cast<std::size_t>(j)] *= (1.0 - s);
    }
    perturb_detail::dft(freq, back, true);
    for (i64 j = 0; j < N; ++j) {
      const i64 y = axis == Axis::kVertical ? j : l;
      const i64 x = axis == Axis::kVertical ? l : j;
      out.at3(0, y, x) = static_cast<T>(std::clamp(back[static_cast<std::size_t>(j)].real(), 0.0, 1.0));
    }
  }
  return out;
}

// Anisotropy: area-average pool by factor f along one axis (partial trailing
// block allowed), then bilinear upsample back — thick-slice simulation.
template <typename T>
Tensor<T> apply_anisotropy(const Tensor<T>& image, i64 f, Axis axis) {
  require(f >= 1, "apply_anisotropy: factor must be >= 1");
  if (f == 1) return image;
  const i64 H = image.dim(1), W = image.dim(2);
  const i64 L = axis == Axis::kVertical ? H : W;
  const i64 outL = (L + f - 1) / f;
  const i64 loH = axis == Axis::kVertical ? outL : H;
  const i64 loW = axis == Axis::kVertical ? W : outL;
  Tensor<T> lo({1, loH, loW});
  for (i64 y = 0; y < loH; ++y)
    for (i64 x = 0; x < loW; ++x) {
      const i64 j0 = (axis == Axis::kVertical ? y : x) * f;
      const i64 j1 = std::min(j0 + f, L);
      T acc = 0;
      for (i64 j = j0; j < j1; ++j)
        acc += axis == Axis::kVertical ? image.at3(0, j, x) : image.at3(0, y, j);
      lo.at3(0, y, x) = acc / static_cast<T>(j1 - j0);
    }
  return resample_bilinear(lo, H, W);
}

// Bias field: multiply by exp of a random degree-3 polynomial in normalized
// coordinates, coefficients uniform in [-m, m].
template <typename T>
Tensor<T> apply_bias_field(const Tensor<T>& image, double m, std::uint64_t seed) {
  require(m >= 0, "apply_bias_field: magnitude must be >= 0");
  const i64 H = image.dim(1), W = image.dim(2);
  Rng rng(mix64(seed, 0xb1a5ULL));
  // c_ij for i+j <= 3, (i,j) != (0,0), in fixed (i,j) order
  double c[4][4] = {};
  for (int i = 0; i <= 3; ++i)
    for (int j = 0; j + i <= 3; ++j) {
      if (i == 0 && j == 0) continue;
      c[i][j] = rng.uniform(-m, m);
    }
  Tensor<T> out({1, H, W});
  for (i64 y = 0; y < H; ++y) {
    const double v = H > 1 ? 2.0 * static_cast<double>(y) / (H - 1) - 1.0 : 0.0;
    for (i64 x = 0; x < W; ++x) {
      const double u = W > 1 ? 2.0 * static_cast<double>(x) / (W - 1) - 1.0 : 0.0;
      double p = 0.0;
      double ui = 1.0;
      for (int i = 0; i <= 3; ++i) {
        double vj = 1.0;
        for (int j = 0; j + i <= 3; ++j) {
          if (!(i == 0 && j == 0)) p += c[i][j] * ui * vj;
          vj *= v;
        }
        ui *= u;
      }
      out.at3(0, y, x) =
          static_cast<T>(std::clamp(static_cast<double>(image.at3(0, y, x)) * std::exp(p), 0.0, 1.0));
    }
  }
  return out;
}

// Dispatch on a PerturbSpec. Geometric kinds transform image and mask; the
// artefact kinds only touch the image.
template <typename T>
TrainSample<T> apply_perturbation(const TrainSample<T>& s, const PerturbSpec& spec) {
  switch (spec.kind) {
    case PerturbKind::kScale: return apply_scale(s, spec.severity);
    case PerturbKind::kShape: return apply_shape(s, spec.severity, spec.axis);
    case PerturbKind::kTranslate: {
      const i64 side = spec.axis == Axis::kVertical ? s.image.dim(1) : s.image.dim(2);
      const i64 t = static_cast<i64>(std::llround(spec.severity * static_cast<double>(side)));
      return apply_translate(s, t, spec.axis);
    }
    case PerturbKind::kGhosting: {
      TrainSample<T> out;
      out.image = apply_ghosting(s.image, spec.num_ghosts, spec.severity, spec.axis);
      out.mask = s.mask;
      return out;
    }
    case PerturbKind::kAnisotropy: {
      TrainSample<T> out;
      out.image = apply_anisotropy(s.image, static_cast<i64>(spec.severity), spec.axis);
      out.mask = s.mask;
      return out;
    }
    case PerturbKind::kBiasField: {
      TrainSample<T> out;
      out.image = apply_bias_field(s.image, spec.severity, spec.seed);
      out.mask = s.mask;
      return out;
    }
  }
  throw std::invalid_argument("apply_perturbation: unknown kind");
}

// Default severity grids, bracketing the protocol figures.
inline std::vector<double> default_severity_grid(PerturbKind k) {
  switch (k) {
    case PerturbKind::kScale: return {0.5, 0.8, 1.0, 1.2, 1.5, 2.0};
    case PerturbKind::kShape: return {0.5, 0.75, 1.0, 1.25, 1.5, 2.0};
    case PerturbKind::kTranslate: return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    case PerturbKind::kGhosting: return {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    case PerturbKind::kAnisotropy: return {1, 2, 4, 6, 8};
    case PerturbKind::kBiasField: return {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  }
  return {};
}

}  // namespace mednca
