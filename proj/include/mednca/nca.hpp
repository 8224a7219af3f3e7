#pragma once

// Backbone NCA: parameter container, initialization, the asynchronous update
// step and multi-step rollout, in both taped (training) and raw (inference)
// forms.

#include <cstdint>

#include "mednca/kernels.hpp"
#include "mednca/rng.hpp"
#include "mednca/tape.hpp"
#include "mednca/tensor.hpp"

namespace mednca {

struct NcaConfig {
  i64 n = 32;             // state channels
  i64 h = 128;            // hidden size of the update MLP
  i64 img_channels = 1;   // leading channels reserved for the image
  double fire_rate = 0.5; // per-cell activation probability
  i64 steps = 32;         // rollout length per stage

  void validate() const {
    require(n > img_channels + 1, "NcaConfig: n must exceed img_channels + 1");
    require(fire_rate > 0.0 && fire_rate <= 1.0, "NcaConfig: fire_rate in (0, 1]");
    require(h >= 1 && steps >= 0, "NcaConfig: invalid h or steps");
  }
};

// Trainable parameters of one backbone. dense2 deliberately has no bias.
template <typename T>
struct BackboneParams {
  Tensor<T> conv1_w, conv1_b;  // n x n x 3 x 3, n
  Tensor<T> conv2_w, conv2_b;
  Tensor<T> dense1_w, dense1_b;  // h x 3n, h
  Tensor<T> dense2_w;            // n x h

  template <typename F>
  void for_each(F&& f) {
    f(conv1_w); f(conv1_b); f(conv2_w); f(conv2_b);
    f(dense1_w); f(dense1_b); f(dense2_w);
  }
  template <typename F>
  void for_each(F&& f) const {
    f(conv1_w); f(conv1_b); f(conv2_w); f(conv2_b);
    f(dense1_w); f(dense1_b); f(dense2_w);
  }

  i64 element_count() const {
    i64 total = 0;
    for_each([&](const Tensor<T>& t) { total += t.size(); });
    return total;
  }

  template <typename U>
  BackboneParams<U> cast() const {
    BackboneParams<U> out;
    out.conv1_w = conv1_w.template cast<U>();
    out.conv1_b = conv1_b.template cast<U>();
    out.conv2_w = conv2_w.template cast<U>();
    out.conv2_b = conv2_b.template cast<U>();
    out.dense1_w = dense1_w.template cast<U>();
    out.dense1_b = dense1_b.template cast<U>();
    out.dense2_w = dense2_w.template cast<U>();
    return out;
  }
};

// 2*(9n^2+n) + (3nh+h) + hn trainable scalars per backbone.
inline i64 param_count(i64 n, i64 h) {
  require(n >= 1 && h >= 1, "param_count: n, h must be >= 1");
  return 2 * (9 * n * n + n) + (3 * n * h + h) + h * n;
}

// Conv and dense1 weights uniform in [-sqrt(1/fan_in), sqrt(1/fan_in)];
// biases zero; dense2 all zero so the untrained NCA is the identity map.
template <typename T>
BackboneParams<T> init_params(const NcaConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const i64 n = cfg.n, h = cfg.h;
  Rng rng(mix64(seed, 0x6263616d61636e64ULL));
  BackboneParams<T> p;
  p.conv1_w = Tensor<T>({n, n, 3, 3});
  p.conv1_b = Tensor<T>({n});
  p.conv2_w = Tensor<T>({n, n, 3, 3});
  p.conv2_b = Tensor<T>({n});
  p.dense1_w = Tensor<T>({h, 3 * n});
  p.dense1_b = Tensor<T>({h});
  p.dense2_w = Tensor<T>({n, h});

  auto fill_uniform = [&](Tensor<T>& t, i64 fan_in) {
    const double a = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (i64 i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-a, a));
  };
  fill_uniform(p.conv1_w, 9 * n);
  fill_uniform(p.conv2_w, 9 * n);
  fill_uniform(p.dense1_w, 3 * n);
  // dense2_w stays zero
  return p;
}

// Parameter ids of one backbone registered on a tape.
struct BackboneIds {
  int conv1_w, conv1_b, conv2_w, conv2_b, dense1_w, dense1_b, dense2_w;
};

template <typename T>
BackboneIds register_params(Tape<T>& tape, const BackboneParams<T>& p) {
  BackboneIds ids;
  ids.conv1_w = tape.parameter(p.conv1_w);
  ids.conv1_b = tape.parameter(p.conv1_b);
  ids.conv2_w = tape.parameter(p.conv2_w);
  ids.conv2_b = tape.parameter(p.conv2_b);
  ids.dense1_w = tape.parameter(p.dense1_w);
  ids.dense1_b = tape.parameter(p.dense1_b);
  ids.dense2_w = tape.parameter(p.dense2_w);
  return ids;
}

// One asynchronous update: perceive with two parallel 3x3 convs, concat with
// the state (3n channels), two dense layers, then a residual update gated by
// the per-cell fire mask. Image channels are not re-imposed here.
template <typename T>
int nca_step_tape(Tape<T>& tape, int state, const BackboneIds& p, const NcaConfig& cfg,
                  std::uint64_t mask_seed, i64 step_index) {
  require(tape.value(state).dim(0) == cfg.n, "nca_step: state channel mismatch");
  int p1 = tape.conv3x3_reflect(state, p.conv1_w, p.conv1_b);
  int p2 = tape.conv3x3_reflect(state, p.conv2_w, p.conv2_b);
  int z = tape.concat_channels({state, p1, p2});
  int d1 = tape.dense_per_cell(z, p.dense1_w, p.dense1_b);
  int r = tape.relu(d1);
  int delta = tape.dense_per_cell(r, p.dense2_w, Tape<T>::kNoId);
  int gated = tape.mul_fire_mask(delta, mask_seed, step_index, cfg.fire_rate);
  return tape.add(state, gated);
}

template <typename T>
int rollout_tape(Tape<T>& tape, int state, const BackboneIds& p, const NcaConfig& cfg,
                 i64 steps, std::uint64_t mask_seed, i64 step_offset = 0) {
  for (i64 s = 0; s < steps; ++s)
    state = nca_step_tape(tape, state, p, cfg, mask_seed, step_offset + s);
  return state;
}

// Reusable buffers so that inference memory stays flat across steps.
template <typename T>
struct StepScratch {
  Tensor<T> pad, p1, p2, z, d1, r, delta;
};

template <typename T>
void nca_step_raw(Tensor<T>& state, const BackboneParams<T>& p, const NcaConfig& cfg,
                  std::uint64_t mask_seed, i64 step_index, StepScratch<T>& s) {
  require(state.dim(0) == cfg.n, "nca_step: state channel mismatch");
  const i64 n = cfg.n, H = state.dim(1), W = state.dim(2);
  conv3x3_reflect_into(state, p.conv1_w, p.conv1_b, s.p1, s.pad);
  conv3x3_reflect_into(state, p.conv2_w, p.conv2_b, s.p2, s.pad);
  if (s.z.shape() != std::vector<i64>{3 * n, H, W}) s.z = Tensor<T>({3 * n, H, W});
  std::copy(state.data(), state.data() + state.size(), s.z.data());
  std::copy(s.p1.data(), s.p1.data() + s.p1.size(), s.z.data() + state.size());
  std::copy(s.p2.data(), s.p2.data() + s.p2.size(), s.z.data() + 2 * state.size());
  dense_per_cell_into(s.z, p.dense1_w, &p.dense1_b, s.d1);
  if (s.r.shape() != s.d1.shape()) s.r = Tensor<T>(s.d1.shape());
  for (i64 i = 0; i < s.d1.size(); ++i) s.r[i] = s.d1[i] > T(0) ? s.d1[i] : T(0);
  dense_per_cell_into(s.r, p.dense2_w, static_cast<const Tensor<T>*>(nullptr), s.delta);
  for (i64 y = 0; y < H; ++y)
    for (i64 x = 0; x < W; ++x) {
      if (!cell_fires(mask_seed, step_index, y, x, cfg.fire_rate)) continue;
      for (i64 c = 0; c < n; ++c) state.at3(c, y, x) += s.delta.at3(c, y, x);
    }
  require(all_finite(state), "nca_step: non-finite state");
}

template <typename T>
void rollout_raw(Tensor<T>& state, const BackboneParams<T>& p, const NcaConfig& cfg,
                 i64 steps, std::uint64_t mask_seed, i64 step_offset = 0) {
  StepScratch<T> scratch;
  for (i64 s = 0; s < steps; ++s)
    nca_step_raw(state, p, cfg, mask_seed, step_offset + s, scratch);
}

}  // namespace mednca
