#pragma once

// The two-stage Med-NCA procedure: global low-resolution rollout, state
// lifting with image-channel replacement, patch-based training and
// patch-free full-resolution inference.

#include <cstdint>
#include <utility>

#include "mednca/losses.hpp"
#include "mednca/nca.hpp"
#include "mednca/parallel.hpp"
#include "mednca/rng.hpp"
#include "mednca/tape.hpp"

namespace mednca {

template <typename T>
struct MedNcaModel {
  BackboneParams<T> b1;  // low resolution
  BackboneParams<T> b2;  // high resolution
  NcaConfig config;
  i64 scale_factor = 4;

  template <typename F>
  void for_each_param(F&& f) {
    b1.for_each(f);
    b2.for_each(f);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    b1.for_each(f);
    b2.for_each(f);
  }

  template <typename U>
  MedNcaModel<U> cast() const {
    MedNcaModel<U> out;
    out.b1 = b1.template cast<U>();
    out.b2 = b2.template cast<U>();
    out.config = config;
    out.scale_factor = scale_factor;
    return out;
  }
};

template <typename T>
MedNcaModel<T> make_model(const NcaConfig& cfg, i64 scale_factor, std::uint64_t seed) {
  require(scale_factor >= 2, "MedNcaModel: scale_factor must be >= 2");
  MedNcaModel<T> m;
  m.config = cfg;
  m.scale_factor = scale_factor;
  m.b1 = init_params<T>(cfg, mix64(seed, 1));
  m.b2 = init_params<T>(cfg, mix64(seed, 2));
  return m;
}

template <typename T>
struct TrainSample {
  Tensor<T> image;  // 1 x H x W, intensities in [0,1]
  Tensor<T> mask;   // 1 x H x W, values in {0,1}
};

// Channel 0 = image, all other channels zero.
template <typename T>
Tensor<T> seed_state(const Tensor<T>& image, i64 n) {
  require(image.rank() == 3 && image.dim(0) == 1, "seed_state: image must be 1xHxW");
  Tensor<T> state({n, image.dim(1), image.dim(2)});
  std::copy(image.data(), image.data() + image.size(), state.data());
  return state;
}

// Stage 1: rollout of b1 on the seeded low-resolution image (raw form).
template <typename T>
Tensor<T> stage1(const MedNcaModel<T>& model, const Tensor<T>& image_lowres,
                 std::uint64_t rng_seed) {
  Tensor<T> state = seed_state(image_lowres, model.config.n);
  rollout_raw(state, model.b1, model.config, model.config.steps, mix64(rng_seed, 101));
  return state;
}

// Nearest-neighbor upscale of all channels, then channel 0 replaced by the
// high-resolution image.
template <typename T>
Tensor<T> lift_state(const Tensor<T>& state_lo, const Tensor<T>& image_hi) {
  require(image_hi.rank() == 3 && image_hi.dim(0) == 1, "lift_state: image must be 1xHxW");
  Tensor<T> lifted = resample_nearest(state_lo, image_hi.dim(1), image_hi.dim(2));
  std::copy(image_hi.data(), image_hi.data() + image_hi.size(), lifted.data());
  return lifted;
}

template <typename T>
struct ModelGrads {
  BackboneParams<T> b1;
  BackboneParams<T> b2;

  static ModelGrads zeros_like(const MedNcaModel<T>& m) {
    ModelGrads g;
    auto zero = [](const BackboneParams<T>& src) {
      BackboneParams<T> out;
      out.conv1_w = Tensor<T>(src.conv1_w.shape());
      out.conv1_b = Tensor<T>(src.conv1_b.shape());
      out.conv2_w = Tensor<T>(src.conv2_w.shape());
      out.conv2_b = Tensor<T>(src.conv2_b.shape());
      out.dense1_w = Tensor<T>(src.dense1_w.shape());
      out.dense1_b = Tensor<T>(src.dense1_b.shape());
      out.dense2_w = Tensor<T>(src.dense2_w.shape());
      return out;
    };
    g.b1 = zero(m.b1);
    g.b2 = zero(m.b2);
    return g;
  }

  template <typename F>
  void for_each(F&& f) {
    b1.for_each(f);
    b2.for_each(f);
  }
};

namespace detail {

template <typename T>
void accumulate_backbone_grads(const Tape<T>& tape, const BackboneIds& ids,
                               BackboneParams<T>& out, T scale) {
  auto acc = [&](int id, Tensor<T>& dst) {
    const Tensor<T>& g = tape.grad(id);
    if (g.empty()) return;
    for (i64 i = 0; i < dst.size(); ++i) dst[i] += g[i] * scale;
  };
  acc(ids.conv1_w, out.conv1_w);
  acc(ids.conv1_b, out.conv1_b);
  acc(ids.conv2_w, out.conv2_w);
  acc(ids.conv2_b, out.conv2_b);
  acc(ids.dense1_w, out.dense1_w);
  acc(ids.dense1_b, out.dense1_b);
  acc(ids.dense2_w, out.dense2_w);
}

}  // namespace detail

// Builds the taped two-stage forward for one sample and returns the loss id.
// Exposed for the accounting tests; train_step drives it per batch item.
template <typename T>
struct SampleGraph {
  Tape<T> tape;
  BackboneIds b1_ids, b2_ids;
  int loss_id = -1;
  int prob_id = -1;
  T dice = 0, bce = 0;
};

template <typename T>
void build_train_graph(SampleGraph<T>& g, const MedNcaModel<T>& model,
                       const TrainSample<T>& sample, std::uint64_t sample_seed) {
  const NcaConfig& cfg = model.config;
  const i64 f = model.scale_factor;
  const i64 H = sample.image.dim(1), W = sample.image.dim(2);
  require(H % f == 0 && W % f == 0, "train_step: image size must be divisible by scale_factor");
  for (i64 i = 0; i < sample.mask.size(); ++i)
    require(sample.mask[i] == T(0) || sample.mask[i] == T(1), "train_step: mask must be binary");

  g.b1_ids = register_params(g.tape, model.b1);
  g.b2_ids = register_params(g.tape, model.b2);

  // stage 1 on the 4x-downscaled image; the seed state is a constant
  Tensor<T> img_lo = resample_average_area(sample.image, H / f, W / f);
  int state = g.tape.constant(seed_state(img_lo, cfg.n));
  state = rollout_tape(g.tape, state, g.b1_ids, cfg, cfg.steps, mix64(sample_seed, 101));

  // lift to full resolution, re-impose the high-resolution image
  int lifted = g.tape.resample_nearest(state, H, W);
  lifted = g.tape.set_channel0(lifted, sample.image);

  // random patch of exactly the downscaled size
  const i64 ph = H / f, pw = W / f;
  Rng patch_rng(mix64(sample_seed, 202));
  const i64 top = patch_rng.uniform_int(0, H - ph);
  const i64 left = patch_rng.uniform_int(0, W - pw);
  int patch = g.tape.crop(lifted, top, left, ph, pw);
  Tensor<T> mask_patch = crop(sample.mask, top, left, ph, pw);

  // stage 2 on the patch
  patch = rollout_tape(g.tape, patch, g.b2_ids, cfg, cfg.steps, mix64(sample_seed, 303));

  int logit = g.tape.slice_channel(patch, cfg.img_channels);
  g.prob_id = g.tape.sigmoid(logit);
  int dice = g.tape.dice_loss(g.prob_id, mask_patch);
  int bce = g.tape.bce_loss(g.prob_id, mask_patch);
  g.dice = g.tape.value(dice)[0];
  g.bce = g.tape.value(bce)[0];
  g.loss_id = g.tape.add(dice, bce);
}

// One training step over a batch: mean(dice + bce) and parameter gradients
// through both stages. Deterministic given rng_seed.
template <typename T>
std::pair<T, ModelGrads<T>> train_step(const MedNcaModel<T>& model,
                                       const std::vector<TrainSample<T>>& batch,
                                       std::uint64_t rng_seed) {
  require(!batch.empty(), "train_step: empty batch");
  // batch items run independently; the reduction below is in index order so
  // results are identical regardless of worker count
  std::vector<T> losses(batch.size());
  std::vector<ModelGrads<T>> per_sample(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    SampleGraph<T> g;
    build_train_graph(g, model, batch[i], mix64(rng_seed, i));
    g.tape.backward(g.loss_id);
    losses[i] = g.tape.value(g.loss_id)[0];
    per_sample[i] = ModelGrads<T>::zeros_like(model);
    detail::accumulate_backbone_grads(g.tape, g.b1_ids, per_sample[i].b1, T(1));
    detail::accumulate_backbone_grads(g.tape, g.b2_ids, per_sample[i].b2, T(1));
  });
  ModelGrads<T> grads = ModelGrads<T>::zeros_like(model);
  T loss = 0;
  const T scale = T(1) / static_cast<T>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    loss += losses[i] * scale;
    std::vector<Tensor<T>*> dst;
    grads.for_each([&](Tensor<T>& t) { dst.push_back(&t); });
    std::size_t k = 0;
    per_sample[i].for_each([&](Tensor<T>& src) {
      Tensor<T>& d = *dst[k++];
      for (i64 j = 0; j < d.size(); ++j) d[j] += src[j] * scale;
    });
  }
  return {loss, std::move(grads)};
}

template <typename T>
struct InferResult {
  Tensor<T> mask;  // binary, strict > threshold
  Tensor<T> prob;
};

// Full-image inference: no patchification. Sizes not divisible by the scale
// factor are reflect-padded up to the next multiple and cropped afterwards.
template <typename T>
InferResult<T> infer(const MedNcaModel<T>& model, const Tensor<T>& image,
                     std::uint64_t rng_seed, double threshold = 0.5,
                     double fire_rate_override = -1.0) {
  require(image.rank() == 3 && image.dim(0) == 1, "infer: image must be 1xHxW");
  const i64 f = model.scale_factor;
  const i64 H = image.dim(1), W = image.dim(2);
  require(H >= 8 && W >= 8, "infer: image too small");

  NcaConfig cfg = model.config;
  if (fire_rate_override > 0.0) cfg.fire_rate = fire_rate_override;

  const i64 padH = (f - H % f) % f;
  const i64 padW = (f - W % f) % f;
  Tensor<T> img = (padH || padW) ? pad_reflect(image, 0, padH, 0, padW) : image;
  const i64 PH = img.dim(1), PW = img.dim(2);

  Tensor<T> img_lo = resample_average_area(img, PH / f, PW / f);
  Tensor<T> state = seed_state(img_lo, cfg.n);
  rollout_raw(state, model.b1, cfg, cfg.steps, mix64(rng_seed, 101));
  Tensor<T> lifted = lift_state(state, img);
  state = Tensor<T>();  // drop the low-res state before the big rollout
  rollout_raw(lifted, model.b2, cfg, cfg.steps, mix64(rng_seed, 303));

  InferResult<T> out;
  out.prob = sigmoid(slice_channel(lifted, cfg.img_channels));
  lifted = Tensor<T>();
  if (padH || padW) out.prob = crop(out.prob, 0, 0, H, W);
  out.mask = Tensor<T>({1, H, W});
  for (i64 i = 0; i < out.prob.size(); ++i)
    out.mask[i] = out.prob[i] > static_cast<T>(threshold) ? T(1) : T(0);
  return out;
}

// Stored-activation count of a hypothetical single-stage full-resolution
// training run (the naive baseline the two-stage scheme is measured against).
// Mirrors the tape accounting rules: per step the state, the 3n-channel
// perception vector and both dense activations are saved; the constant seed
// state of step 0 is not; the loss keeps the sigmoid output.
inline std::size_t naive_train_saved_scalars(i64 n, i64 h, i64 steps, i64 H, i64 W) {
  const i64 area = H * W;
  const i64 per_step = (4 * n + 2 * h) * area;
  return static_cast<std::size_t>(steps * per_step - n * area + area);
}

// Measured stored-activation count for one Med-NCA train step on an HxW image.
template <typename T>
std::size_t mednca_train_saved_scalars(const MedNcaModel<T>& model, i64 H, i64 W) {
  TrainSample<T> sample;
  sample.image = Tensor<T>({1, H, W}, T(0.5));
  sample.mask = Tensor<T>({1, H, W}, T(0));
  SampleGraph<T> g;
  build_train_graph(g, model, sample, 7);
  return g.tape.saved_activation_scalars();
}

}  // namespace mednca
