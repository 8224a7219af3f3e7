#pragma once

// Bias-corrected adaptive-moment optimizer with optional global-norm
// gradient clipping.

#include <cmath>
#include <vector>

#include "mednca/pipeline.hpp"
#include "mednca/tensor.hpp"

namespace mednca {

template <typename T>
struct OptimState {
  i64 step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_opt = 1e-8;
  ModelGrads<T> first_moment;
  ModelGrads<T> second_moment;

  static OptimState init(const MedNcaModel<T>& model, double lr) {
    OptimState s;
    s.lr = lr;
    s.first_moment = ModelGrads<T>::zeros_like(model);
    s.second_moment = ModelGrads<T>::zeros_like(model);
    return s;
  }
};

// Scales all gradients so the global L2 norm is at most max_norm.
template <typename T>
double clip_global_norm(ModelGrads<T>& grads, double max_norm) {
  double sq = 0;
  grads.for_each([&](Tensor<T>& g) {
    for (i64 i = 0; i < g.size(); ++i) sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
  });
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const T scale = static_cast<T>(max_norm / norm);
    grads.for_each([&](Tensor<T>& g) {
      for (i64 i = 0; i < g.size(); ++i) g[i] *= scale;
    });
  }
  return norm;
}

template <typename T>
void adam_step(MedNcaModel<T>& model, const ModelGrads<T>& grads, OptimState<T>& opt) {
  opt.step_count += 1;
  const double t = static_cast<double>(opt.step_count);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);

  // walk params/moments/grads in lockstep
  std::vector<Tensor<T>*> params, m1, m2;
  std::vector<const Tensor<T>*> gs;
  model.for_each_param([&](Tensor<T>& p) { params.push_back(&p); });
  opt.first_moment.for_each([&](Tensor<T>& m) { m1.push_back(&m); });
  opt.second_moment.for_each([&](Tensor<T>& v) { m2.push_back(&v); });
  const_cast<ModelGrads<T>&>(grads).for_each([&](Tensor<T>& g) { gs.push_back(&g); });
  require(params.size() == gs.size() && params.size() == m1.size(),
          "adam_step: gradient/parameter mismatch");

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    Tensor<T>& m = *m1[i];
    Tensor<T>& v = *m2[i];
    const Tensor<T>& g = *gs[i];
    require(p.same_shape(g), "adam_step: shape mismatch");
    for (i64 j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = opt.beta1 * static_cast<double>(m[j]) + (1.0 - opt.beta1) * gj;
      const double vj = opt.beta2 * static_cast<double>(v[j]) + (1.0 - opt.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      p[j] = static_cast<T>(static_cast<double>(p[j]) - opt.lr * mhat / (std::sqrt(vhat) + opt.eps_opt));
    }
  }
}

}  // namespace mednca
