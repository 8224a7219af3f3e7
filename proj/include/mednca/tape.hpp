#pragma once

// Reverse-mode gradient tape over the fixed kernel set. Nodes are replayed
// in exact reverse execution order; each node declares which tensors it keeps
// for its backward pass so that stored-activation accounting is possible.

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "mednca/kernels.hpp"
#include "mednca/rng.hpp"
#include "mednca/tensor.hpp"

namespace mednca {

template <typename T>
class Tape {
 public:
  using Id = int;
  static constexpr Id kNoId = -1;

  // Leaves -----------------------------------------------------------------

  Id parameter(Tensor<T> value) {
    Id id = push_value(std::move(value));
    kind_[static_cast<std::size_t>(id)] = Kind::kParam;
    params_.push_back(id);
    return id;
  }

  Id constant(Tensor<T> value) {
    Id id = push_value(std::move(value));
    kind_[static_cast<std::size_t>(id)] = Kind::kConstant;
    return id;
  }

  const std::vector<Id>& parameters() const { return params_; }
  const Tensor<T>& value(Id id) const { return values_[static_cast<std::size_t>(id)]; }
  const Tensor<T>& grad(Id id) const { return grads_[static_cast<std::size_t>(id)]; }
  std::size_t num_values() const { return values_.size(); }

  // Ops ----------------------------------------------------------------------

  Id conv3x3_reflect(Id input, Id weight, Id bias) {
    Tensor<T> scratch;
    Tensor<T> out;
    conv3x3_reflect_into(value(input), value(weight), value(bias), out, scratch);
    Id id = push_value(std::move(out));
    record(id, {input}, [this, input, weight, bias, id]() {
      conv3x3_reflect_backward(value(input), value(weight), grads_[id],
                               grad_buf(input), grad_buf(weight), grad_buf(bias));
    });
    return id;
  }

  Id dense_per_cell(Id input, Id weight, Id bias /* kNoId for none */) {
    Tensor<T> out;
    dense_per_cell_into(value(input), value(weight),
                        bias == kNoId ? nullptr : &value(bias), out);
    Id id = push_value(std::move(out));
    record(id, {input}, [this, input, weight, bias, id]() {
      mednca::dense_per_cell_backward(value(input), value(weight), grads_[id],
                                      grad_buf(input), grad_buf(weight),
                                      bias == kNoId ? nullptr : &grad_buf(bias));
    });
    return id;
  }

  Id relu(Id input) {
    Id id = push_value(mednca::relu(value(input)));
    record(id, {input}, [this, input, id]() {
      relu_backward(value(input), grads_[id], grad_buf(input));
    });
    return id;
  }

  Id sigmoid(Id input) {
    Id id = push_value(mednca::sigmoid(value(input)));
    record(id, {id}, [this, input, id]() {  // saves its own output
      sigmoid_backward(value(id), grads_[id], grad_buf(input));
    });
    return id;
  }

  Id concat_channels(const std::vector<Id>& inputs) {
    std::vector<const Tensor<T>*> parts;
    for (Id in : inputs) parts.push_back(&value(in));
    Id id = push_value(mednca::concat_channels(parts));
    record(id, {}, [this, inputs, id]() {
      const Tensor<T>& g = grads_[id];
      i64 off = 0;
      for (Id in : inputs) {
        Tensor<T>& gi = grad_buf(in);
        for (i64 i = 0; i < gi.size(); ++i) gi[i] += g[off + i];
        off += gi.size();
      }
    });
    return id;
  }

  Id add(Id a, Id b) {
    require(value(a).same_shape(value(b)), "add: shape mismatch");
    Tensor<T> out(value(a).shape());
    const Tensor<T>&va = value(a); const Tensor<T>& vb = value(b);
    for (i64 i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    Id id = push_value(std::move(out));
    record(id, {}, [this, a, b, id]() {
      const Tensor<T>& g = grads_[id];
      Tensor<T>& ga = grad_buf(a);
      Tensor<T>& gb = grad_buf(b);
      for (i64 i = 0; i < g.size(); ++i) { ga[i] += g[i]; gb[i] += g[i]; }
    });
    return id;
  }

  Id mul(Id a, Id b) {
    require(value(a).same_shape(value(b)), "mul: shape mismatch");
    Tensor<T> out(value(a).shape());
    const Tensor<T>& va = value(a); const Tensor<T>& vb = value(b);
    for (i64 i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    Id id = push_value(std::move(out));
    record(id, {a, b}, [this, a, b, id]() {
      const Tensor<T>& g = grads_[id];
      Tensor<T>& ga = grad_buf(a);
      Tensor<T>& gb = grad_buf(b);
      const Tensor<T>& va = value(a); const Tensor<T>& vb = value(b);
      for (i64 i = 0; i < g.size(); ++i) { ga[i] += g[i] * vb[i]; gb[i] += g[i] * va[i]; }
    });
    return id;
  }

  // delta masked by the counter-based fire mask; the mask is a constant for
  // gradient purposes and is recomputed in backward rather than stored.
  Id mul_fire_mask(Id input, std::uint64_t seed, i64 step, double fire_rate) {
    const Tensor<T>& v = value(input);
    const i64 C = v.dim(0), H = v.dim(1), W = v.dim(2);
    Tensor<T> out({C, H, W});
    for (i64 y = 0; y < H; ++y)
      for (i64 x = 0; x < W; ++x) {
        const T m = cell_fires(seed, step, y, x, fire_rate) ? T(1) : T(0);
        for (i64 c = 0; c < C; ++c) out.at3(c, y, x) = v.at3(c, y, x) * m;
      }
    Id id = push_value(std::move(out));
    record(id, {}, [this, input, seed, step, fire_rate, id]() {
      const Tensor<T>& g = grads_[id];
      Tensor<T>& gi = grad_buf(input);
      const i64 C = g.dim(0), H = g.dim(1), W = g.dim(2);
      for (i64 y = 0; y < H; ++y)
        for (i64 x = 0; x < W; ++x)
          if (cell_fires(seed, step, y, x, fire_rate))
            for (i64 c = 0; c < C; ++c) gi.at3(c, y, x) += g.at3(c, y, x);
    });
    return id;
  }

  Id resample_nearest(Id input, i64 outH, i64 outW) {
    const i64 H = value(input).dim(1), W = value(input).dim(2);
    Id id = push_value(mednca::resample_nearest(value(input), outH, outW));
    record(id, {}, [this, input, H, W, id]() {
      resample_nearest_backward(H, W, grads_[id], grad_buf(input));
    });
    return id;
  }

  Id resample_average_area(Id input, i64 outH, i64 outW) {
    const i64 H = value(input).dim(1), W = value(input).dim(2);
    Id id = push_value(mednca::resample_average_area(value(input), outH, outW));
    record(id, {}, [this, input, H, W, id]() {
      resample_average_area_backward(H, W, grads_[id], grad_buf(input));
    });
    return id;
  }

  Id crop(Id input, i64 top, i64 left, i64 outH, i64 outW) {
    Id id = push_value(mednca::crop(value(input), top, left, outH, outW));
    record(id, {}, [this, input, top, left, id]() {
      const Tensor<T>& g = grads_[id];
      Tensor<T>& gi = grad_buf(input);
      const i64 C = g.dim(0), oh = g.dim(1), ow = g.dim(2);
      for (i64 c = 0; c < C; ++c)
        for (i64 y = 0; y < oh; ++y)
          for (i64 x = 0; x < ow; ++x) gi.at3(c, top + y, left + x) += g.at3(c, y, x);
    });
    return id;
  }

  // Copy of `input` with channel 0 replaced by the 1-channel constant `image`.
  Id set_channel0(Id input, const Tensor<T>& image) {
    const Tensor<T>& v = value(input);
    require(image.dim(0) == 1 && image.dim(1) == v.dim(1) && image.dim(2) == v.dim(2),
            "set_channel0: shape mismatch");
    Tensor<T> out = v;
    std::copy(image.data(), image.data() + image.size(), out.data());
    Id id = push_value(std::move(out));
    record(id, {}, [this, input, id]() {
      const Tensor<T>& g = grads_[id];
      Tensor<T>& gi = grad_buf(input);
      const i64 plane = g.dim(1) * g.dim(2);
      for (i64 i = plane; i < g.size(); ++i) gi[i] += g[i];
    });
    return id;
  }

  Id slice_channel(Id input, i64 c) {
    Id id = push_value(mednca::slice_channel(value(input), c));
    record(id, {}, [this, input, c, id]() {
      const Tensor<T>& g = grads_[id];
      Tensor<T>& gi = grad_buf(input);
      const i64 plane = g.size();
      for (i64 i = 0; i < plane; ++i) gi[c * plane + i] += g[i];
    });
    return id;
  }

  Id sum(Id input) {
    T s = 0;
    const Tensor<T>& v = value(input);
    for (i64 i = 0; i < v.size(); ++i) s += v[i];
    Id id = push_value(Tensor<T>({1}, std::vector<T>{s}));
    record(id, {}, [this, input, id]() {
      const T g = grads_[id][0];
      Tensor<T>& gi = grad_buf(input);
      for (i64 i = 0; i < gi.size(); ++i) gi[i] += g;
    });
    return id;
  }

  // Smoothed Dice loss: 1 - (2*sum(p*t)+eps) / (sum(p)+sum(t)+eps)
  Id dice_loss(Id prob, const Tensor<T>& target, T eps = T(1e-6)) {
    const Tensor<T>& p = value(prob);
    require(p.same_shape(target), "dice_loss: shape mismatch");
    T inter = 0, psum = 0, tsum = 0;
    for (i64 i = 0; i < p.size(); ++i) {
      inter += p[i] * target[i];
      psum += p[i];
      tsum += target[i];
    }
    const T denom = psum + tsum + eps;
    const T loss = T(1) - (T(2) * inter + eps) / denom;
    Id id = push_value(Tensor<T>({1}, std::vector<T>{loss}));
    // d loss / d p_i = -(2*t_i*denom - (2*inter+eps)) / denom^2
    record(id, {prob}, [this, prob, target, inter, denom, eps, id]() {
      const T g = grads_[id][0];
      Tensor<T>& gp = grad_buf(prob);
      const T num = T(2) * inter + eps;
      const T inv_d2 = T(1) / (denom * denom);
      for (i64 i = 0; i < gp.size(); ++i)
        gp[i] += g * (-(T(2) * target[i] * denom - num) * inv_d2);
    });
    return id;
  }

  // Mean binary cross-entropy with probability clamp at [1e-7, 1-1e-7].
  Id bce_loss(Id prob, const Tensor<T>& target) {
    const Tensor<T>& p = value(prob);
    require(p.same_shape(target), "bce_loss: shape mismatch");
    const T lo = T(1e-7), hi = T(1) - T(1e-7);
    T acc = 0;
    for (i64 i = 0; i < p.size(); ++i) {
      const T pc = std::clamp(p[i], lo, hi);
      acc += -(target[i] * std::log(pc) + (T(1) - target[i]) * std::log(T(1) - pc));
    }
    const T n = static_cast<T>(p.size());
    Id id = push_value(Tensor<T>({1}, std::vector<T>{acc / n}));
    record(id, {prob}, [this, prob, target, lo, hi, n, id]() {
      const T g = grads_[id][0] / n;
      const Tensor<T>& p = value(prob);
      Tensor<T>& gp = grad_buf(prob);
      for (i64 i = 0; i < p.size(); ++i) {
        if (p[i] <= lo || p[i] >= hi) continue;  // clamp region: zero gradient
        gp[i] += g * (-(target[i] / p[i]) + (T(1) - target[i]) / (T(1) - p[i]));
      }
    });
    return id;
  }

  // Backward ------------------------------------------------------------------

  void backward(Id loss) {
    require(loss >= 0 && loss < static_cast<Id>(values_.size()), "backward: loss not on tape");
    require(value(loss).size() == 1, "backward: loss must be a scalar");
    require(std::isfinite(static_cast<double>(value(loss)[0])),
            "backward: non-finite loss");
    grads_.assign(values_.size(), Tensor<T>());
    grads_[static_cast<std::size_t>(loss)] = Tensor<T>({1}, std::vector<T>{T(1)});
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (grads_[static_cast<std::size_t>(it->output)].empty()) continue;  // no grad flow
      it->backward();
    }
  }

  // Sum of unique saved-for-backward activation scalars, excluding parameters
  // and constants (the VRAM-style training memory measure).
  std::size_t saved_activation_scalars() const {
    std::unordered_set<Id> seen;
    std::size_t total = 0;
    for (const auto& node : nodes_)
      for (Id s : node.saved) {
        if (kind_[static_cast<std::size_t>(s)] != Kind::kOp) continue;
        if (seen.insert(s).second) total += static_cast<std::size_t>(value(s).size());
      }
    return total;
  }

 private:
  enum class Kind { kConstant, kParam, kOp };

  struct Node {
    Id output;
    std::vector<Id> saved;
    std::function<void()> backward;
  };

  Id push_value(Tensor<T> v) {
    require(all_finite(v), "tape op produced non-finite values");
    values_.push_back(std::move(v));
    kind_.push_back(Kind::kOp);
    return static_cast<Id>(values_.size() - 1);
  }

  void record(Id output, std::vector<Id> saved, std::function<void()> fn) {
    nodes_.push_back(Node{output, std::move(saved), std::move(fn)});
  }

  Tensor<T>& grad_buf(Id id) {
    Tensor<T>& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty()) g = Tensor<T>(value(id).shape(), T(0));
    return g;
  }

  std::vector<Tensor<T>> values_;
  std::vector<Kind> kind_;
  std::vector<Id> params_;
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
};

}  // namespace mednca
