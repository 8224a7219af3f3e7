#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mednca {

// Tracks live scalar counts for memory accounting. Install one with
// ScopedAccountant; every Tensor allocated while it is active reports
// its element count.
struct AllocAccountant {
  std::size_t live = 0;
  std::size_t peak = 0;

  void add(std::size_t n) {
    live += n;
    if (live > peak) peak = live;
  }
  void sub(std::size_t n) { live -= n; }
};

namespace detail {
inline AllocAccountant*& accountant_slot() {
  thread_local AllocAccountant* acc = nullptr;
  return acc;
}
}  // namespace detail

struct ScopedAccountant {
  explicit ScopedAccountant(AllocAccountant& acc) : prev_(detail::accountant_slot()) {
    detail::accountant_slot() = &acc;
  }
  ~ScopedAccountant() { detail::accountant_slot() = prev_; }
  ScopedAccountant(const ScopedAccountant&) = delete;
  ScopedAccountant& operator=(const ScopedAccountant&) = delete;

 private:
  AllocAccountant* prev_;
};

// Dense row-major tensor, last axis fastest.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::int64_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {
    track(data_.size());
  }

  Tensor(std::vector<std::int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::size_t>(numel(shape_)) != data_.size())
      throw std::invalid_argument("Tensor: shape/data size mismatch");
    track(data_.size());
  }

  Tensor(const Tensor& other) : shape_(other.shape_), data_(other.data_) {
    track(data_.size());
  }
  Tensor(Tensor&& other) noexcept
      : shape_(std::move(other.shape_)), data_(std::move(other.data_)),
        tracked_(other.tracked_), acc_(other.acc_) {
    other.tracked_ = 0;
    other.acc_ = nullptr;
  }
  Tensor& operator=(const Tensor& other) {
    if (this != &other) {
      untrack();
      shape_ = other.shape_;
      data_ = other.data_;
      track(data_.size());
    }
    return *this;
  }
  Tensor& operator=(Tensor&& other) noexcept {
    if (this != &other) {
      untrack();
      shape_ = std::move(other.shape_);
      data_ = std::move(other.data_);
      tracked_ = other.tracked_;
      acc_ = other.acc_;
      other.tracked_ = 0;
      other.acc_ = nullptr;
    }
    return *this;
  }
  ~Tensor() { untrack(); }

  static std::int64_t numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // C,H,W accessors for the common 3D case.
  T& at3(std::int64_t c, std::int64_t y, std::int64_t x) {
    return data_[static_cast<std::size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }
  const T& at3(std::int64_t c, std::int64_t y, std::int64_t x) const {
    return data_[static_cast<std::size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  static std::size_t checked_size(const std::vector<std::int64_t>& shape) {
    for (auto d : shape)
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
    return static_cast<std::size_t>(numel(shape));
  }
  void track(std::size_t n) {
    tracked_ = n;
    acc_ = detail::accountant_slot();
    if (acc_) acc_->add(n);
  }
  void untrack() {
    if (acc_ && tracked_ > 0) acc_->sub(tracked_);
    acc_ = nullptr;
    tracked_ = 0;
  }

  std::vector<std::int64_t> shape_;
  std::vector<T> data_;
  std::size_t tracked_ = 0;
  AllocAccountant* acc_ = nullptr;
};

inline std::string shape_str(const std::vector<std::int64_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace mednca
