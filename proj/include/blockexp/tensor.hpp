// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace blockexp {

using Shape = std::vector<std::size_t>;

// Raised when an operation produces NaN or Inf. Training converts it into a
// divergence report carrying the step index.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major float32 tensor. Copies share the buffer; mutation through
// mutable_data() detaches first, so a Tensor behaves as a value.
class Tensor {
 public:
  Tensor() : buf_(std::make_shared<std::vector<float>>()) {}

  explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)) {
    check_extents();
    buf_ = std::make_shared<std::vector<float>>(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)) {
    check_extents();
    if (data.size() != shape_numel(shape_)) {
      throw std::invalid_argument("tensor: buffer length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape_));
    }
    buf_ = std::make_shared<std::vector<float>>(std::move(data));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0f); }
  static Tensor scalar(float v) { return Tensor(Shape{1}, v); }
  static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows) {
    std::vector<float> d;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw std::invalid_argument("tensor: ragged matrix literal");
      d.insert(d.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(d));
  }
  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.mutable_data()[i * n + i] = 1.0f;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return buf_->size(); }
  bool empty() const { return shape_.empty(); }

  std::span<const float> data() const { return *buf_; }
  std::span<float> mutable_data() {
    if (buf_.use_count() > 1) buf_ = std::make_shared<std::vector<float>>(*buf_);
    return *buf_;
  }

  float operator[](std::size_t i) const { return (*buf_)[i]; }
  float at(std::size_t r, std::size_t c) const { return (*buf_)[r * shape_.back() + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // Exact bit-pattern comparison of shape and contents.
  bool bitwise_equal(const Tensor& o) const {
    return shape_ == o.shape_ &&
           std::memcmp(buf_->data(), o.buf_->data(), buf_->size() * sizeof(float)) == 0;
  }

  bool all_finite() const {
    return std::all_of(buf_->begin(), buf_->end(), [](float v) { return std::isfinite(v); });
  }

  void fill(float v) { std::fill(mutable_data().begin(), mutable_data().end(), v); }

 private:
  void check_extents() const {
    for (auto e : shape_) {
      if (e == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::shared_ptr<std::vector<float>> buf_;
};

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("max_abs_diff: shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
  float m = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

inline double l2_norm_sq(const Tensor& t) {
  double s = 0.0;
  for (float v : t.data()) s += static_cast<double>(v) * v;
  return s;
}

}  // namespace blockexp
