#ifndef HCMT_TENSOR_HPP
#define HCMT_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hcmt/errors.hpp"

namespace hcmt {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// Dense row-major double tensor. All network math runs in double so the
// finite-difference gradient checks and the EMA decay tests hold at tight
// tolerances.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0);
  }
  Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }

  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(0.0); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // Copies item n out of a batch tensor (axis 0). Shape drops the batch axis.
  Tensor item(std::int64_t n) const {
    if (shape_.empty()) throw ShapeError("item(): tensor has no batch axis");
    Shape sub(shape_.begin() + 1, shape_.end());
    Tensor out(sub);
    const std::size_t stride = out.size();
    std::copy(data_.begin() + n * stride, data_.begin() + (n + 1) * stride, out.data_.begin());
    return out;
  }

  void set_item(std::int64_t n, const Tensor& t) {
    const std::size_t stride = t.size();
    std::copy(t.data_.begin(), t.data_.end(), data_.begin() + n * stride);
  }

  const double* item_ptr(std::int64_t n, std::size_t item_size) const {
    return data_.data() + n * item_size;
  }
  double* item_ptr(std::int64_t n, std::size_t item_size) {
    return data_.data() + n * item_size;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace hcmt

#endif  // HCMT_TENSOR_HPP
