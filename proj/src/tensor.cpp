#include "gocnn/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gocnn {

long long shape_numel(const std::vector<int>& shape) {
  long long n = 1;
  for (int d : shape) {
    if (d <= 0) {
      throw std::invalid_argument("tensor shape has non-positive dimension " +
                                  shape_to_string(shape));
    }
    n *= d;
  }
  return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_numel(shape_) != static_cast<long long>(data_.size())) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = v;
  return t;
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw std::invalid_argument("item() requires a single-element tensor, got shape " +
                                shape_to_string(shape_));
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("max_abs_diff shape mismatch: " + shape_to_string(a.shape()) +
                                " vs " + shape_to_string(b.shape()));
  }
  double m = 0.0;
  for (long long i = 0; i < a.size(); ++i) {
    double d = std::fabs(a[i] - b[i]);
    if (d > m) m = d;
  }
  return m;
}

}  // namespace gocnn
