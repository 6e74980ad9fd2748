#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gocnn {

// Dense row-major tensor of 64-bit floats. Tensors are plain values:
// operations return new tensors instead of mutating their inputs.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);  // zero-filled
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor full(std::vector<int> shape, double v);

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  long long size() const { return static_cast<long long>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](long long i) { return data_[static_cast<size_t>(i)]; }
  double operator[](long long i) const { return data_[static_cast<size_t>(i)]; }

  // Scalar access; rejects tensors with more than one element.
  double item() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

// Shape of one convolution stage's output feature maps.
struct LayerShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  int layer_index = 0;  // 1-based stage index
};

long long shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace gocnn
