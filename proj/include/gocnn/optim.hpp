#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gocnn/tensor.hpp"

namespace gocnn {

// One SGD update: v <- momentum*v + grad + weight_decay*param,
// param <- param - lr*v. Velocity is owned by the caller and must match the
// parameter shape (zeros on the first step).
void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum,
              double weight_decay);

// Convenience wrapper that keeps one velocity buffer per named parameter.
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum, double weight_decay);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step(std::vector<std::pair<std::string, Tensor>>& params,
            const std::vector<std::pair<std::string, Tensor>>& grads);

 private:
  double lr_, momentum_, weight_decay_;
  std::vector<std::pair<std::string, Tensor>> velocities_;
};

}  // namespace gocnn
