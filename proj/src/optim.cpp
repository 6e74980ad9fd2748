#include "gocnn/optim.hpp"

#include <stdexcept>

namespace gocnn {

void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum,
              double weight_decay) {
  if (!param.same_shape(grad)) {
    throw std::invalid_argument("sgd_step: parameter " + shape_to_string(param.shape()) +
                                " and gradient " + shape_to_string(grad.shape()) +
                                " shapes differ");
  }
  if (!param.same_shape(velocity)) {
    throw std::invalid_argument("sgd_step: velocity shape " + shape_to_string(velocity.shape()) +
                                " does not match parameter " + shape_to_string(param.shape()));
  }
  if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::invalid_argument("sgd_step: momentum must be in [0,1)");
  }
  if (weight_decay < 0.0) throw std::invalid_argument("sgd_step: weight_decay must be >= 0");
  for (long long i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

SgdOptimizer::SgdOptimizer(double lr, double momentum, double weight_decay)
    : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

void SgdOptimizer::step(std::vector<std::pair<std::string, Tensor>>& params,
                        const std::vector<std::pair<std::string, Tensor>>& grads) {
  for (auto& [name, grad] : grads) {
    Tensor* param = nullptr;
    for (auto& p : params) {
      if (p.first == name) {
        param = &p.second;
        break;
      }
    }
    if (param == nullptr) {
      throw std::invalid_argument("sgd: gradient for unknown parameter '" + name + "'");
    }
    Tensor* vel = nullptr;
    for (auto& v : velocities_) {
      if (v.first == name) {
        vel = &v.second;
        break;
      }
    }
    if (vel == nullptr) {
      velocities_.emplace_back(name, Tensor(param->shape()));
      vel = &velocities_.back().second;
    }
    sgd_step(*param, grad, *vel, lr_, momentum_, weight_decay_);
  }
}

}  // namespace gocnn
