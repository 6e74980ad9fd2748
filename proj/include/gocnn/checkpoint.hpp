#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gocnn/model.hpp"
#include "gocnn/tensor.hpp"

namespace gocnn {

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { bad_magic, truncated, bad_value, io };
  CheckpointError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Binary tensor map: magic "GOCNN1", then per tensor u32le name length, the
// UTF-8 name, u32le rank, u32le dims, and raw little-endian f64 data.
void save_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors,
                  const std::filesystem::path& path);
std::vector<std::pair<std::string, Tensor>> load_tensors(const std::filesystem::path& path);

// Model checkpoint: the tensor map plus a plain-text "<path>.manifest"
// sidecar carrying architecture, partition boundaries, loss weights, seed.
void save_model(const GoCNNModel& model, const std::filesystem::path& path);
GoCNNModel load_model(const std::filesystem::path& path);

}  // namespace gocnn
