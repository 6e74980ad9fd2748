#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gocnn/autograd.hpp"
#include "gocnn/data.hpp"
#include "gocnn/diversity.hpp"
#include "gocnn/tensor.hpp"

namespace gocnn {

struct ConvStage {
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  bool pool_after = false;  // 2x2 mean pool
};

enum class TaskKind { single_label, multi_label };

// Wiring variants. `full` is the complete model: grouped final layer,
// suppressors, group classifiers, main classifier. `only_fg`/`only_bg` block
// the other group's heads and narrow the main classifier to the kept group's
// channels (the group classifier shares the main head). `vanilla` keeps only
// the main classifier over all channels.
enum class RunMode { full, only_fg, only_bg, vanilla };

const char* run_mode_name(RunMode mode);
RunMode run_mode_from_name(const std::string& name);

struct LossWeights {
  double main = 1.0;
  double fg = 1.0;
  double bg = 1.0;
  double sup = 1.0;
};

struct GoCNNConfig {
  std::vector<ConvStage> stages;
  int input_channels = 3;
  int image_size = 32;
  int num_classes = 0;
  int fg_parts = 3;  // group size ratio fg:bg
  int bg_parts = 1;
  LossWeights weights;
  TaskKind task = TaskKind::single_label;

  // conv3x3(16)-relu-pool2, conv3x3(32)-relu-pool2, conv3x3(64)-relu.
  static GoCNNConfig tiny_net(int num_classes, int image_size = 32);

  void validate() const;
  int final_channels() const;
  int fg_channels() const;
  int bg_channels() const;
  // Activated (pre-pool) output shape of the 1-based stage.
  LayerShape stage_shape(int stage_index) const;
  LayerShape final_shape() const { return stage_shape(static_cast<int>(stages.size())); }
};

// Parameters are a single named store; the train and test forward passes are
// two wirings over the same tensors, so there is nothing to keep in sync.
struct GoCNNModel {
  GoCNNConfig config;
  RunMode mode = RunMode::full;
  uint64_t seed = 0;
  std::vector<std::pair<std::string, Tensor>> params;
  GroupPartition partition;

  bool has_group_heads() const;
  bool has_param(const std::string& name) const;
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  long long parameter_count() const;
  // Parameters reachable in test wiring: the conv stack plus the main
  // classifier. Equals a vanilla build of the same base architecture.
  long long test_parameter_count() const;
};

// He-initialized deterministic build. A vanilla build allocates no group
// classifier heads; all other modes share one parameter layout, so models
// built from the same seed agree on every common tensor.
GoCNNModel build_gocnn(const GoCNNConfig& config, uint64_t seed, RunMode mode = RunMode::full);

// Rewires the model in place (parameters untouched). Rejects modes that need
// heads the model does not have.
void set_run_mode(GoCNNModel& model, RunMode mode);

struct Batch {
  Tensor images;            // [B,Cin,H,W]
  std::vector<int> labels;  // in [0,K)
  Tensor targets;           // [B,K] for multi-label tasks, else empty
  Tensor mask_f, mask_b;    // [B,h,w] feature-resolution; all-zero rows = sentinel
  int size() const { return images.rank() == 4 ? images.dim(0) : 0; }
};

// Assembles images/labels and downsamples each privileged sample's mask to
// feature resolution (background = complement of the downsampled foreground);
// sentinel samples get all-zero rows in both mask tensors.
Batch make_batch(std::span<const SampleRecord> records, const GoCNNConfig& config);

struct LossBundle {
  double main = 0.0, fg_cls = 0.0, bg_cls = 0.0, sup_fg = 0.0, sup_bg = 0.0, total = 0.0;
};

struct ForwardOptions {
  bool suppressors = true;  // record suppression heads (train wiring only)
  bool with_grad = true;    // parameters as differentiable leaves
};

// Training-mode graph. Loss handles are invalid where the mode omits a head;
// in only_fg/only_bg the kept group's classifier handle aliases the main loss.
struct TrainGraph {
  Tape tape;
  std::vector<std::pair<std::string, Var>> param_vars;
  Var final_features;  // [B,c,h,w] activated final conv output
  Var main_logits, fg_logits, bg_logits;
  Var main_loss, fg_loss, bg_loss, sup_fg, sup_bg, total;

  LossBundle losses() const;
  // Gradient per recorded parameter; call after tape.backward(total).
  std::vector<std::pair<std::string, Tensor>> parameter_grads() const;
};

TrainGraph forward_train(const GoCNNModel& model, const Batch& batch,
                         const ForwardOptions& options = {});

// Test wiring: pool over all final channels (foreground group first), then
// the main classifier. No masks; numerically equal to the train-mode main
// path for the same parameters and inputs.
Tensor forward_test(const GoCNNModel& model, const Tensor& images);

// Activated output of the given 1-based stage (pre-pool); used by probes.
Tensor forward_features(const GoCNNModel& model, const Tensor& images, int stage_index);

}  // namespace gocnn
