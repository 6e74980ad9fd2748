#pragma once

#include <vector>

#include "gocnn/autograd.hpp"
#include "gocnn/tensor.hpp"

namespace gocnn {

enum class MaskPolarity { foreground, background };
enum class MaskResolution { image, feature };

// Binary spatial gate. The all-zeros mask is the sentinel for "no privileged
// annotation": a sample whose foreground and background masks are both zero
// contributes nothing to any suppression term or its gradient.
struct Mask {
  Tensor data;  // [H,W], entries in {0,1}
  MaskResolution resolution = MaskResolution::image;
  MaskPolarity polarity = MaskPolarity::foreground;

  int height() const { return data.dim(0); }
  int width() const { return data.dim(1); }
  bool zero_sentinel() const;

  // 1 - data with flipped polarity; the sentinel stays a sentinel.
  Mask complement() const;
};

// Validates that every entry is exactly 0 or 1.
Mask make_mask(Tensor data, MaskResolution resolution, MaskPolarity polarity);

// Per-sample masks assembled into one [B,H,W] constant (sentinel rows stay
// all-zero). All masks must share resolution and spatial dims.
Tensor stack_mask_batch(const std::vector<Mask>& masks);

// Gates features with a binary mask: out[b,c,:,:] = features[b,c,:,:] * mask.
// `mask` is a single [H,W] mask broadcast over the batch; the [B,H,W] overload
// applies each sample's own mask. Rejects resolution mismatches; callers
// downsample image-resolution masks first.
Var extract(Tape& tape, Var features, const Mask& mask);
Var extract(Tape& tape, Var features, const Tensor& per_sample_masks);

// Regression-to-zero penalty on responses outside a group's designated
// region: mean over batch, channels, and positions of the squared gated
// response. The opposing mask is the background mask for the foreground group
// and vice versa. Exactly zero (loss and gradient) under sentinel masks.
Var suppression_loss(Tape& tape, Var group_features, const Tensor& opposing_masks);
Var suppression_loss(Tape& tape, Var group_features, const Mask& opposing_mask);

// Mean over the batch of -log softmax(logits)[label], stabilized by
// max-subtraction.
Var softmax_cross_entropy(Tape& tape, Var logits, const std::vector<int>& labels);

// Mean over batch*classes of the binary cross entropy between sigmoid(logits)
// and {0,1} targets, in the stable softplus form.
Var multilabel_logistic_loss(Tape& tape, Var logits, const Tensor& targets);

}  // namespace gocnn
