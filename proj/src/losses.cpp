#include "gocnn/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gocnn {

bool Mask::zero_sentinel() const {
  for (long long i = 0; i < data.size(); ++i) {
    if (data[i] != 0.0) return false;
  }
  return true;
}

Mask Mask::complement() const {
  Mask out;
  out.resolution = resolution;
  out.polarity =
      polarity == MaskPolarity::foreground ? MaskPolarity::background : MaskPolarity::foreground;
  if (zero_sentinel()) {
    out.data = Tensor(data.shape());
    return out;
  }
  Tensor inv(data.shape());
  for (long long i = 0; i < data.size(); ++i) inv[i] = 1.0 - data[i];
  out.data = std::move(inv);
  return out;
}

Mask make_mask(Tensor data, MaskResolution resolution, MaskPolarity polarity) {
  if (data.rank() != 2) {
    throw std::invalid_argument("mask must be rank 2, got " + shape_to_string(data.shape()));
  }
  for (long long i = 0; i < data.size(); ++i) {
    if (data[i] != 0.0 && data[i] != 1.0) {
      throw std::invalid_argument("mask entries must be exactly 0 or 1, found " +
                                  std::to_string(data[i]));
    }
  }
  return Mask{std::move(data), resolution, polarity};
}

Tensor stack_mask_batch(const std::vector<Mask>& masks) {
  if (masks.empty()) throw std::invalid_argument("stack_mask_batch: empty mask list");
  const int h = masks[0].height(), w = masks[0].width();
  const MaskResolution res = masks[0].resolution;
  Tensor out({static_cast<int>(masks.size()), h, w});
  for (size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].height() != h || masks[i].width() != w || masks[i].resolution != res) {
      throw std::invalid_argument("stack_mask_batch: mask " + std::to_string(i) +
                                  " disagrees on resolution or size");
    }
    std::copy(masks[i].data.data(), masks[i].data.data() + static_cast<long long>(h) * w,
              out.data() + static_cast<long long>(i) * h * w);
  }
  return out;
}

namespace {

void check_feature_mask_dims(const Tensor& features, int mh, int mw) {
  if (features.rank() != 4) {
    throw std::invalid_argument("extract: features must be [B,C,H,W], got " +
                                shape_to_string(features.shape()));
  }
  if (features.dim(2) != mh || features.dim(3) != mw) {
    throw std::invalid_argument(
        "extract: mask resolution " + std::to_string(mh) + "x" + std::to_string(mw) +
        " does not match features " + shape_to_string(features.shape()) +
        "; downsample the mask to feature resolution first");
  }
}

}  // namespace

Var extract(Tape& tape, Var features, const Mask& mask) {
  check_feature_mask_dims(tape.value(features), mask.height(), mask.width());
  return tape.mask_mul(features, mask.data);
}

Var extract(Tape& tape, Var features, const Tensor& per_sample_masks) {
  if (per_sample_masks.rank() != 3) {
    throw std::invalid_argument("extract: per-sample masks must be [B,H,W], got " +
                                shape_to_string(per_sample_masks.shape()));
  }
  const Tensor& f = tape.value(features);
  check_feature_mask_dims(f, per_sample_masks.dim(1), per_sample_masks.dim(2));
  if (f.dim(0) != per_sample_masks.dim(0)) {
    throw std::invalid_argument("extract: batch size " + std::to_string(f.dim(0)) +
                                " does not match mask batch " +
                                std::to_string(per_sample_masks.dim(0)));
  }
  return tape.mask_mul(features, per_sample_masks);
}

Var suppression_loss(Tape& tape, Var group_features, const Tensor& opposing_masks) {
  return tape.squared_mean(extract(tape, group_features, opposing_masks));
}

Var suppression_loss(Tape& tape, Var group_features, const Mask& opposing_mask) {
  return tape.squared_mean(extract(tape, group_features, opposing_mask));
}

Var softmax_cross_entropy(Tape& tape, Var logits, const std::vector<int>& labels) {
  const Tensor& z = tape.value(logits);
  if (z.rank() != 2) {
    throw std::invalid_argument("softmax_cross_entropy: logits must be [B,K], got " +
                                shape_to_string(z.shape()));
  }
  const int batch = z.dim(0), k = z.dim(1);
  if (static_cast<int>(labels.size()) != batch) {
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                " labels for batch of " + std::to_string(batch));
  }
  for (int n = 0; n < batch; ++n) {
    if (labels[n] < 0 || labels[n] >= k) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(labels[n]) +
                                  " out of range [0," + std::to_string(k) + ")");
    }
  }
  // Cache the softmax for the backward pass.
  Tensor probs({batch, k});
  double loss = 0.0;
  for (int n = 0; n < batch; ++n) {
    const double* zn = z.data() + static_cast<long long>(n) * k;
    double m = zn[0];
    for (int i = 1; i < k; ++i) m = std::max(m, zn[i]);
    double s = 0.0;
    double* pn = probs.data() + static_cast<long long>(n) * k;
    for (int i = 0; i < k; ++i) {
      pn[i] = std::exp(zn[i] - m);
      s += pn[i];
    }
    for (int i = 0; i < k; ++i) pn[i] /= s;
    loss += std::log(s) - (zn[labels[n]] - m);
  }
  loss /= static_cast<double>(batch);
  return tape.record(Tensor::scalar(loss), {logits},
                     [logits, labels, probs = std::move(probs), batch, k](Tape& t, Var out) {
                       if (!t.requires_grad(logits)) return;
                       const double g = t.grad(out)[0] / static_cast<double>(batch);
                       Tensor& dz = t.grad_buffer(logits);
                       for (int n = 0; n < batch; ++n) {
                         const double* pn = probs.data() + static_cast<long long>(n) * k;
                         double* dn = dz.data() + static_cast<long long>(n) * k;
                         for (int i = 0; i < k; ++i) dn[i] += g * pn[i];
                         dn[labels[n]] -= g;
                       }
                     });
}

Var multilabel_logistic_loss(Tape& tape, Var logits, const Tensor& targets) {
  const Tensor& z = tape.value(logits);
  if (z.rank() != 2 || !z.same_shape(targets)) {
    throw std::invalid_argument("multilabel_logistic_loss: logits " + shape_to_string(z.shape()) +
                                " and targets " + shape_to_string(targets.shape()) +
                                " must be matching [B,K]");
  }
  for (long long i = 0; i < targets.size(); ++i) {
    if (targets[i] != 0.0 && targets[i] != 1.0) {
      throw std::invalid_argument("multilabel_logistic_loss: targets must be exactly 0 or 1");
    }
  }
  const double n = static_cast<double>(z.size());
  // -[t log s(z) + (1-t) log(1-s(z))] = max(z,0) - z t + log(1+exp(-|z|))
  double loss = 0.0;
  for (long long i = 0; i < z.size(); ++i) {
    loss += std::max(z[i], 0.0) - z[i] * targets[i] + std::log1p(std::exp(-std::fabs(z[i])));
  }
  loss /= n;
  return tape.record(Tensor::scalar(loss), {logits},
                     [logits, targets, n](Tape& t, Var out) {
                       if (!t.requires_grad(logits)) return;
                       const double g = t.grad(out)[0] / n;
                       const Tensor& zv = t.value(logits);
                       Tensor& dz = t.grad_buffer(logits);
                       for (long long i = 0; i < zv.size(); ++i) {
                         const double x = zv[i];
                         const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                                   : std::exp(x) / (1.0 + std::exp(x));
                         dz[i] += g * (s - targets[i]);
                       }
                     });
}

}  // namespace gocnn
