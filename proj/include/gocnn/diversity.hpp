#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gocnn/tensor.hpp"

namespace gocnn {

struct GoCNNModel;
struct SampleRecord;

// Disjoint assignment of a layer's output channels to named groups.
class GroupPartition {
 public:
  GroupPartition() = default;
  // Validates that the groups are non-empty, pairwise disjoint, and cover
  // 0..channels-1 exactly.
  GroupPartition(std::vector<std::vector<int>> groups, std::vector<std::string> names);

  // The canonical two-group split: foreground takes the first
  // fg_parts/(fg_parts+bg_parts) of the channels (3:1 by default).
  static GroupPartition fg_bg(int channels, int fg_parts = 3, int bg_parts = 1);

  const std::vector<std::vector<int>>& groups() const { return groups_; }
  const std::vector<std::string>& names() const { return names_; }
  size_t group_count() const { return groups_.size(); }
  int channels() const { return channels_; }

  // Z = sum over ordered group pairs (s,t), s != t, of |G_s|*|G_t|; the
  // tightest normalizer that keeps the cross-group correlation sum <= 1.
  long long normalizer() const;

  int group_of(int channel) const;

 private:
  std::vector<std::vector<int>> groups_;
  std::vector<std::string> names_;
  int channels_ = 0;
};

// Pearson correlation matrix of the columns of a [S,c] response matrix
// (S samples, c channel responses). Needs S >= 2. A zero-variance column
// correlates 0 with everything, itself included; entries are clamped to
// [-1,1] against rounding.
Tensor pearson_correlation(const Tensor& responses);

// zeta = 1 - (1/c^2) * sum_{i,j} |corr[i,j]|, diagonal included.
double model_diversity(const Tensor& corr);

// Variant excluding the diagonal: 1 - mean |corr[i,j]| over i != j.
// Degenerate c == 1 has no off-diagonal pairs and reports 1.
double model_diversity_offdiag(const Tensor& corr);

// zeta_g = 1 - (1/Z) * sum over cross-group ordered pairs of |corr[i,j]|.
double group_diversity(const Tensor& corr, const GroupPartition& partition);

struct DiversityReport {
  int layer_index = 0;
  double zeta = 0.0;
  double zeta_group = 0.0;
  double zeta_nodiag = 0.0;
  double mean_abs_cross_corr = 0.0;   // over ordered cross-group pairs
  double mean_abs_within_corr = 0.0;  // over ordered within-group pairs, i != j
  Tensor correlation;
  GroupPartition partition;
};

DiversityReport analyze_responses(const Tensor& responses, const GroupPartition& partition,
                                  int layer_index);

// CSV: layer,zeta,zeta_group,mean_abs_cross_corr,mean_abs_within_corr,zeta_nodiag
void write_diversity_csv(std::ostream& os, std::span<const DiversityReport> reports);

// Per-channel global-average-pooled responses of the probed stage on each
// sample: entry [s,i] is the spatial mean of channel i's activated map on
// sample s. layer_index is 1-based; 0 selects the final stage.
Tensor response_matrix(const GoCNNModel& model, int layer_index,
                       std::span<const SampleRecord> samples);

}  // namespace gocnn
