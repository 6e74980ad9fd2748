#include "gocnn/diversity.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "gocnn/data.hpp"
#include "gocnn/model.hpp"

namespace gocnn {

GroupPartition::GroupPartition(std::vector<std::vector<int>> groups,
                               std::vector<std::string> names)
    : groups_(std::move(groups)), names_(std::move(names)) {
  if (groups_.empty()) throw std::invalid_argument("partition needs at least one group");
  if (names_.size() != groups_.size()) {
    throw std::invalid_argument("partition has " + std::to_string(groups_.size()) +
                                " groups but " + std::to_string(names_.size()) + " names");
  }
  int total = 0;
  for (const auto& g : groups_) {
    if (g.empty()) throw std::invalid_argument("partition contains an empty group");
    total += static_cast<int>(g.size());
  }
  std::vector<char> seen(static_cast<size_t>(total), 0);
  for (const auto& g : groups_) {
    for (int idx : g) {
      if (idx < 0 || idx >= total) {
        throw std::invalid_argument("partition index " + std::to_string(idx) +
                                    " outside [0," + std::to_string(total) + ")");
      }
      if (seen[static_cast<size_t>(idx)]) {
        throw std::invalid_argument("partition groups overlap at channel " + std::to_string(idx));
      }
      seen[static_cast<size_t>(idx)] = 1;
    }
  }
  channels_ = total;
}

GroupPartition GroupPartition::fg_bg(int channels, int fg_parts, int bg_parts) {
  const int parts = fg_parts + bg_parts;
  if (fg_parts < 1 || bg_parts < 1 || channels % parts != 0) {
    throw std::invalid_argument("channel count " + std::to_string(channels) +
                                " is not divisible by group ratio " + std::to_string(fg_parts) +
                                ":" + std::to_string(bg_parts));
  }
  const int fg = channels / parts * fg_parts;
  std::vector<int> g_fg(static_cast<size_t>(fg)), g_bg(static_cast<size_t>(channels - fg));
  for (int i = 0; i < fg; ++i) g_fg[static_cast<size_t>(i)] = i;
  for (int i = fg; i < channels; ++i) g_bg[static_cast<size_t>(i - fg)] = i;
  return GroupPartition({std::move(g_fg), std::move(g_bg)}, {"foreground", "background"});
}

long long GroupPartition::normalizer() const {
  long long z = 0;
  for (size_t s = 0; s < groups_.size(); ++s) {
    for (size_t t = 0; t < groups_.size(); ++t) {
      if (s == t) continue;
      z += static_cast<long long>(groups_[s].size()) * static_cast<long long>(groups_[t].size());
    }
  }
  return z;
}

int GroupPartition::group_of(int channel) const {
  for (size_t g = 0; g < groups_.size(); ++g) {
    for (int idx : groups_[g]) {
      if (idx == channel) return static_cast<int>(g);
    }
  }
  throw std::invalid_argument("channel " + std::to_string(channel) + " not in partition");
}

Tensor pearson_correlation(const Tensor& responses) {
  if (responses.rank() != 2 || responses.dim(0) < 2) {
    throw std::invalid_argument("pearson_correlation needs [S,c] with S >= 2, got " +
                                shape_to_string(responses.shape()));
  }
  const int s = responses.dim(0), c = responses.dim(1);
  std::vector<double> mean(static_cast<size_t>(c), 0.0);
  for (int i = 0; i < s; ++i) {
    const double* row = responses.data() + static_cast<long long>(i) * c;
    for (int j = 0; j < c; ++j) mean[static_cast<size_t>(j)] += row[j];
  }
  for (auto& m : mean) m /= static_cast<double>(s);

  // Centered columns, then normalized dot products.
  std::vector<double> centered(static_cast<size_t>(s) * c);
  std::vector<double> norm(static_cast<size_t>(c), 0.0);
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < c; ++j) {
      const double v = responses[static_cast<long long>(i) * c + j] - mean[static_cast<size_t>(j)];
      centered[static_cast<size_t>(i) * c + j] = v;
      norm[static_cast<size_t>(j)] += v * v;
    }
  }
  Tensor corr({c, c});
  for (int a = 0; a < c; ++a) {
    corr[static_cast<long long>(a) * c + a] = norm[static_cast<size_t>(a)] > 0.0 ? 1.0 : 0.0;
    for (int b = a + 1; b < c; ++b) {
      double r = 0.0;
      const double denom = norm[static_cast<size_t>(a)] * norm[static_cast<size_t>(b)];
      if (denom > 0.0) {
        double dot = 0.0;
        for (int i = 0; i < s; ++i) {
          dot += centered[static_cast<size_t>(i) * c + a] * centered[static_cast<size_t>(i) * c + b];
        }
        r = dot / std::sqrt(denom);
        if (r > 1.0) r = 1.0;
        if (r < -1.0) r = -1.0;
      }
      corr[static_cast<long long>(a) * c + b] = r;
      corr[static_cast<long long>(b) * c + a] = r;
    }
  }
  return corr;
}

namespace {

void check_square(const Tensor& corr) {
  if (corr.rank() != 2 || corr.dim(0) != corr.dim(1)) {
    throw std::invalid_argument("correlation matrix must be square, got " +
                                shape_to_string(corr.shape()));
  }
}

}  // namespace

double model_diversity(const Tensor& corr) {
  check_square(corr);
  const int c = corr.dim(0);
  double s = 0.0;
  for (long long i = 0; i < corr.size(); ++i) s += std::fabs(corr[i]);
  return 1.0 - s / (static_cast<double>(c) * static_cast<double>(c));
}

double model_diversity_offdiag(const Tensor& corr) {
  check_square(corr);
  const int c = corr.dim(0);
  if (c == 1) return 1.0;
  double s = 0.0;
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) {
      if (i != j) s += std::fabs(corr[static_cast<long long>(i) * c + j]);
    }
  }
  return 1.0 - s / (static_cast<double>(c) * (static_cast<double>(c) - 1.0));
}

double group_diversity(const Tensor& corr, const GroupPartition& partition) {
  check_square(corr);
  const int c = corr.dim(0);
  if (partition.channels() != c) {
    throw std::invalid_argument("partition covers " + std::to_string(partition.channels()) +
                                " channels but correlation is " + shape_to_string(corr.shape()));
  }
  const auto& groups = partition.groups();
  double s = 0.0;
  for (size_t gs = 0; gs < groups.size(); ++gs) {
    for (size_t gt = 0; gt < groups.size(); ++gt) {
      if (gs == gt) continue;
      for (int i : groups[gs]) {
        for (int j : groups[gt]) {
          s += std::fabs(corr[static_cast<long long>(i) * c + j]);
        }
      }
    }
  }
  return 1.0 - s / static_cast<double>(partition.normalizer());
}

DiversityReport analyze_responses(const Tensor& responses, const GroupPartition& partition,
                                  int layer_index) {
  DiversityReport rep;
  rep.layer_index = layer_index;
  rep.correlation = pearson_correlation(responses);
  rep.partition = partition;
  rep.zeta = model_diversity(rep.correlation);
  rep.zeta_nodiag = model_diversity_offdiag(rep.correlation);
  rep.zeta_group = group_diversity(rep.correlation, partition);

  const int c = rep.correlation.dim(0);
  double cross = 0.0, within = 0.0;
  long long n_cross = 0, n_within = 0;
  for (int i = 0; i < c; ++i) {
    const int gi = partition.group_of(i);
    for (int j = 0; j < c; ++j) {
      if (i == j) continue;
      const double a = std::fabs(rep.correlation[static_cast<long long>(i) * c + j]);
      if (partition.group_of(j) == gi) {
        within += a;
        ++n_within;
      } else {
        cross += a;
        ++n_cross;
      }
    }
  }
  rep.mean_abs_cross_corr = n_cross > 0 ? cross / static_cast<double>(n_cross) : 0.0;
  rep.mean_abs_within_corr = n_within > 0 ? within / static_cast<double>(n_within) : 0.0;
  return rep;
}

void write_diversity_csv(std::ostream& os, std::span<const DiversityReport> reports) {
  os << "layer,zeta,zeta_group,mean_abs_cross_corr,mean_abs_within_corr,zeta_nodiag\n";
  char buf[192];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof(buf), "%d,%.9f,%.9f,%.9f,%.9f,%.9f\n", r.layer_index, r.zeta,
                  r.zeta_group, r.mean_abs_cross_corr, r.mean_abs_within_corr, r.zeta_nodiag);
    os << buf;
  }
}

Tensor response_matrix(const GoCNNModel& model, int layer_index,
                       std::span<const SampleRecord> samples) {
  if (samples.size() < 2) {
    throw std::invalid_argument("response_matrix needs at least 2 samples, got " +
                                std::to_string(samples.size()));
  }
  const int stage = layer_index == 0 ? static_cast<int>(model.config.stages.size()) : layer_index;
  const LayerShape shape = model.config.stage_shape(stage);
  const int s = static_cast<int>(samples.size());
  Tensor out({s, shape.channels});

  constexpr int kChunk = 64;
  for (int begin = 0; begin < s; begin += kChunk) {
    const int count = std::min(kChunk, s - begin);
    Tensor images({count, model.config.input_channels, model.config.image_size,
                   model.config.image_size});
    for (int i = 0; i < count; ++i) {
      const Tensor& img = samples[static_cast<size_t>(begin + i)].image;
      std::copy(img.data(), img.data() + img.size(), images.data() + img.size() * i);
    }
    Tensor feats = forward_features(model, images, stage);  // [count,C,h,w]
    const long long plane = static_cast<long long>(shape.height) * shape.width;
    for (int i = 0; i < count; ++i) {
      for (int ch = 0; ch < shape.channels; ++ch) {
        const double* src = feats.data() + (static_cast<long long>(i) * shape.channels + ch) * plane;
        double acc = 0.0;
        for (long long j = 0; j < plane; ++j) acc += src[j];
        out[static_cast<long long>(begin + i) * shape.channels + ch] =
            acc / static_cast<double>(plane);
      }
    }
  }
  return out;
}

}  // namespace gocnn
