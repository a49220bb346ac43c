#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "mslab/manifold_data.hpp"
#include "mslab/nets.hpp"

namespace mslab {

/// Two-group split of sorted values minimizing the sum of the two population
/// variances. Returns the size of the lower group, or nullopt when all values
/// coincide. Near-ties (1e-12 relative) resolve to the smaller lower group.
std::optional<std::size_t> variance_split(std::span<const double> sorted_values);

struct ADProfile {
  std::vector<std::vector<std::size_t>> per_sample_active;  ///< sorted dim indices
  std::vector<std::uint16_t> labels;
  std::vector<double> per_group_count;      ///< mean |A(x)| over each group's samples
  std::vector<std::size_t> group_split_count;  ///< dims on the active side of each group split
  std::vector<double> group_threshold;      ///< split value in raw (VAE) or log (SAE) units
  double overall_mean = 0.0;
};

/// VAE family: per-group mean sigma per dim, low side active. SAE: per-group
/// mean |z| per dim in log(|z| + 1e-12) space, high side active. Per-sample
/// sets apply the group threshold to that sample's own values.
ADProfile active_dims(const Model& model, const ManifoldDataset& data);

/// Mean of ||x - decode(code)||^2 over samples and noise draws (one draw for SAE).
double reconstruction_error(const Model& model, const Tensor& x, std::size_t n_noise_draws = 16,
                            std::uint64_t seed = 0);

struct MaskingCurve {
  std::vector<std::size_t> order;  ///< dims in masking order, least informative first
  std::vector<double> re;          ///< re[m] = RE with the first m dims of `order` zeroed
};

/// Per-dim informativeness used to order masking.
std::vector<double> informativeness(const Model& model, const Tensor& x);

MaskingCurve masking_curve(const Model& model, const Tensor& x, std::size_t n_noise_draws = 16,
                           std::uint64_t seed = 0);

/// Soft property: after the first step that doubles the unmasked RE the curve never decreases.
bool masking_curve_monotone_tail(const MaskingCurve& curve);

struct Histogram {
  std::vector<double> edges;  ///< n_bins + 1 edges
  std::vector<std::size_t> counts;

  std::size_t total() const;
  /// Distance between the centers of the two tallest local modes; 0 with fewer than two.
  double mode_gap() const;
};

Histogram histogram(std::span<const double> values, std::size_t n_bins);
/// Histogram of log10(|z| + 1e-12) over every coordinate of the noise-free code.
Histogram logabs_histogram(const Model& model, const Tensor& x, std::size_t n_bins);

struct GroupMetric {
  double intra = 0.0;
  double inter = 0.0;
};

/// |A u B| - |A n B| for two sorted index sets.
std::size_t set_difference_size(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

/// Mean set difference over seeded random same-group and cross-group pairs.
GroupMetric group_ad_difference(const ADProfile& profile, std::span<const std::uint16_t> labels,
                                std::size_t n_pairs = 10000, std::uint64_t seed = 0);

void write_ad_profile_csv(const ADProfile& p, std::ostream& os);
void write_masking_curve_csv(const MaskingCurve& c, std::ostream& os);
void write_histogram_csv(const Histogram& h, std::ostream& os);
void write_group_metric_csv(const GroupMetric& g, std::ostream& os);

}  // namespace mslab
