#include "mslab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <stdexcept>

#include "mslab/objectives.hpp"
#include "mslab/rng.hpp"

namespace mslab {

namespace {

constexpr double kLogFloor = 1e-12;

double population_variance(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return acc / static_cast<double>(v.size());
}

Tensor noise_draw(std::size_t rows, std::size_t cols, std::uint64_t seed, std::size_t draw) {
  Rng rng(derive_seed(seed, draw));
  return normal_tensor({rows, cols}, rng);
}

double masked_re(const Model& m, const Tensor& x, const std::vector<bool>& masked,
                 const std::vector<Tensor>& draws) {
  if (x.rows() == 0) return 0.0;
  double total = 0.0;
  for (const Tensor& noise : draws) {
    Tensor code = latent_code(m, x, noise);
    const std::size_t k = code.cols();
    for (std::size_t r = 0; r < code.rows(); ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        if (masked[j]) code(r, j) = 0.0;
      }
    }
    const Tensor recon = decode(m, code);
    for (std::size_t i = 0; i < recon.size(); ++i) {
      const double e = x[i] - recon[i];
      total += e * e;
    }
  }
  return total / static_cast<double>(x.rows() * draws.size());
}

std::vector<Tensor> make_draws(const Model& m, std::size_t rows, std::size_t n_draws,
                               std::uint64_t seed) {
  const std::size_t k = m.spec.latent_dim;
  if (!m.spec.stochastic()) return {Tensor({rows, k})};
  if (n_draws == 0) throw std::invalid_argument("need at least one noise draw");
  std::vector<Tensor> draws;
  for (std::size_t i = 0; i < n_draws; ++i) draws.push_back(noise_draw(rows, k, seed, i));
  return draws;
}

void check_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw std::runtime_error(std::string(what) + ": model produced non-finite values");
}

}  // namespace

std::optional<std::size_t> variance_split(std::span<const double> v) {
  if (v.size() < 2) throw std::invalid_argument("variance_split needs at least two values");
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw std::invalid_argument("variance_split: non-finite value");
    if (i > 0 && v[i] < v[i - 1]) throw std::invalid_argument("variance_split: values must be sorted");
  }
  if (v.front() == v.back()) return std::nullopt;
  std::size_t best = 1;
  double best_cost = population_variance(v.subspan(0, 1)) + population_variance(v.subspan(1));
  for (std::size_t s = 2; s < v.size(); ++s) {
    const double cost = population_variance(v.subspan(0, s)) + population_variance(v.subspan(s));
    const double tol = 1e-12 * std::max(std::abs(best_cost), std::abs(cost));
    if (cost < best_cost - tol) {
      best_cost = cost;
      best = s;
    }
  }
  return best;
}

ADProfile active_dims(const Model& model, const ManifoldDataset& data) {
  const std::size_t k = model.spec.latent_dim;
  const std::size_t n = data.size();
  const std::size_t groups = data.n_manifolds();
  const bool sae = !model.spec.stochastic();

  // Per-sample statistic: sigma for the VAE family, log(|z| + floor) for SAE.
  Tensor stat;
  if (sae) {
    stat = latent_code(model, data.samples, Tensor());
    for (double& z : stat.storage()) z = std::log(std::abs(z) + kLogFloor);
  } else {
    stat = *encode(model, data.samples).sigma;
  }
  check_finite(stat, "active_dims");

  ADProfile p;
  p.labels = data.manifold_id;
  p.per_sample_active.resize(n);
  p.per_group_count.assign(groups, 0.0);
  p.group_split_count.assign(groups, 0);
  p.group_threshold.assign(groups, std::numeric_limits<double>::quiet_NaN());

  const std::vector<std::size_t> counts = data.counts();
  for (std::size_t g = 0; g < groups; ++g) {
    if (counts[g] == 0) continue;
    // SAE statistics average |z| first, then move to log space.
    std::vector<double> mean(k, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      if (data.manifold_id[s] != g) continue;
      for (std::size_t j = 0; j < k; ++j) mean[j] += sae ? std::exp(stat(s, j)) : stat(s, j);
    }
    for (double& m : mean) {
      m /= static_cast<double>(counts[g]);
      if (sae) m = std::log(m);
    }
    std::vector<double> sorted = mean;
    std::sort(sorted.begin(), sorted.end());
    const std::optional<std::size_t> lower = k >= 2 ? variance_split(sorted) : std::nullopt;
    if (!lower) continue;
    const double threshold = 0.5 * (sorted[*lower - 1] + sorted[*lower]);
    p.group_threshold[g] = threshold;
    p.group_split_count[g] = sae ? k - *lower : *lower;
    for (std::size_t s = 0; s < n; ++s) {
      if (data.manifold_id[s] != g) continue;
      for (std::size_t j = 0; j < k; ++j) {
        const bool active = sae ? stat(s, j) > threshold : stat(s, j) < threshold;
        if (active) p.per_sample_active[s].push_back(j);
      }
    }
  }

  std::size_t total = 0;
  for (std::size_t s = 0; s < n; ++s) {
    p.per_group_count[data.manifold_id[s]] += static_cast<double>(p.per_sample_active[s].size());
    total += p.per_sample_active[s].size();
  }
  for (std::size_t g = 0; g < groups; ++g) {
    if (counts[g] > 0) p.per_group_count[g] /= static_cast<double>(counts[g]);
  }
  p.overall_mean = n > 0 ? static_cast<double>(total) / static_cast<double>(n) : 0.0;
  return p;
}

double reconstruction_error(const Model& model, const Tensor& x, std::size_t n_noise_draws,
                            std::uint64_t seed) {
  const auto draws = make_draws(model, x.rows(), n_noise_draws, seed);
  return masked_re(model, x, std::vector<bool>(model.spec.latent_dim, false), draws);
}

std::vector<double> informativeness(const Model& model, const Tensor& x) {
  const std::size_t k = model.spec.latent_dim;
  std::vector<double> info(k, 0.0);
  const std::size_t n = x.rows();
  if (n == 0) return info;
  const EncodedValue e = encode(model, x);
  const Tensor code = model.spec.stochastic() ? Tensor() : latent_code(model, x, Tensor());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < k; ++j) {
      switch (model.spec.kind) {
        case ModelKind::VAEase:
          info[j] += std::abs((1.0 - (*e.sigma)(s, j)) * e.mu(s, j));
          break;
        case ModelKind::VAE: info[j] += 1.0 - (*e.sigma)(s, j); break;
        case ModelKind::SAE: info[j] += std::abs(code(s, j)); break;
      }
    }
  }
  for (double& v : info) v /= static_cast<double>(n);
  return info;
}

MaskingCurve masking_curve(const Model& model, const Tensor& x, std::size_t n_noise_draws,
                           std::uint64_t seed) {
  const std::size_t k = model.spec.latent_dim;
  const std::vector<double> info = informativeness(model, x);
  MaskingCurve c;
  c.order.resize(k);
  std::iota(c.order.begin(), c.order.end(), std::size_t{0});
  std::stable_sort(c.order.begin(), c.order.end(),
                   [&](std::size_t a, std::size_t b) { return info[a] < info[b]; });
  const auto draws = make_draws(model, x.rows(), n_noise_draws, seed);
  std::vector<bool> masked(k, false);
  c.re.push_back(masked_re(model, x, masked, draws));
  for (std::size_t j : c.order) {
    masked[j] = true;
    c.re.push_back(masked_re(model, x, masked, draws));
  }
  return c;
}

bool masking_curve_monotone_tail(const MaskingCurve& curve) {
  if (curve.re.empty()) return true;
  const double base = curve.re.front();
  std::size_t i = 0;
  while (i < curve.re.size() && curve.re[i] <= 2.0 * base) ++i;
  for (std::size_t j = i + 1; j < curve.re.size(); ++j) {
    if (curve.re[j] < curve.re[j - 1]) return false;
  }
  return true;
}

std::size_t Histogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

double Histogram::mode_gap() const {
  std::vector<std::size_t> modes;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) continue;
    // A plateau counts once, at its leftmost bin.
    const bool left_ok = i == 0 || counts[i] > counts[i - 1];
    std::size_t j = i;
    while (j + 1 < counts.size() && counts[j + 1] == counts[i]) ++j;
    const bool right_ok = j + 1 == counts.size() || counts[i] > counts[j + 1];
    if (left_ok && right_ok) modes.push_back(i);
  }
  if (modes.size() < 2) return 0.0;
  std::stable_sort(modes.begin(), modes.end(),
                   [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  const auto center = [&](std::size_t b) { return 0.5 * (edges[b] + edges[b + 1]); };
  return std::abs(center(modes[0]) - center(modes[1]));
}

Histogram histogram(std::span<const double> values, std::size_t n_bins) {
  if (n_bins == 0) throw std::invalid_argument("histogram needs at least one bin");
  Histogram h;
  h.counts.assign(n_bins, 0);
  double lo = 0.0, hi = 1.0;
  if (!values.empty()) {
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    lo = *mn;
    hi = *mx > *mn ? *mx : *mn + 1.0;
  }
  const double width = (hi - lo) / static_cast<double>(n_bins);
  for (std::size_t b = 0; b <= n_bins; ++b) h.edges.push_back(lo + width * static_cast<double>(b));
  h.edges.back() = hi;
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    h.counts[std::min(b, n_bins - 1)]++;
  }
  return h;
}

Histogram logabs_histogram(const Model& model, const Tensor& x, std::size_t n_bins) {
  Tensor code = latent_code(model, x, Tensor({x.rows(), model.spec.latent_dim}));
  check_finite(code, "logabs_histogram");
  for (double& z : code.storage()) z = std::log10(std::abs(z) + kLogFloor);
  return histogram(code.storage(), n_bins);
}

std::size_t set_difference_size(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::vector<std::size_t> uni, inter;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  return uni.size() - inter.size();
}

GroupMetric group_ad_difference(const ADProfile& profile, std::span<const std::uint16_t> labels,
                                std::size_t n_pairs, std::uint64_t seed) {
  if (labels.size() != profile.per_sample_active.size()) {
    throw std::invalid_argument("group_ad_difference: one label per sample required");
  }
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    if (labels[s] >= members.size()) members.resize(labels[s] + 1);
    members[labels[s]].push_back(s);
  }
  std::erase_if(members, [](const auto& m) { return m.empty(); });
  if (members.size() < 2) throw std::invalid_argument("group_ad_difference needs at least two groups");
  for (const auto& m : members) {
    if (m.size() < 2) throw std::invalid_argument("group_ad_difference: a group has fewer than two members");
  }

  Rng rng(derive_seed(seed, 0x9a1));
  std::uniform_int_distribution<std::size_t> any(0, labels.size() - 1);
  const auto& sets = profile.per_sample_active;
  GroupMetric g;
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const std::size_t a = any(rng);
    std::size_t b = a;
    while (b == a || labels[b] != labels[a]) b = any(rng);
    g.intra += static_cast<double>(set_difference_size(sets[a], sets[b]));
    std::size_t c = any(rng);
    while (labels[c] == labels[a]) c = any(rng);
    g.inter += static_cast<double>(set_difference_size(sets[a], sets[c]));
  }
  if (n_pairs > 0) {
    g.intra /= static_cast<double>(n_pairs);
    g.inter /= static_cast<double>(n_pairs);
  }
  return g;
}

void write_ad_profile_csv(const ADProfile& p, std::ostream& os) {
  os << "manifold_id,mean_AD\n" << std::setprecision(17);
  for (std::size_t g = 0; g < p.per_group_count.size(); ++g) os << g << ',' << p.per_group_count[g] << '\n';
}

void write_masking_curve_csv(const MaskingCurve& c, std::ostream& os) {
  os << "n_masked,RE\n" << std::setprecision(17);
  for (std::size_t m = 0; m < c.re.size(); ++m) os << m << ',' << c.re[m] << '\n';
}

void write_histogram_csv(const Histogram& h, std::ostream& os) {
  os << "bin_lo,bin_hi,count\n" << std::setprecision(17);
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    os << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.counts[b] << '\n';
  }
}

void write_group_metric_csv(const GroupMetric& g, std::ostream& os) {
  os << "intra,inter\n" << std::setprecision(17) << g.intra << ',' << g.inter << '\n';
}

}  // namespace mslab
