#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "mslab/manifold_data.hpp"
#include "mslab/oracles.hpp"
#include "mslab/rng.hpp"

using namespace mslab;

namespace {

// The 1-D VAEase loss written out term by term, independent of the library.
double loss_1d(double x, double g, double mu, double s, double w) {
  const double r = x - w * (1 - s) * mu;
  return 0.5 * (std::log(2 * std::numbers::pi * g) + r * r / g + w * w * s * s * (1 - s) * (1 - s) / g + s * s -
                std::log(s * s) + mu * mu - 1);
}

struct Pair {
  double x, gamma;
};

std::vector<Pair> random_pairs(std::uint64_t seed, int n) {
  Rng rng(seed);
  std::uniform_real_distribution<double> mag(0.5, 3.0), ratio(0.01, 0.64);
  std::vector<Pair> out;
  for (int i = 0; i < n; ++i) {
    const double x = (i % 2 ? -1.0 : 1.0) * mag(rng);
    out.push_back({x, ratio(rng) * x * x});
  }
  return out;
}

}  // namespace

TEST(Vaease1D, ClosedFormExample) {
  const VAEase1D o = vaease_1d_optimum(2.0, 0.1);
  EXPECT_NEAR(o.sigma, std::sqrt(0.1 / 4.0), 1e-15);
  EXPECT_NEAR(o.mu, std::sqrt(1 - 0.1 / 4.0), 1e-15);
  EXPECT_NEAR(o.w, o.mu * 2.0 / (1 - o.sigma), 1e-12);
  EXPECT_NEAR(o.w, 2.345735, 1e-6);
}

TEST(Vaease1D, DomainErrors) {
  EXPECT_THROW(vaease_1d_optimum(0.0, 0.1), std::domain_error);
  EXPECT_THROW(vaease_1d_optimum(1.0, 0.0), std::domain_error);
  EXPECT_THROW(vaease_1d_optimum(1.0, 1.0), std::domain_error);
}

TEST(Vaease1D, LossMatchesIndependentFormula) {
  for (const Pair& p : random_pairs(1, 20)) {
    const VAEase1D q{0.3, 0.4, 1.7};
    EXPECT_NEAR(vaease_1d_loss(p.x, p.gamma, q), loss_1d(p.x, p.gamma, q.mu, q.sigma, q.w), 1e-12);
  }
}

TEST(Vaease1DProperty, KktResidualsVanish) {
  for (const Pair& p : random_pairs(2, 20)) {
    const VAEase1D o = vaease_1d_optimum(p.x, p.gamma);
    const auto g = vaease_1d_gradient(p.x, p.gamma, o);
    for (double v : g) EXPECT_LT(std::abs(v), 1e-10) << p.x << ' ' << p.gamma;
  }
}

TEST(Vaease1DProperty, GradientMatchesFiniteDifferences) {
  for (const Pair& p : random_pairs(3, 20)) {
    const VAEase1D q{0.4, 0.3, 1.2};
    const auto g = vaease_1d_gradient(p.x, p.gamma, q);
    const double h = 1e-6;
    const double fw = (loss_1d(p.x, p.gamma, q.mu, q.sigma, q.w + h) - loss_1d(p.x, p.gamma, q.mu, q.sigma, q.w - h)) / (2 * h);
    const double fm = (loss_1d(p.x, p.gamma, q.mu + h, q.sigma, q.w) - loss_1d(p.x, p.gamma, q.mu - h, q.sigma, q.w)) / (2 * h);
    const double fs = (loss_1d(p.x, p.gamma, q.mu, q.sigma + h, q.w) - loss_1d(p.x, p.gamma, q.mu, q.sigma - h, q.w)) / (2 * h);
    EXPECT_NEAR(g[0], fw, 1e-5 * (1 + std::abs(fw)));
    EXPECT_NEAR(g[1], fm, 1e-5 * (1 + std::abs(fm)));
    EXPECT_NEAR(g[2], fs, 1e-5 * (1 + std::abs(fs)));
  }
}

TEST(Vaease1DProperty, OptimumBeatsNearbyPoints) {
  Rng rng(4);
  std::normal_distribution<double> jitter(0.0, 1e-3);
  for (const Pair& p : random_pairs(5, 20)) {
    const VAEase1D o = vaease_1d_optimum(p.x, p.gamma);
    const double best = loss_1d(p.x, p.gamma, o.mu, o.sigma, o.w);
    for (int k = 0; k < 50; ++k) {
      const double v = loss_1d(p.x, p.gamma, o.mu + jitter(rng), o.sigma + jitter(rng), o.w + jitter(rng));
      EXPECT_GE(v, best - 1e-12);
    }
  }
}

TEST(Vaease1D, NumericalMinimizationFindsClosedForm) {
  for (const Pair& p : random_pairs(6, 20)) {
    const VAEase1D o = vaease_1d_optimum(p.x, p.gamma);
    const VAEase1D n = minimize_vaease_1d(p.x, p.gamma);
    // The loss is symmetric under (mu, w) -> (-mu, -w).
    EXPECT_NEAR(std::abs(n.mu), std::abs(o.mu), 1e-3) << p.x << ' ' << p.gamma;
    EXPECT_NEAR(n.sigma, o.sigma, 1e-3) << p.x << ' ' << p.gamma;
  }
}

TEST(Vaease1D, ReducedLossUsesStationaryWeight) {
  const double x = 1.5, g = 0.2, mu = 0.6, s = 0.3;
  const double w = mu * x / ((1 - s) * (s * s + mu * mu));
  EXPECT_NEAR(vaease_1d_reduced_loss(x, g, mu, s), loss_1d(x, g, mu, s, w), 1e-12);
}

TEST(Vaease1DScan, SingleSignReducedMinimum) {
  const auto mu_grid = uniform_grid(-1.2, 1.2, 241);
  const auto sigma_grid = uniform_grid(0.005, 0.995, 199);
  for (const Pair& p : random_pairs(7, 20)) {
    const LandscapeScan scan = scan_1d_vaease(p.x, p.gamma, mu_grid, sigma_grid);
    EXPECT_EQ(scan.minima_count(), 1u) << p.x << ' ' << p.gamma;
    EXPECT_EQ(scan.loss.size(), mu_grid.size() * sigma_grid.size());
  }
}

TEST(SaeScan, CorollaryRegimeHasSeveralMinima) {
  const auto grid = uniform_grid(0.0, 10.0, 100001);
  const LandscapeScan s = scan_1d_sae(1.0, 0.1, 0.1, PenaltyKind::L1, grid);
  EXPECT_GE(s.minima_count(), 2u);
  const LandscapeScan fine = scan_1d_sae(1.0, 0.1, 0.1, PenaltyKind::L1, uniform_grid(0.0, 10.0, 1000001));
  EXPECT_EQ(fine.minima_count(), s.minima_count());
}

TEST(SaeScan, SmallInputHasOneMinimum) {
  const auto grid = uniform_grid(0.0, 10.0, 100001);
  const LandscapeScan s = scan_1d_sae(0.01, 0.1, 0.1, PenaltyKind::L1, grid);
  EXPECT_EQ(s.minima_count(), 1u);
  ASSERT_EQ(s.local_minima.size(), 1u);
  EXPECT_EQ(s.local_minima[0].location[0], 0.0);
}

TEST(SaeScan, PlateauCountsOnceAndNeedsWeightDecay) {
  // lambda1 = 0 with x = 0: the loss is identically 0, a single plateau that
  // reaches the +inf end of the grid.
  const LandscapeScan flat = scan_1d_sae(0.0, 0.0, 0.1, PenaltyKind::L1, uniform_grid(0.0, 1.0, 101));
  EXPECT_EQ(flat.minima_count(), 1u);
  EXPECT_TRUE(flat.includes_infinity_min);
  EXPECT_THROW(scan_1d_sae(1.0, 0.1, 0.0, PenaltyKind::L1, uniform_grid(0.0, 1.0, 11)), std::invalid_argument);
}

TEST(Decoupling, OrthonormalLossIsSumOfOneDimensionalLosses) {
  Rng rng(8);
  std::uniform_real_distribution<double> unif(0.05, 0.95);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor u = linear_subspace_bases(3, {3}, rng())[0];
    std::vector<double> w(3), x(3), mu(3), s(3);
    for (int j = 0; j < 3; ++j) {
      w[j] = 2 * unif(rng);
      x[j] = 3 * unif(rng) - 1.5;
      mu[j] = 2 * unif(rng) - 1;
      s[j] = unif(rng);
    }
    double sum = 0.0;
    for (int j = 0; j < 3; ++j) {
      double y = 0.0;
      for (int a = 0; a < 3; ++a) y += u(a, j) * x[a];
      sum += loss_1d(y, 0.1, mu[j], s[j], w[j]);
    }
    const double full = vaease_orthonormal_loss(u, w, x, mu, s, 0.1);
    EXPECT_LT(std::abs(full - sum) / std::abs(sum), 1e-12);
  }
}

TEST(LinearVae, ClosedFormExample) {
  const Tensor m = Tensor::matrix({{4, 0, 0}, {0, 1, 0}, {0, 0, 0}});
  const LinearVAESolution sol = linear_vae_closed_form(m, 3, 0.01);
  EXPECT_EQ(sol.active_count, 2u);
  EXPECT_EQ(sol.eigenvalues, (std::vector<double>{4, 1, 0}));
  const double expected = 1.5 * std::log(2 * std::numbers::pi * 0.01) + 0.5 * (std::log(4.0 / 0.01) + 1) +
                          0.5 * (std::log(1.0 / 0.01) + 1);
  EXPECT_NEAR(sol.min_energy, expected, 1e-12);
  EXPECT_NEAR(sol.min_energy, 2.147378, 1e-6);
}

TEST(LinearVae, GradientMinimizationAgrees) {
  const Tensor m = Tensor::matrix({{4, 0, 0}, {0, 1, 0}, {0, 0, 0}});
  EXPECT_NEAR(minimize_linear_vae_energy(m, 3, 0.01), linear_vae_closed_form(m, 3, 0.01).min_energy, 1e-3);
}

TEST(LinearVae, KappaCapsActiveCount) {
  const Tensor m = Tensor::matrix({{4, 0, 0}, {0, 1, 0}, {0, 0, 0.5}});
  EXPECT_EQ(linear_vae_closed_form(m, 1, 0.01).active_count, 1u);
  EXPECT_EQ(linear_vae_closed_form(m, 3, 0.01).active_count, 3u);
  EXPECT_EQ(linear_vae_closed_form(m, 3, 0.75).active_count, 2u);
}

TEST(LinearVae, HalvingGammaLowersEnergyWhenTailIsZero) {
  const Tensor m = Tensor::matrix({{4, 0, 0}, {0, 1, 0}, {0, 0, 0}});
  const double drop = linear_vae_closed_form(m, 3, 0.01).min_energy - linear_vae_closed_form(m, 3, 0.005).min_energy;
  EXPECT_NEAR(drop, 0.5 * std::log(2.0), 1e-12);
}

TEST(LinearVaeProperty, GammaDerivativeMatchesFiniteDifference) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    // Random PSD second moment with a spread of eigenvalues.
    const Tensor q = linear_subspace_bases(5, {5}, rng())[0];
    std::vector<double> lam{5.0, 2.0, 0.7, 0.05, 0.0};
    Tensor m({5, 5});
    for (std::size_t a = 0; a < 5; ++a) {
      for (std::size_t b = 0; b < 5; ++b) {
        for (std::size_t i = 0; i < 5; ++i) m(a, b) += q(a, i) * lam[i] * q(b, i);
      }
    }
    for (std::size_t a = 0; a < 5; ++a) {
      for (std::size_t b = 0; b < a; ++b) m(a, b) = m(b, a);
    }
    const double g = 0.2 + 0.1 * (trial % 3);
    const std::size_t kappa = 4;
    const LinearVAESolution sol = linear_vae_closed_form(m, kappa, g);
    double tail = 0.0;
    for (std::size_t i = sol.active_count; i < 5; ++i) tail += sol.eigenvalues[i];
    const double analytic = (5.0 - static_cast<double>(sol.active_count)) / (2 * g) - tail / (2 * g * g);
    const double h = 1e-6;
    const double fd = (linear_vae_closed_form(m, kappa, g + h).min_energy -
                       linear_vae_closed_form(m, kappa, g - h).min_energy) / (2 * h);
    EXPECT_LT(std::abs(fd - analytic) / std::abs(analytic), 1e-6) << trial;
  }
}

TEST(LinearVae, RejectsNonSymmetricOrIndefinite) {
  EXPECT_THROW(linear_vae_closed_form(Tensor::matrix({{1, 2}, {0, 1}}), 2, 0.1), std::invalid_argument);
  EXPECT_THROW(linear_vae_closed_form(Tensor::matrix({{1, 0}, {0, -1}}), 2, 0.1), std::invalid_argument);
}

TEST(Suites, AllPass) {
  std::ostringstream os;
  EXPECT_TRUE(run_oracle_suite("all", os)) << os.str();
  EXPECT_EQ(os.str().find("FAIL"), std::string::npos);
}

TEST(Suites, UnknownNameThrows) {
  std::ostringstream os;
  EXPECT_THROW(run_oracle_suite("thm9", os), std::invalid_argument);
}
