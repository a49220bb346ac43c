#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <span>
#include <string_view>
#include <vector>

#include "mslab/nets.hpp"
#include "mslab/tensor.hpp"

namespace mslab {

// ---------------------------------------------------------------------------
// One-dimensional VAEase problem with decoder weight w.

struct VAEase1D {
  double mu = 0.0;
  double sigma = 0.0;
  double w = 0.0;
};

/// Unique minimizer: sigma = sqrt(gamma / x^2), mu = sqrt(1 - gamma / x^2).
/// Throws std::domain_error unless x != 0 and 0 < gamma < x^2.
VAEase1D vaease_1d_optimum(double x, double gamma);

/// 1/2 [log 2 pi g + (x - w(1-s)m)^2/g + w^2 s^2 (1-s)^2/g + s^2 - log s^2 + m^2 - 1].
double vaease_1d_loss(double x, double gamma, const VAEase1D& p);

/// Partial derivatives of vaease_1d_loss in the order (w, mu, sigma).
std::array<double, 3> vaease_1d_gradient(double x, double gamma, const VAEase1D& p);

/// Loss with w replaced by its stationary value mu x / ((1 - s)(s^2 + mu^2)).
double vaease_1d_reduced_loss(double x, double gamma, double mu, double sigma);

/// Adam on (w, mu, logit sigma) from (x, 0.5, 0), cosine-decayed step size.
VAEase1D minimize_vaease_1d(double x, double gamma, std::size_t steps = 5000, double lr = 0.05);

/// Full loss of the d-dim problem with decoder U diag(w), U orthonormal [d x d],
/// using the exact noise expectation of the reconstruction term.
double vaease_orthonormal_loss(const Tensor& u, std::span<const double> w, std::span<const double> x,
                               std::span<const double> mu, std::span<const double> sigma,
                               double gamma);

// ---------------------------------------------------------------------------
// Grid scans.

struct LocalMinimum {
  std::vector<double> location;
  double value = 0.0;
};

struct LandscapeScan {
  std::vector<std::vector<double>> axes;  ///< one axis (z) or two (mu, sigma)
  std::vector<double> loss;               ///< row-major over the axes
  std::vector<LocalMinimum> local_minima;
  bool includes_infinity_min = false;

  std::size_t minima_count() const { return local_minima.size() + (includes_infinity_min ? 1 : 0); }
};

std::vector<double> uniform_grid(double lo, double hi, std::size_t n);

/// lambda2 x^2 / (lambda2 + z^2) + lambda1 h(z) over an ascending z grid.
/// The right end of the grid stands for +inf: it is reported through
/// includes_infinity_min when the last 10% of the grid is non-increasing.
LandscapeScan scan_1d_sae(double x, double lambda1, double lambda2, PenaltyKind h,
                          std::span<const double> z_grid, double eps = 1e-4);

/// Reduced loss over a (mu, sigma) grid; sigma values must lie strictly in (0, 1).
/// Interior minima (strict against all 8 neighbours) with mu < 0 are folded onto
/// their mirror images.
LandscapeScan scan_1d_vaease(double x, double gamma, std::span<const double> mu_grid,
                             std::span<const double> sigma_grid);

void write_scan_csv(const LandscapeScan& scan, std::ostream& os);

// ---------------------------------------------------------------------------
// Linear VAE.

struct LinearVAESolution {
  std::vector<double> eigenvalues;  ///< descending
  std::vector<double> s_diag;       ///< length kappa
  std::size_t active_count = 0;
  double min_energy = 0.0;
};

/// Optimum of the linear-encoder, linear-decoder VAE with fixed gamma for data
/// with the given second moment. Dimensions with eigenvalue <= gamma, or beyond
/// the first kappa, contribute lambda_i / (2 gamma).
LinearVAESolution linear_vae_closed_form(const Tensor& second_moment, std::size_t kappa,
                                         double gamma);

/// Gradient-based minimization of the same energy over (A, W, log sigma).
double minimize_linear_vae_energy(const Tensor& second_moment, std::size_t kappa, double gamma,
                                  std::size_t steps = 20000, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// SAE rescaling degeneracy.

struct DegeneracyProbe {
  double recon_delta = 0.0;
  double total_delta = 0.0;
};

/// Compares (alpha z, W / alpha) against (z, W) for one sample x under a linear decoder.
DegeneracyProbe scaling_degeneracy_probe(std::span<const double> x, std::span<const double> z,
                                         const Tensor& w, double alpha, PenaltyKind h,
                                         double lambda1, double lambda2, double eps = 1e-4);

// ---------------------------------------------------------------------------

/// Runs a named suite (thm2, cor2, linvae, degeneracy, all), printing one line per
/// check. Returns true when every check passes.
bool run_oracle_suite(std::string_view name, std::ostream& report);

}  // namespace mslab
