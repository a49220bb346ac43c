#pragma once

#include <cstddef>

#include "mslab/autodiff.hpp"
#include "mslab/nets.hpp"
#include "mslab/tensor.hpp"

namespace mslab {

/// Batch-averaged loss decomposition.
///
/// For SAE models `total = recon + penalty + weight_decay`; for VAE-family models
/// `total = d/2 log(2 pi gamma) + recon / (2 gamma) + kl`. `recon` is the mean
/// over the batch of the squared reconstruction norm.
struct LossReport {
  double recon = 0.0;
  double kl = 0.0;
  double penalty = 0.0;
  double weight_decay = 0.0;
  double total = 0.0;
  double gamma = 1.0;

  friend bool operator==(const LossReport&, const LossReport&) = default;
};

/// SAE trade-off weights plus penalty parameters (eps for the log penalty,
/// k for top-k masking).
struct SAEHyper {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double eps = 1e-4;
  std::size_t k = 0;

  void validate() const;
};

/// Per-sample KL(N(mu, diag sigma^2) || N(0, I)) = 1/2 sum_j (s^2 - log s^2 + m^2 - 1).
Var kl_diag_gaussian(Var mu, Var sigma);
Tensor kl_diag_gaussian(const Tensor& mu, const Tensor& sigma);

/// (1 - sigma) * (mu + sigma * noise).
Var gate(Var mu, Var sigma, Var noise);
Tensor gate(const Tensor& mu, const Tensor& sigma, const Tensor& noise);

/// 0/1 mask keeping the k largest |z_j| in each row; ties go to the lower index.
Tensor topk_mask(const Tensor& z, std::size_t k);

/// Per-sample penalty h(z). TopK contributes zero (its effect is the mask).
Var penalty(PenaltyKind kind, Var z, const SAEHyper& hyper);
Tensor penalty(PenaltyKind kind, const Tensor& z, const SAEHyper& hyper);

/// Graph-level loss: the differentiable total plus its decomposition.
struct Objective {
  Var total;
  LossReport report;
};

/// The SAE penalty kind, eps and k come from the model spec; lambdas from `hyper`.
Objective sae_objective(const BoundModel& m, Var x, const SAEHyper& hyper);
Objective vae_objective(const BoundModel& m, Var x, const Tensor& noise);
Objective vaease_objective(const BoundModel& m, Var x, const Tensor& noise);
/// Dispatches on the model kind; `noise` is ignored for SAE models.
Objective objective(const BoundModel& m, Var x, const Tensor& noise, const SAEHyper& hyper);

LossReport sae_loss(const Model& m, const Tensor& x, const SAEHyper& hyper);
LossReport vae_loss(const Model& m, const Tensor& x, const Tensor& noise);
LossReport vaease_loss(const Model& m, const Tensor& x, const Tensor& noise);

/// Noise-averaged mean of ||x - W code||^2 for a linear decoder W, in closed form:
/// VAE adds sum_j s_j^2 |w_j|^2 to the error at the mean code, VAEase adds
/// sum_j s_j^2 (1 - s_j)^2 |w_j|^2 with the mean code (1 - s) * m.
double expected_recon_linear(const Model& m, const Tensor& x);

/// The loss with the reconstruction term replaced by its exact expectation
/// over the noise (linear decoders only).
LossReport expected_loss_linear(const Model& m, const Tensor& x, const SAEHyper& hyper = {});

/// Latent code fed to the decoder: mu (SAE, top-k masked when applicable),
/// mu + sigma*noise (VAE), or the gated sample (VAEase).
Tensor latent_code(const Model& m, const Tensor& x, const Tensor& noise);

}  // namespace mslab
