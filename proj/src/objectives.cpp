#include "mslab/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace mslab {

namespace {

void require_kind(const Model& m, ModelKind kind, const char* what) {
  if (m.spec.kind != kind) {
    throw std::invalid_argument(std::string(what) + ": model kind is " +
                                std::string(to_string(m.spec.kind)));
  }
}

SAEHyper effective_hyper(const ModelSpec& spec, SAEHyper hyper) {
  hyper.eps = spec.penalty.eps;
  hyper.k = spec.penalty.k;
  return hyper;
}

Var per_sample_sq_error(Var x, Var recon) { return ad::row_sum(ad::square(ad::sub(x, recon))); }

Objective gaussian_objective(const BoundModel& m, Var x, const Tensor& noise, bool gated) {
  Tape& tape = m.tape();
  const ModelSpec& spec = m.model().spec;
  Encoded enc = encode(m, x);
  require_same_shape(enc.mu.value(), noise, "noise");
  Var eps = tape.constant(noise);
  Var code = gated ? gate(enc.mu, *enc.sigma, eps) : ad::add(enc.mu, ad::mul(*enc.sigma, eps));
  Var recon = ad::mean(per_sample_sq_error(x, decode(m, code)));
  Var kl = ad::mean(kl_diag_gaussian(enc.mu, *enc.sigma));
  Var lg = *m.log_gamma();

  // d/2 log(2 pi gamma) + recon / (2 gamma) + kl
  const double half_d = 0.5 * static_cast<double>(spec.input_dim);
  Var norm = ad::scale(ad::add_scalar(lg, std::log(2.0 * std::numbers::pi)), half_d);
  Var fit = ad::scale(ad::mul(recon, ad::exp(ad::neg(lg))), 0.5);
  Var total = ad::add(ad::add(norm, fit), kl);

  Objective out;
  out.total = total;
  out.report.recon = recon.value().item();
  out.report.kl = kl.value().item();
  out.report.total = total.value().item();
  out.report.gamma = std::exp(lg.value().item());
  return out;
}

Tensor run_value(const Model& m, const Tensor& x, const Tensor& noise, const SAEHyper* hyper,
                 LossReport* report) {
  Tape tape(false);
  BoundModel bm(m, tape);
  Var xv = tape.constant(x);
  Objective o = hyper ? sae_objective(bm, xv, *hyper)
                      : (m.spec.kind == ModelKind::VAE ? vae_objective(bm, xv, noise)
                                                       : vaease_objective(bm, xv, noise));
  *report = o.report;
  return o.total.value();
}

}  // namespace

void SAEHyper::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw std::invalid_argument("SAE lambdas must be >= 0");
  if (!(eps > 0.0)) throw std::invalid_argument("SAE eps must be > 0");
}

Var kl_diag_gaussian(Var mu, Var sigma) {
  require_same_shape(mu.value(), sigma.value(), "kl_diag_gaussian");
  for (double s : sigma.value().data()) {
    if (!(s > 0.0)) throw std::domain_error("kl_diag_gaussian: sigma must be positive");
  }
  // s^2 - 2 log s + m^2 - 1
  Var terms = ad::add_scalar(
      ad::add(ad::sub(ad::square(sigma), ad::scale(ad::log(sigma), 2.0)), ad::square(mu)), -1.0);
  return ad::scale(ad::row_sum(terms), 0.5);
}

Tensor kl_diag_gaussian(const Tensor& mu, const Tensor& sigma) {
  Tape tape(false);
  return kl_diag_gaussian(tape.constant(mu), tape.constant(sigma)).value();
}

Var gate(Var mu, Var sigma, Var noise) {
  require_same_shape(mu.value(), sigma.value(), "gate");
  require_same_shape(mu.value(), noise.value(), "gate");
  Var z = ad::add(mu, ad::mul(sigma, noise));
  return ad::mul(ad::rsub_scalar(1.0, sigma), z);
}

Tensor gate(const Tensor& mu, const Tensor& sigma, const Tensor& noise) {
  Tape tape(false);
  return gate(tape.constant(mu), tape.constant(sigma), tape.constant(noise)).value();
}

Tensor topk_mask(const Tensor& z, std::size_t k) {
  const std::size_t rows = z.rows(), cols = z.cols();
  if (k > cols) throw std::invalid_argument("topk_mask: k exceeds code width");
  Tensor mask(z.shape());
  std::vector<std::size_t> order(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(z(r, a)) > std::abs(z(r, b));
    });
    for (std::size_t i = 0; i < k; ++i) mask[r * cols + order[i]] = 1.0;
  }
  return mask;
}

Var penalty(PenaltyKind kind, Var z, const SAEHyper& hyper) {
  Tape& tape = *z.tape();
  switch (kind) {
    case PenaltyKind::L1: return ad::row_sum(ad::abs(z));
    case PenaltyKind::LogEps:
      if (!(hyper.eps > 0.0)) throw std::invalid_argument("log penalty needs eps > 0");
      return ad::row_sum(ad::log(ad::add_scalar(ad::abs(z), hyper.eps)));
    case PenaltyKind::TopK:
    case PenaltyKind::None: return tape.constant(Tensor({z.value().rows()}));
  }
  throw std::invalid_argument("unknown penalty kind");
}

Tensor penalty(PenaltyKind kind, const Tensor& z, const SAEHyper& hyper) {
  Tape tape(false);
  return penalty(kind, tape.constant(z), hyper).value();
}

Objective sae_objective(const BoundModel& m, Var x, const SAEHyper& user_hyper) {
  require_kind(m.model(), ModelKind::SAE, "sae_objective");
  const ModelSpec& spec = m.model().spec;
  const SAEHyper hyper = effective_hyper(spec, user_hyper);
  hyper.validate();
  Tape& tape = m.tape();

  Var z = encode(m, x).mu;
  if (spec.penalty.kind == PenaltyKind::TopK) {
    z = ad::mul(z, tape.constant(topk_mask(z.value(), hyper.k)));
  }
  Var recon = ad::mean(per_sample_sq_error(x, decode(m, z)));
  Var pen = ad::scale(ad::mean(penalty(spec.penalty.kind, z, hyper)), hyper.lambda1);

  Var wd = tape.constant(Tensor::scalar(0.0));
  for (const auto& [name, value] : m.model().params) {
    if (m.model().is_decoder_param(name)) wd = ad::add(wd, ad::sum(ad::square(m.param(name))));
  }
  wd = ad::scale(wd, hyper.lambda2);
  Var total = ad::add(ad::add(recon, pen), wd);

  Objective out;
  out.total = total;
  out.report.recon = recon.value().item();
  out.report.penalty = pen.value().item();
  out.report.weight_decay = wd.value().item();
  out.report.total = total.value().item();
  out.report.gamma = 1.0;
  return out;
}

Objective vae_objective(const BoundModel& m, Var x, const Tensor& noise) {
  require_kind(m.model(), ModelKind::VAE, "vae_objective");
  return gaussian_objective(m, x, noise, false);
}

Objective vaease_objective(const BoundModel& m, Var x, const Tensor& noise) {
  require_kind(m.model(), ModelKind::VAEase, "vaease_objective");
  return gaussian_objective(m, x, noise, true);
}

Objective objective(const BoundModel& m, Var x, const Tensor& noise, const SAEHyper& hyper) {
  switch (m.model().spec.kind) {
    case ModelKind::SAE: return sae_objective(m, x, hyper);
    case ModelKind::VAE: return vae_objective(m, x, noise);
    case ModelKind::VAEase: return vaease_objective(m, x, noise);
  }
  throw std::invalid_argument("unknown model kind");
}

LossReport sae_loss(const Model& m, const Tensor& x, const SAEHyper& hyper) {
  require_kind(m, ModelKind::SAE, "sae_loss");
  LossReport r;
  run_value(m, x, Tensor(), &hyper, &r);
  return r;
}

LossReport vae_loss(const Model& m, const Tensor& x, const Tensor& noise) {
  require_kind(m, ModelKind::VAE, "vae_loss");
  LossReport r;
  run_value(m, x, noise, nullptr, &r);
  return r;
}

LossReport vaease_loss(const Model& m, const Tensor& x, const Tensor& noise) {
  require_kind(m, ModelKind::VAEase, "vaease_loss");
  LossReport r;
  run_value(m, x, noise, nullptr, &r);
  return r;
}

double expected_recon_linear(const Model& m, const Tensor& x) {
  if (m.spec.decoder != DecoderArch::Linear) {
    throw std::invalid_argument("expected_recon_linear needs a linear decoder");
  }
  const std::size_t n = x.rows();
  if (n == 0) return 0.0;
  const std::size_t k = m.spec.latent_dim;
  const Tensor& w = m.params.at("dec.weight");
  std::vector<double> col_sq(k, 0.0);
  for (std::size_t a = 0; a < w.rows(); ++a) {
    for (std::size_t j = 0; j < k; ++j) col_sq[j] += w(a, j) * w(a, j);
  }

  const Tensor mean_code = latent_code(m, x, Tensor({n, k}));
  const Tensor recon = decode(m, mean_code);
  double total = 0.0;
  for (std::size_t i = 0; i < recon.size(); ++i) total += (x[i] - recon[i]) * (x[i] - recon[i]);
  if (m.spec.stochastic()) {
    const Tensor sigma = *encode(m, x).sigma;
    const bool gated = m.spec.kind == ModelKind::VAEase;
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t j = 0; j < k; ++j) {
        const double v = gated ? sigma(s, j) * (1.0 - sigma(s, j)) : sigma(s, j);
        total += v * v * col_sq[j];
      }
    }
  }
  return total / static_cast<double>(n);
}

LossReport expected_loss_linear(const Model& m, const Tensor& x, const SAEHyper& hyper) {
  const double recon = expected_recon_linear(m, x);
  LossReport r;
  if (m.spec.kind == ModelKind::SAE) {
    r = sae_loss(m, x, hyper);
    r.total += recon - r.recon;
    r.recon = recon;
    return r;
  }
  const EncodedValue e = encode(m, x);
  r.recon = recon;
  r.kl = kl_diag_gaussian(e.mu, *e.sigma).sum() / static_cast<double>(x.rows());
  r.gamma = m.gamma();
  r.total = 0.5 * static_cast<double>(m.spec.input_dim) * std::log(2.0 * std::numbers::pi * r.gamma) +
            recon / (2.0 * r.gamma) + r.kl;
  return r;
}

Tensor latent_code(const Model& m, const Tensor& x, const Tensor& noise) {
  EncodedValue e = encode(m, x);
  switch (m.spec.kind) {
    case ModelKind::SAE:
      if (m.spec.penalty.kind == PenaltyKind::TopK) {
        Tensor mask = topk_mask(e.mu, m.spec.penalty.k);
        for (std::size_t i = 0; i < mask.size(); ++i) e.mu[i] *= mask[i];
      }
      return e.mu;
    case ModelKind::VAE: {
      require_same_shape(e.mu, noise, "latent_code");
      Tensor z = e.mu;
      for (std::size_t i = 0; i < z.size(); ++i) z[i] += (*e.sigma)[i] * noise[i];
      return z;
    }
    case ModelKind::VAEase: return gate(e.mu, *e.sigma, noise);
  }
  throw std::invalid_argument("unknown model kind");
}

}  // namespace mslab
