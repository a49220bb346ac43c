#include "mslab/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mslab/rng.hpp"

namespace mslab {

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               double lr) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params but " +
                     std::to_string(grads.size()) + " grads");
  }
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], grads[i], "adam_step");
    require_same_shape(*params[i], state.m[i], "adam_step state");
  }

  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i]->storage().data();
    const double* g = grads[i].storage().data();
    double* m = state.m[i].storage().data();
    double* v = state.v[i].storage().data();
    for (std::size_t j = 0, n = grads[i].size(); j < n; ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
    }
  }
}

double cosine_warm_restart_lr(std::size_t step_in_cycle, std::size_t cycle_len, double lr_max,
                              double eta_min) {
  if (cycle_len == 0 || step_in_cycle >= cycle_len) {
    throw std::invalid_argument("cosine_warm_restart_lr: need 0 <= step < cycle length");
  }
  const double t = static_cast<double>(step_in_cycle) / static_cast<double>(cycle_len);
  return eta_min + 0.5 * (lr_max - eta_min) * (1.0 + std::cos(std::numbers::pi * t));
}

double SchedulerConfig::lr_at(std::size_t epoch, double lr_max) const {
  std::size_t len = T0;
  double exact = static_cast<double>(T0);
  while (epoch >= len) {
    epoch -= len;
    exact *= mult;
    len = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(exact)));
  }
  return cosine_warm_restart_lr(epoch, len, lr_max, eta_min);
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (scheduler.T0 < 1) throw std::invalid_argument("scheduler T0 must be >= 1");
  if (!(scheduler.mult >= 1.0)) throw std::invalid_argument("scheduler mult must be >= 1");
  if (!(scheduler.eta_min >= 0.0 && scheduler.eta_min <= lr)) {
    throw std::invalid_argument("scheduler eta_min must lie in [0, lr]");
  }
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (hyper) hyper->validate();
  if (fixed_gamma && !(*fixed_gamma >= kMinGamma && *fixed_gamma <= kMaxGamma)) {
    throw std::invalid_argument("fixed_gamma out of range");
  }
}

namespace {

void accumulate(LossReport& acc, const LossReport& r, double w) {
  acc.recon += w * r.recon;
  acc.kl += w * r.kl;
  acc.penalty += w * r.penalty;
  acc.weight_decay += w * r.weight_decay;
  acc.total += w * r.total;
}

std::string describe(const LossReport& r) {
  std::ostringstream os;
  os << std::setprecision(6) << "total=" << r.total << " recon=" << r.recon << " kl=" << r.kl
     << " penalty=" << r.penalty << " wd=" << r.weight_decay << " gamma=" << r.gamma;
  return os.str();
}

}  // namespace

TrainLog train(Model& model, const ManifoldDataset& data, const TrainConfig& config,
               std::ostream* progress) {
  config.validate();
  model.spec.validate();
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (data.d != model.spec.input_dim) {
    throw std::invalid_argument("train: dataset dimension " + std::to_string(data.d) +
                                " does not match model input " +
                                std::to_string(model.spec.input_dim));
  }
  const bool is_sae = model.spec.kind == ModelKind::SAE;
  if (is_sae != config.hyper.has_value()) {
    throw std::invalid_argument(is_sae ? "train: SAE models need lambda1/lambda2"
                                       : "train: SAE hyperparameters given for a VAE-family model");
  }
  if (config.fixed_gamma && is_sae) throw std::invalid_argument("train: fixed_gamma needs a VAE-family model");
  if (config.fixed_gamma) model.params.at("log_gamma")[0] = std::log(*config.fixed_gamma);
  const SAEHyper hyper = config.hyper.value_or(SAEHyper{});

  const auto start = std::chrono::steady_clock::now();
  Rng rng(derive_seed(config.seed, 0x7a11));
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = data.size();
  const std::size_t kappa = model.spec.latent_dim;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<Tensor*> targets;
  std::size_t gamma_index = model.params.size();
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    targets.push_back(&model.params[i].second);
    if (model.params[i].first == "log_gamma") gamma_index = i;
  }
  AdamState adam;
  TrainLog log;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.scheduler.lr_at(epoch, config.lr);
    std::shuffle(order.begin(), order.end(), rng);
    LossReport epoch_report;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      const Tensor x = data.samples.gather_rows(
          std::span<const std::size_t>(order.data() + begin, end - begin));
      Tensor noise;
      if (!is_sae) {
        noise = Tensor({end - begin, kappa});
        for (double& v : noise.storage()) v = normal(rng);
      }

      Tape tape;
      BoundModel bm(model, tape);
      Objective obj;
      std::vector<Tensor> grads;
      try {
        obj = objective(bm, tape.constant(x), noise, hyper);
        if (!std::isfinite(obj.report.total)) throw NonFiniteError("non-finite loss");
        tape.backward(obj.total);
        grads = bm.grads();
        for (const Tensor& g : grads) {
          if (!g.all_finite()) throw NonFiniteError("non-finite gradient");
        }
      } catch (const std::exception& e) {
        if (!dynamic_cast<const NonFiniteError*>(&e) && !dynamic_cast<const std::domain_error*>(&e)) throw;
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(begin / config.batch_size) + ": " + e.what() +
                              " (gamma=" + std::to_string(model.gamma()) + ")");
      }
      if (config.fixed_gamma && gamma_index < grads.size()) grads[gamma_index].storage()[0] = 0.0;

      adam_step(targets, grads, adam, lr);
      model.clamp_gamma();
      accumulate(epoch_report, obj.report, static_cast<double>(end - begin) / static_cast<double>(n));
    }
    epoch_report.gamma = model.gamma();
    log.epochs.push_back({epoch, epoch_report, lr});
    if (progress && config.log_every > 0 &&
        ((epoch + 1) % config.log_every == 0 || epoch + 1 == config.epochs)) {
      *progress << "epoch " << epoch + 1 << "/" << config.epochs << " lr=" << lr << ' '
                << describe(epoch_report) << '\n';
    }
  }

  log.final_gamma = model.gamma();
  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

bool gamma_tail_nonincreasing(const TrainLog& log) {
  const std::size_t n = log.epochs.size();
  const std::size_t from = n - n / 4;
  for (std::size_t i = std::max<std::size_t>(from, 1); i < n; ++i) {
    if (log.epochs[i].report.gamma > log.epochs[i - 1].report.gamma) return false;
  }
  return true;
}

void write_train_log_csv(const TrainLog& log, std::ostream& os) {
  os << "epoch,recon,kl,penalty,wd,total,gamma,lr\n" << std::setprecision(17);
  for (const EpochRecord& e : log.epochs) {
    const LossReport& r = e.report;
    os << e.epoch + 1 << ',' << r.recon << ',' << r.kl << ',' << r.penalty << ','
       << r.weight_decay << ',' << r.total << ',' << r.gamma << ',' << e.lr << '\n';
  }
}

}  // namespace mslab
