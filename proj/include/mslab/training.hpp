#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "mslab/manifold_data.hpp"
#include "mslab/nets.hpp"
#include "mslab/objectives.hpp"

namespace mslab {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One bias-corrected Adam update. Moment buffers are created on the first call.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               double lr);

/// eta_min + (lr_max - eta_min) (1 + cos(pi t / T)) / 2 for 0 <= t < T.
double cosine_warm_restart_lr(std::size_t step_in_cycle, std::size_t cycle_len, double lr_max,
                              double eta_min);

struct SchedulerConfig {
  std::size_t T0 = 10;
  double eta_min = 0.0;
  double mult = 1.0;  ///< cycle i has length round(T0 * mult^i)

  /// Learning rate for a given epoch (the schedule advances once per epoch).
  double lr_at(std::size_t epoch, double lr_max) const;
};

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 512;
  double lr = 0.01;
  SchedulerConfig scheduler;
  std::optional<SAEHyper> hyper;  ///< required for SAE models, rejected otherwise
  std::uint64_t seed = 0;
  std::size_t log_every = 0;  ///< progress line every n epochs; 0 disables
  std::optional<double> fixed_gamma;  ///< VAE-family only: hold gamma constant

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  LossReport report;  ///< sample-weighted mean over the epoch's batches
  double lr = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  double final_gamma = 1.0;
  double wall_seconds = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trains in place. Shuffling and noise draws derive from config.seed only.
TrainLog train(Model& model, const ManifoldDataset& data, const TrainConfig& config,
               std::ostream* progress = nullptr);

/// Soft check: gamma never increases over the last quarter of the epochs.
bool gamma_tail_nonincreasing(const TrainLog& log);

void write_train_log_csv(const TrainLog& log, std::ostream& os);

}  // namespace mslab
