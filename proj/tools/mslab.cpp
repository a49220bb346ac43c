// mslab: generate manifold datasets, train sparse/variational autoencoders,
// analyze active dimensions and run the closed-form oracle suites.

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mslab/analysis.hpp"
#include "mslab/config.hpp"
#include "mslab/manifold_data.hpp"
#include "mslab/nets.hpp"
#include "mslab/oracles.hpp"
#include "mslab/training.hpp"

namespace fs = std::filesystem;
using namespace mslab;

namespace {

constexpr int kExitError = 1;
constexpr int kExitDiverged = 2;

struct Options {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string suite = "all";
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig cfg;
  if (!o.config.empty()) {
    cfg = load_config(o.config);
  } else if (!o.preset.empty()) {
    cfg = preset(o.preset);
  } else {
    throw ConfigError("need --config PATH or --preset NAME");
  }
  if (o.seed) apply_seed(cfg, *o.seed);
  if (!o.out.empty()) cfg.out = o.out;
  return cfg;
}

std::size_t thread_cap() {
  const char* env = std::getenv("MSLAB_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("MSLAB_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

template <class F>
void write_with(const fs::path& path, F&& f) {
  std::ostringstream os;
  f(os);
  write_text(path, os.str());
}

// Wall-clock data lives here so every other output stays byte-identical across reruns.
void write_meta(const fs::path& out, const std::string& command, double seconds) {
  nlohmann::json meta;
  meta["command"] = command;
  meta["finished_unix"] = static_cast<std::int64_t>(std::time(nullptr));
  meta["wall_seconds"] = seconds;
  meta["threads"] = thread_cap();
  write_text(out / (command + ".meta"), meta.dump(2) + "\n");
}

ManifoldDataset generate(const DataConfig& d) {
  return d.kind == DataKind::Linear ? gen_linear_subspaces(d.d, d.dims, d.counts, d.seed)
                                    : gen_mlp_manifolds(d.d, d.dims, d.counts, d.seed);
}

void write_dataset(const ExperimentConfig& cfg, const ManifoldDataset& ds) {
  save_dataset(ds, cfg.out / "dataset.msld");
  nlohmann::json manifest;
  manifest["d"] = ds.d;
  manifest["dims"] = ds.gt_dims;
  manifest["counts"] = ds.counts();
  manifest["seed"] = cfg.data.seed;
  manifest["kind"] = cfg.data.kind == DataKind::Linear ? "linear" : "mlp";
  write_text(cfg.out / "dataset.json", manifest.dump(2) + "\n");
}

ManifoldDataset dataset_for(const ExperimentConfig& cfg) {
  ManifoldDataset ds;
  if (cfg.data.file) {
    ds = load_dataset(*cfg.data.file);
  } else if (fs::exists(cfg.out / "dataset.msld")) {
    ds = load_dataset(cfg.out / "dataset.msld");
  } else {
    ds = generate(cfg.data);
    write_dataset(cfg, ds);
  }
  if (ds.d != cfg.data.d) {
    throw ConfigError("dataset has d=" + std::to_string(ds.d) + " but the config expects d=" +
                      std::to_string(cfg.data.d));
  }
  return ds;
}

fs::path checkpoint_path(const ExperimentConfig& cfg, const Options& o) {
  return o.checkpoint.empty() ? cfg.out / "model.mslm" : fs::path(o.checkpoint);
}

int cmd_gen(const ExperimentConfig& cfg) {
  const ManifoldDataset ds = generate(cfg.data);
  write_dataset(cfg, ds);
  std::cout << "wrote " << (cfg.out / "dataset.msld").string() << " (" << ds.size() << " samples, d=" << ds.d
            << ")\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const Options& o) {
  const ManifoldDataset ds = dataset_for(cfg);
  const auto [train_set, test_set] = split_train_test(ds, cfg.data.train_fraction, cfg.data.seed);
  Model model = cfg.make_model();
  TrainLog log;
  try {
    log = train(model, train_set, cfg.train, &std::cout);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDiverged;
  }
  if (model.spec.stochastic() && !cfg.train.fixed_gamma && !gamma_tail_nonincreasing(log)) {
    std::cerr << "warning: gamma increased during the last quarter of training\n";
  }
  save_checkpoint(model, checkpoint_path(cfg, o));
  write_with(cfg.out / "train_log.csv", [&](std::ostream& os) { write_train_log_csv(log, os); });
  const LossReport& last = log.epochs.back().report;
  std::cout << "final recon=" << last.recon << " total=" << last.total << " gamma=" << log.final_gamma << '\n';
  return 0;
}

std::string summary_table(const Model& model, const ManifoldDataset& test, const ADProfile& p, double re) {
  std::ostringstream os;
  os << "model=" << to_string(model.spec.kind) << " encoder=" << to_string(model.spec.encoder)
     << " decoder=" << to_string(model.spec.decoder) << " kappa=" << model.spec.latent_dim
     << " test_samples=" << test.size() << '\n';
  os << std::fixed << std::setprecision(2);
  for (std::size_t g = 0; g < test.n_manifolds(); ++g) {
    os << 'M' << g + 1 << " GT=" << test.gt_dims[g] << " AD=" << p.per_group_count[g] << '\n';
  }
  os << "mean AD=" << p.overall_mean << '\n';
  os << std::scientific << std::setprecision(4) << "RE=" << re << '\n';
  return os.str();
}

int cmd_analyze(const ExperimentConfig& cfg, const Options& o) {
  const fs::path ckpt = checkpoint_path(cfg, o);
  if (!fs::exists(ckpt)) throw std::runtime_error("checkpoint not found: " + ckpt.string());
  const Model model = load_checkpoint(ckpt);
  const ManifoldDataset ds = dataset_for(cfg);
  if (model.spec.input_dim != ds.d) throw ConfigError("checkpoint input dimension does not match the dataset");
  const ManifoldDataset test = split_train_test(ds, cfg.data.train_fraction, cfg.data.seed).second;
  const std::uint64_t seed = cfg.train.seed;

  const ADProfile profile = active_dims(model, test);
  write_with(cfg.out / "ad_profile.csv", [&](std::ostream& os) { write_ad_profile_csv(profile, os); });
  const double re = reconstruction_error(model, test.samples, cfg.analysis.noise_draws, seed);
  std::string summary = summary_table(model, test, profile, re);

  if (cfg.analysis.masking) {
    const MaskingCurve curve = masking_curve(model, test.samples, cfg.analysis.noise_draws, seed);
    write_with(cfg.out / "masking_curve.csv", [&](std::ostream& os) { write_masking_curve_csv(curve, os); });
    if (!masking_curve_monotone_tail(curve)) std::cerr << "warning: masking curve decreases after its knee\n";
  }
  if (cfg.analysis.histogram) {
    const Histogram h = logabs_histogram(model, test.samples, cfg.analysis.hist_bins);
    write_with(cfg.out / "histogram.csv", [&](std::ostream& os) { write_histogram_csv(h, os); });
  }
  if (cfg.analysis.group_metric && test.n_manifolds() >= 2) {
    const GroupMetric g = group_ad_difference(profile, profile.labels, cfg.analysis.pairs, seed);
    write_with(cfg.out / "group_metric.csv", [&](std::ostream& os) { write_group_metric_csv(g, os); });
    std::ostringstream line;
    line << std::fixed << std::setprecision(4) << "group intra=" << g.intra << " inter=" << g.inter << '\n';
    summary += line.str();
  }
  write_text(cfg.out / "summary.txt", summary);
  std::cout << summary;
  return 0;
}

int cmd_oracle(const std::string& suite) {
  const bool ok = run_oracle_suite(suite, std::cout);
  std::cout << (ok ? "all checks passed" : "some checks failed") << '\n';
  return ok ? 0 : kExitError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse and variational autoencoders on unions of manifolds"};
  app.require_subcommand(1);
  Options o;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key = value experiment config")->check(CLI::ExistingFile);
    sub->add_option("--preset", o.preset, "built-in experiment: linear3x4 or mlp4");
    sub->add_option("--seed", o.seed, "overrides the data, model and training seeds");
    sub->add_option("--out", o.out, "output directory");
  };
  CLI::App* gen = app.add_subcommand("gen", "generate a dataset");
  CLI::App* trn = app.add_subcommand("train", "train a model and write a checkpoint");
  CLI::App* ana = app.add_subcommand("analyze", "active dimensions, RE, masking curve, histograms");
  CLI::App* rep = app.add_subcommand("report", "gen + train + analyze in one run");
  CLI::App* orc = app.add_subcommand("oracle", "closed-form and grid-scan checks");
  for (CLI::App* sub : {gen, trn, ana, rep}) add_common(sub);
  for (CLI::App* sub : {trn, ana, rep}) sub->add_option("--checkpoint", o.checkpoint, "checkpoint path");
  orc->add_option("--suite", o.suite, "thm2, cor2, linvae, degeneracy or all");

  CLI11_PARSE(app, argc, argv);

  const auto start = std::chrono::steady_clock::now();
  try {
    thread_cap();
    if (orc->parsed()) return cmd_oracle(o.suite);

    const ExperimentConfig cfg = resolve(o);
    fs::create_directories(cfg.out);
    write_text(cfg.out / "config.txt", canonical(cfg));
    int rc = 0;
    std::string name;
    if (gen->parsed()) {
      name = "gen";
      rc = cmd_gen(cfg);
    } else if (trn->parsed()) {
      name = "train";
      rc = cmd_train(cfg, o);
    } else if (ana->parsed()) {
      name = "analyze";
      rc = cmd_analyze(cfg, o);
    } else {
      name = "report";
      rc = cmd_gen(cfg);
      if (rc == 0) rc = cmd_train(cfg, o);
      if (rc == 0) rc = cmd_analyze(cfg, o);
    }
    write_meta(cfg.out, name, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    return rc;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
}
