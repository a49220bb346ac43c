#include "mslab/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "mslab/rng.hpp"

namespace mslab {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("bad value for " + std::string(key) + ": '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean for " + std::string(key) + ": '" + std::string(v) + "'");
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(parse_number<std::size_t>(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (out.empty()) throw ConfigError("empty list for " + std::string(key));
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

SAEHyper& hyper_of(ExperimentConfig& c) {
  if (!c.train.hyper) c.train.hyper = SAEHyper{};
  return *c.train.hyper;
}

using Setter = std::function<void(ExperimentConfig&, std::string_view, const std::filesystem::path&)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  using P = const std::filesystem::path&;
  static const std::map<std::string, Setter, std::less<>> table = {
      {"data.kind", [](ExperimentConfig& c, std::string_view v, P) {
         if (v == "linear") c.data.kind = DataKind::Linear;
         else if (v == "mlp") c.data.kind = DataKind::MLP;
         else throw ConfigError("data.kind must be linear or mlp");
       }},
      {"data.d", [](ExperimentConfig& c, std::string_view v, P) { c.data.d = parse_number<std::size_t>("data.d", v); }},
      {"data.dims", [](ExperimentConfig& c, std::string_view v, P) { c.data.dims = parse_list("data.dims", v); }},
      {"data.counts", [](ExperimentConfig& c, std::string_view v, P) { c.data.counts = parse_list("data.counts", v); }},
      {"data.train_fraction", [](ExperimentConfig& c, std::string_view v, P) {
         c.data.train_fraction = parse_number<double>("data.train_fraction", v);
       }},
      {"data.seed", [](ExperimentConfig& c, std::string_view v, P) { c.data.seed = parse_number<std::uint64_t>("data.seed", v); }},
      {"data.file", [](ExperimentConfig& c, std::string_view v, P base) {
         if (v == "none") c.data.file.reset();
         else c.data.file = base / std::filesystem::path(v);
       }},
      {"model.kind", [](ExperimentConfig& c, std::string_view v, P) { c.model.kind = parse_model_kind(v); }},
      {"model.encoder", [](ExperimentConfig& c, std::string_view v, P) { c.model.encoder = parse_encoder_arch(v); }},
      {"model.decoder", [](ExperimentConfig& c, std::string_view v, P) { c.model.decoder = parse_decoder_arch(v); }},
      {"model.latent_dim", [](ExperimentConfig& c, std::string_view v, P) {
         c.model.latent_dim = parse_number<std::size_t>("model.latent_dim", v);
       }},
      {"model.penalty", [](ExperimentConfig& c, std::string_view v, P) { c.model.penalty.kind = parse_penalty_kind(v); }},
      {"model.eps", [](ExperimentConfig& c, std::string_view v, P) { c.model.penalty.eps = parse_number<double>("model.eps", v); }},
      {"model.k", [](ExperimentConfig& c, std::string_view v, P) { c.model.penalty.k = parse_number<std::size_t>("model.k", v); }},
      {"model.seed", [](ExperimentConfig& c, std::string_view v, P) { c.model.seed = parse_number<std::uint64_t>("model.seed", v); }},
      {"model.init_gamma", [](ExperimentConfig& c, std::string_view v, P) {
         c.init_gamma = parse_number<double>("model.init_gamma", v);
       }},
      {"train.epochs", [](ExperimentConfig& c, std::string_view v, P) { c.train.epochs = parse_number<std::size_t>("train.epochs", v); }},
      {"train.batch_size", [](ExperimentConfig& c, std::string_view v, P) {
         c.train.batch_size = parse_number<std::size_t>("train.batch_size", v);
       }},
      {"train.lr", [](ExperimentConfig& c, std::string_view v, P) { c.train.lr = parse_number<double>("train.lr", v); }},
      {"train.T0", [](ExperimentConfig& c, std::string_view v, P) { c.train.scheduler.T0 = parse_number<std::size_t>("train.T0", v); }},
      {"train.eta_min", [](ExperimentConfig& c, std::string_view v, P) {
         c.train.scheduler.eta_min = parse_number<double>("train.eta_min", v);
       }},
      {"train.mult", [](ExperimentConfig& c, std::string_view v, P) { c.train.scheduler.mult = parse_number<double>("train.mult", v); }},
      {"train.seed", [](ExperimentConfig& c, std::string_view v, P) { c.train.seed = parse_number<std::uint64_t>("train.seed", v); }},
      {"train.log_every", [](ExperimentConfig& c, std::string_view v, P) {
         c.train.log_every = parse_number<std::size_t>("train.log_every", v);
       }},
      {"train.lambda1", [](ExperimentConfig& c, std::string_view v, P) {
         if (v == "none") c.train.hyper.reset();
         else hyper_of(c).lambda1 = parse_number<double>("train.lambda1", v);
       }},
      {"train.lambda2", [](ExperimentConfig& c, std::string_view v, P) {
         if (v == "none") c.train.hyper.reset();
         else hyper_of(c).lambda2 = parse_number<double>("train.lambda2", v);
       }},
      {"train.fixed_gamma", [](ExperimentConfig& c, std::string_view v, P) {
         if (v == "none") c.train.fixed_gamma.reset();
         else c.train.fixed_gamma = parse_number<double>("train.fixed_gamma", v);
       }},
      {"analysis.noise_draws", [](ExperimentConfig& c, std::string_view v, P) {
         c.analysis.noise_draws = parse_number<std::size_t>("analysis.noise_draws", v);
       }},
      {"analysis.hist_bins", [](ExperimentConfig& c, std::string_view v, P) {
         c.analysis.hist_bins = parse_number<std::size_t>("analysis.hist_bins", v);
       }},
      {"analysis.pairs", [](ExperimentConfig& c, std::string_view v, P) { c.analysis.pairs = parse_number<std::size_t>("analysis.pairs", v); }},
      {"analysis.masking", [](ExperimentConfig& c, std::string_view v, P) { c.analysis.masking = parse_bool("analysis.masking", v); }},
      {"analysis.histogram", [](ExperimentConfig& c, std::string_view v, P) { c.analysis.histogram = parse_bool("analysis.histogram", v); }},
      {"analysis.group_metric", [](ExperimentConfig& c, std::string_view v, P) {
         c.analysis.group_metric = parse_bool("analysis.group_metric", v);
       }},
      {"out", [](ExperimentConfig& c, std::string_view v, P base) { c.out = base / std::filesystem::path(v); }},
  };
  return table;
}

void validate(const ExperimentConfig& c) {
  if (c.data.dims.size() != c.data.counts.size()) throw ConfigError("data.dims and data.counts differ in length");
  if (c.data.d < 1) throw ConfigError("data.d must be >= 1");
  if (!(c.data.train_fraction > 0.0 && c.data.train_fraction <= 1.0)) {
    throw ConfigError("data.train_fraction must lie in (0, 1]");
  }
  if (!(c.init_gamma >= kMinGamma && c.init_gamma <= kMaxGamma)) throw ConfigError("model.init_gamma out of range");
  ModelSpec spec = c.model;
  spec.input_dim = c.data.d;
  try {
    spec.validate();
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (spec.kind == ModelKind::SAE && !c.train.hyper) {
    throw ConfigError("SAE models need train.lambda1 and train.lambda2");
  }
  if (spec.kind != ModelKind::SAE && c.train.hyper) {
    throw ConfigError("train.lambda1/lambda2 apply to SAE models only");
  }
}

}  // namespace

Model ExperimentConfig::make_model() const {
  ModelSpec spec = model;
  spec.input_dim = data.d;
  Model m = build(spec);
  if (m.params.contains("log_gamma")) m.params.at("log_gamma")[0] = std::log(init_gamma);
  return m;
}

std::vector<std::string> preset_names() { return {"linear3x4", "mlp4"}; }

ExperimentConfig preset(std::string_view name) {
  ExperimentConfig c;
  c.preset = std::string(name);
  c.model.kind = ModelKind::VAEase;
  if (name == "linear3x4") {
    c.data = DataConfig{DataKind::Linear, 40, {4, 4, 4}, {10000, 10000, 10000}, 0.9, 0, {}};
    c.model.latent_dim = 20;
    c.model.encoder = EncoderArch::MLP4Swish;
    c.model.decoder = DecoderArch::Linear;
    c.train.epochs = 60;
    c.train.lr = 0.01;
    c.train.batch_size = 256;
    c.init_gamma = 0.01;
  } else if (name == "mlp4") {
    c.data = DataConfig{DataKind::MLP, 100, {5, 5, 10, 10}, {10000, 10000, 10000, 10000}, 0.9, 0, {}};
    c.model.latent_dim = 60;
    c.model.encoder = EncoderArch::Residual3x3;
    c.model.decoder = DecoderArch::MLP2LeakyReLU;
    c.train.epochs = 40;
    c.train.lr = 0.005;
    c.train.batch_size = 512;
    c.init_gamma = 0.01;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "'");
  }
  c.model.input_dim = c.data.d;
  c.train.scheduler = SchedulerConfig{10, 0.0, 1.0};
  return c;
}

void apply_seed(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.data.seed = seed;
  cfg.model.seed = derive_seed(seed, 1);
  cfg.train.seed = derive_seed(seed, 2);
}

ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key != "preset" && key != "seed" && !setters().contains(key)) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    for (const auto& [k, v] : entries) {
      if (k == key) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    entries.emplace_back(key, value);
  }

  ExperimentConfig cfg;
  for (const auto& [k, v] : entries) {
    if (k == "preset" && v != "custom") cfg = preset(v);
  }
  for (const auto& [k, v] : entries) {
    if (k == "seed") apply_seed(cfg, parse_number<std::uint64_t>("seed", v));
  }
  for (const auto& [k, v] : entries) {
    if (k == "preset" || k == "seed") continue;
    try {
      setters().find(k)->second(cfg, v, base_dir);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(k + ": " + e.what());
    }
  }
  cfg.model.input_dim = cfg.data.d;
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string canonical(const ExperimentConfig& c) {
  std::ostringstream os;
  const auto kv = [&](std::string_view k, const std::string& v) { os << k << " = " << v << '\n'; };
  kv("preset", c.preset);
  kv("data.kind", c.data.kind == DataKind::Linear ? "linear" : "mlp");
  kv("data.d", std::to_string(c.data.d));
  kv("data.dims", fmt_list(c.data.dims));
  kv("data.counts", fmt_list(c.data.counts));
  kv("data.train_fraction", fmt_double(c.data.train_fraction));
  kv("data.seed", std::to_string(c.data.seed));
  kv("data.file", c.data.file ? c.data.file->string() : "none");
  kv("model.kind", std::string(to_string(c.model.kind)));
  kv("model.encoder", std::string(to_string(c.model.encoder)));
  kv("model.decoder", std::string(to_string(c.model.decoder)));
  kv("model.latent_dim", std::to_string(c.model.latent_dim));
  kv("model.penalty", std::string(to_string(c.model.penalty.kind)));
  kv("model.eps", fmt_double(c.model.penalty.eps));
  kv("model.k", std::to_string(c.model.penalty.k));
  kv("model.seed", std::to_string(c.model.seed));
  kv("model.init_gamma", fmt_double(c.init_gamma));
  kv("train.epochs", std::to_string(c.train.epochs));
  kv("train.batch_size", std::to_string(c.train.batch_size));
  kv("train.lr", fmt_double(c.train.lr));
  kv("train.T0", std::to_string(c.train.scheduler.T0));
  kv("train.eta_min", fmt_double(c.train.scheduler.eta_min));
  kv("train.mult", fmt_double(c.train.scheduler.mult));
  kv("train.seed", std::to_string(c.train.seed));
  kv("train.log_every", std::to_string(c.train.log_every));
  kv("train.lambda1", c.train.hyper ? fmt_double(c.train.hyper->lambda1) : "none");
  kv("train.lambda2", c.train.hyper ? fmt_double(c.train.hyper->lambda2) : "none");
  kv("train.fixed_gamma", c.train.fixed_gamma ? fmt_double(*c.train.fixed_gamma) : "none");
  kv("analysis.noise_draws", std::to_string(c.analysis.noise_draws));
  kv("analysis.hist_bins", std::to_string(c.analysis.hist_bins));
  kv("analysis.pairs", std::to_string(c.analysis.pairs));
  kv("analysis.masking", c.analysis.masking ? "true" : "false");
  kv("analysis.histogram", c.analysis.histogram ? "true" : "false");
  kv("analysis.group_metric", c.analysis.group_metric ? "true" : "false");
  kv("out", c.out.string());
  return os.str();
}

}  // namespace mslab
