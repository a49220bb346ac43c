#include "mslab/nets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "mslab/binary_io.hpp"
#include "mslab/rng.hpp"

namespace mslab {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr int kResidualBlocks = 3;
constexpr int kResidualDepth = 3;

template <class E, std::size_t N>
E parse_enum(std::string_view s, const std::pair<E, std::string_view> (&table)[N], const char* what) {
  for (const auto& [e, name] : table) {
    if (name == s) return e;
  }
  throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

template <class E, std::size_t N>
std::string_view enum_name(E e, const std::pair<E, std::string_view> (&table)[N]) {
  for (const auto& [v, name] : table) {
    if (v == e) return name;
  }
  return "?";
}

constexpr std::pair<EncoderArch, std::string_view> kEncoderNames[] = {
    {EncoderArch::MLP4Swish, "mlp4swish"},
    {EncoderArch::Residual3x3, "residual3x3"},
    {EncoderArch::LinearReLU, "linear_relu"},
    {EncoderArch::Linear, "linear"},
};
constexpr std::pair<DecoderArch, std::string_view> kDecoderNames[] = {
    {DecoderArch::Linear, "linear"},
    {DecoderArch::MLP2LeakyReLU, "mlp2leaky"},
};
constexpr std::pair<ModelKind, std::string_view> kKindNames[] = {
    {ModelKind::SAE, "sae"},
    {ModelKind::VAE, "vae"},
    {ModelKind::VAEase, "vaease"},
};
constexpr std::pair<PenaltyKind, std::string_view> kPenaltyNames[] = {
    {PenaltyKind::None, "none"},
    {PenaltyKind::L1, "l1"},
    {PenaltyKind::LogEps, "log"},
    {PenaltyKind::TopK, "topk"},
};

void add_linear(ParamSet& p, const std::string& name, std::size_t in, std::size_t out, bool bias,
                Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  p.add(name + ".weight", uniform_tensor({out, in}, -bound, bound, rng));
  if (bias) p.add(name + ".bias", uniform_tensor({out}, -bound, bound, rng));
}

Var apply_linear(const BoundModel& m, const std::string& name, Var x) {
  const std::string bias = name + ".bias";
  if (m.model().params.contains(bias)) {
    return ad::linear(x, m.param(name + ".weight"), m.param(bias));
  }
  return ad::linear(x, m.param(name + ".weight"));
}

void check_width(Var v, std::size_t width, const char* what) {
  const Tensor& t = v.value();
  if (t.rank() != 2 || t.cols() != width) {
    throw ShapeError(std::string(what) + ": expected width " + std::to_string(width) + ", got " +
                     shape_str(t.shape()));
  }
}

}  // namespace

std::string_view to_string(EncoderArch a) { return enum_name(a, kEncoderNames); }
std::string_view to_string(DecoderArch a) { return enum_name(a, kDecoderNames); }
std::string_view to_string(ModelKind k) { return enum_name(k, kKindNames); }
std::string_view to_string(PenaltyKind k) { return enum_name(k, kPenaltyNames); }
EncoderArch parse_encoder_arch(std::string_view s) { return parse_enum(s, kEncoderNames, "encoder"); }
DecoderArch parse_decoder_arch(std::string_view s) { return parse_enum(s, kDecoderNames, "decoder"); }
ModelKind parse_model_kind(std::string_view s) { return parse_enum(s, kKindNames, "model kind"); }
PenaltyKind parse_penalty_kind(std::string_view s) { return parse_enum(s, kPenaltyNames, "penalty"); }

void ModelSpec::validate() const {
  if (input_dim < 1) throw std::invalid_argument("input_dim must be >= 1");
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
  if (penalty.kind == PenaltyKind::TopK && (penalty.k < 1 || penalty.k > latent_dim)) {
    throw std::invalid_argument("top-k penalty needs 1 <= k <= latent_dim (k=" +
                                std::to_string(penalty.k) + ", latent_dim=" +
                                std::to_string(latent_dim) + ")");
  }
  if (penalty.kind == PenaltyKind::LogEps && !(penalty.eps > 0.0)) {
    throw std::invalid_argument("log penalty needs eps > 0");
  }
  if (kind != ModelKind::SAE && penalty.kind != PenaltyKind::None) {
    throw std::invalid_argument("sparsity penalties apply to SAE models only");
  }
}

std::size_t ModelSpec::encoder_hidden() const {
  switch (encoder) {
    case EncoderArch::MLP4Swish: return 2 * latent_dim;
    case EncoderArch::Residual3x3: return 8 * latent_dim;
    case EncoderArch::LinearReLU:
    case EncoderArch::Linear: return 0;
  }
  return 0;
}

std::size_t ModelSpec::decoder_hidden() const {
  return decoder == DecoderArch::MLP2LeakyReLU ? 2 * latent_dim : 0;
}

void ParamSet::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  items_.emplace_back(std::move(name), std::move(value));
}

Tensor& ParamSet::at(std::string_view name) {
  for (auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

const Tensor& ParamSet::at(std::string_view name) const {
  return const_cast<ParamSet*>(this)->at(name);
}

bool ParamSet::contains(std::string_view name) const {
  return std::any_of(items_.begin(), items_.end(), [&](const auto& it) { return it.first == name; });
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& it : items_) n += it.second.size();
  return n;
}

double Model::gamma() const {
  if (!params.contains("log_gamma")) return 1.0;
  return std::exp(params.at("log_gamma").item());
}

void Model::clamp_gamma() {
  if (!params.contains("log_gamma")) return;
  double& lg = params.at("log_gamma")[0];
  lg = std::clamp(lg, std::log(kMinGamma), std::log(kMaxGamma));
}

bool Model::is_decoder_param(std::string_view name) const { return name.starts_with("dec."); }

Model build(const ModelSpec& spec) {
  spec.validate();
  Model m;
  m.spec = spec;
  Rng rng(spec.seed);
  const std::size_t d = spec.input_dim;
  const std::size_t k = spec.latent_dim;
  const bool stochastic = spec.stochastic();

  switch (spec.encoder) {
    case EncoderArch::MLP4Swish: {
      const std::size_t h = spec.encoder_hidden();
      add_linear(m.params, "enc.l0", d, h, true, rng);
      add_linear(m.params, "enc.l1", h, h, true, rng);
      add_linear(m.params, "enc.l2", h, h, true, rng);
      add_linear(m.params, "enc.mu", h, k, true, rng);
      if (stochastic) add_linear(m.params, "enc.sigma", h, k, true, rng);
      break;
    }
    case EncoderArch::Residual3x3: {
      const std::size_t h = spec.encoder_hidden();
      add_linear(m.params, "enc.in", d, h, true, rng);
      for (int b = 0; b < kResidualBlocks; ++b) {
        for (int l = 0; l < kResidualDepth; ++l) {
          add_linear(m.params, "enc.block" + std::to_string(b) + ".l" + std::to_string(l), h, h,
                     true, rng);
        }
      }
      add_linear(m.params, "enc.mu", h, k, true, rng);
      if (stochastic) add_linear(m.params, "enc.sigma", h, k, true, rng);
      break;
    }
    case EncoderArch::LinearReLU:
    case EncoderArch::Linear:
      add_linear(m.params, "enc.mu", d, k, true, rng);
      if (stochastic) add_linear(m.params, "enc.sigma", d, k, true, rng);
      break;
  }

  switch (spec.decoder) {
    case DecoderArch::Linear: add_linear(m.params, "dec", k, d, false, rng); break;
    case DecoderArch::MLP2LeakyReLU: {
      const std::size_t h = spec.decoder_hidden();
      add_linear(m.params, "dec.l0", k, h, true, rng);
      add_linear(m.params, "dec.l1", h, d, true, rng);
      break;
    }
  }

  if (stochastic) m.params.add("log_gamma", Tensor::scalar(0.0));
  return m;
}

BoundModel::BoundModel(const Model& model, Tape& tape) : model_(&model), tape_(&tape) {
  vars_.reserve(model.params.size());
  for (const auto& [name, value] : model.params) vars_.push_back(tape.leaf(value));
}

Var BoundModel::param(std::string_view name) const {
  for (std::size_t i = 0; i < model_->params.size(); ++i) {
    if (model_->params[i].first == name) return vars_[i];
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

std::optional<Var> BoundModel::log_gamma() const {
  if (!model_->params.contains("log_gamma")) return std::nullopt;
  return param("log_gamma");
}

std::vector<Tensor> BoundModel::grads() const {
  std::vector<Tensor> out;
  out.reserve(vars_.size());
  for (Var v : vars_) out.push_back(tape_->grad(v));
  return out;
}

Encoded encode(const BoundModel& m, Var x) {
  const ModelSpec& spec = m.model().spec;
  check_width(x, spec.input_dim, "encode");
  Var features = x;
  switch (spec.encoder) {
    case EncoderArch::MLP4Swish:
      features = ad::swish(apply_linear(m, "enc.l0", x));
      features = ad::swish(apply_linear(m, "enc.l1", features));
      features = ad::swish(apply_linear(m, "enc.l2", features));
      break;
    case EncoderArch::Residual3x3: {
      // Pre-activation blocks: h <- h + L2(s(L1(s(L0(s(h)))))).
      Var h = apply_linear(m, "enc.in", x);
      for (int b = 0; b < kResidualBlocks; ++b) {
        const std::string prefix = "enc.block" + std::to_string(b) + ".l";
        Var u = h;
        for (int l = 0; l < kResidualDepth; ++l) {
          u = apply_linear(m, prefix + std::to_string(l), ad::swish(u));
        }
        h = ad::add(h, u);
      }
      features = ad::swish(h);
      break;
    }
    case EncoderArch::LinearReLU:
    case EncoderArch::Linear: break;
  }
  Encoded out;
  out.mu = apply_linear(m, "enc.mu", features);
  if (spec.encoder == EncoderArch::LinearReLU) out.mu = ad::relu(out.mu);
  if (spec.stochastic()) {
    Var logit = ad::clamp(apply_linear(m, "enc.sigma", features), -kSigmaLogitBound, kSigmaLogitBound);
    out.sigma = ad::sigmoid(logit);
  }
  return out;
}

Var decode(const BoundModel& m, Var code) {
  const ModelSpec& spec = m.model().spec;
  check_width(code, spec.latent_dim, "decode");
  switch (spec.decoder) {
    case DecoderArch::Linear: return ad::linear(code, m.param("dec.weight"));
    case DecoderArch::MLP2LeakyReLU: {
      Var h = ad::leaky_relu(apply_linear(m, "dec.l0", code), kLeakySlope);
      return apply_linear(m, "dec.l1", h);
    }
  }
  throw std::logic_error("unknown decoder");
}

EncodedValue encode(const Model& m, const Tensor& x) {
  Tape tape(false);
  BoundModel bm(m, tape);
  Encoded e = encode(bm, tape.constant(x));
  EncodedValue out{e.mu.value(), std::nullopt};
  if (e.sigma) out.sigma = e.sigma->value();
  return out;
}

Tensor decode(const Model& m, const Tensor& code) {
  Tape tape(false);
  BoundModel bm(m, tape);
  return decode(bm, tape.constant(code)).value();
}

void save_checkpoint(const Model& m, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  io::write_magic(os, "MSLM");
  io::write_le<std::uint32_t>(os, kCheckpointVersion);
  const ModelSpec& s = m.spec;
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.input_dim));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.latent_dim));
  io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(s.encoder));
  io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(s.decoder));
  io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(s.kind));
  io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(s.penalty.kind));
  io::write_le<double>(os, s.penalty.eps);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.penalty.k));
  io::write_le<std::uint64_t>(os, s.seed);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.params.size()));
  for (const auto& [name, t] : m.params) {
    io::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) io::write_le<std::uint64_t>(os, e);
    for (double v : t.data()) io::write_le<double>(os, v);
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  io::expect_magic(is, "MSLM");
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw io::FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Model m;
  ModelSpec& s = m.spec;
  s.input_dim = io::read_le<std::uint32_t>(is);
  s.latent_dim = io::read_le<std::uint32_t>(is);
  const auto enc = io::read_le<std::uint8_t>(is);
  const auto dec = io::read_le<std::uint8_t>(is);
  const auto kind = io::read_le<std::uint8_t>(is);
  const auto pen = io::read_le<std::uint8_t>(is);
  if (enc > 3 || dec > 1 || kind > 2 || pen > 3) throw io::FormatError("bad model spec enum");
  s.encoder = static_cast<EncoderArch>(enc);
  s.decoder = static_cast<DecoderArch>(dec);
  s.kind = static_cast<ModelKind>(kind);
  s.penalty.kind = static_cast<PenaltyKind>(pen);
  s.penalty.eps = io::read_le<double>(is);
  s.penalty.k = io::read_le<std::uint32_t>(is);
  s.seed = io::read_le<std::uint64_t>(is);
  s.validate();
  const auto count = io::read_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = io::read_le<std::uint16_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw io::FormatError("truncated file");
    const auto rank = io::read_le<std::uint32_t>(is);
    if (rank > 8) throw io::FormatError("implausible tensor rank");
    Shape shape(rank);
    for (auto& e : shape) e = io::read_le<std::uint64_t>(is);
    Tensor t(shape);
    for (double& v : t.storage()) v = io::read_le<double>(is);
    m.params.add(std::move(name), std::move(t));
  }
  // The stored tensors must line up with what the spec builds.
  const Model reference = build(s);
  if (reference.params.size() != m.params.size()) throw io::FormatError("parameter set mismatch");
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    if (reference.params[i].first != m.params[i].first ||
        reference.params[i].second.shape() != m.params[i].second.shape()) {
      throw io::FormatError("parameter " + m.params[i].first + " does not match the spec");
    }
  }
  return m;
}

}  // namespace mslab
