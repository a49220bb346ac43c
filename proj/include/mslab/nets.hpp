#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mslab/autodiff.hpp"
#include "mslab/tensor.hpp"

namespace mslab {

enum class EncoderArch {
  MLP4Swish,    ///< 4 linear layers with Swish, hidden width 2*latent
  Residual3x3,  ///< stem + 3 residual blocks of 3 linear layers, hidden width 8*latent
  LinearReLU,   ///< one linear layer followed by ReLU on the mean head
  Linear,       ///< affine mean head, no activation
};

enum class DecoderArch {
  Linear,         ///< code -> W code, no bias
  MLP2LeakyReLU,  ///< Linear -> LeakyReLU(0.2) -> Linear, hidden width 2*latent
};

enum class ModelKind { SAE, VAE, VAEase };

enum class PenaltyKind { None, L1, LogEps, TopK };

struct Penalty {
  PenaltyKind kind = PenaltyKind::None;
  double eps = 1e-4;
  std::size_t k = 0;
  friend bool operator==(const Penalty&, const Penalty&) = default;
};

struct ModelSpec {
  std::size_t input_dim = 1;
  std::size_t latent_dim = 1;
  EncoderArch encoder = EncoderArch::MLP4Swish;
  DecoderArch decoder = DecoderArch::Linear;
  ModelKind kind = ModelKind::VAEase;
  Penalty penalty{};
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  std::size_t encoder_hidden() const;
  std::size_t decoder_hidden() const;
  bool stochastic() const { return kind != ModelKind::SAE; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kMinGamma = 1e-8;
inline constexpr double kMaxGamma = 1e2;
/// Pre-sigmoid bound on the sigma head, keeping sigma in [9e-14, 1 - 9e-14].
inline constexpr double kSigmaLogitBound = 30.0;

std::string_view to_string(EncoderArch a);
std::string_view to_string(DecoderArch a);
std::string_view to_string(ModelKind k);
std::string_view to_string(PenaltyKind k);
EncoderArch parse_encoder_arch(std::string_view s);
DecoderArch parse_decoder_arch(std::string_view s);
ModelKind parse_model_kind(std::string_view s);
PenaltyKind parse_penalty_kind(std::string_view s);

/// Named parameter tensors in construction order.
class ParamSet {
 public:
  void add(std::string name, Tensor value);
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  std::pair<std::string, Tensor>& operator[](std::size_t i) { return items_[i]; }
  const std::pair<std::string, Tensor>& operator[](std::size_t i) const { return items_[i]; }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

struct Model {
  ModelSpec spec;
  ParamSet params;

  /// exp(log_gamma); 1.0 for SAE models.
  double gamma() const;
  /// Clamps log_gamma so gamma stays in [kMinGamma, kMaxGamma].
  void clamp_gamma();
  bool is_decoder_param(std::string_view name) const;

  friend bool operator==(const Model&, const Model&) = default;
};

Model build(const ModelSpec& spec);

/// Model parameters registered as leaves on one tape.
class BoundModel {
 public:
  BoundModel(const Model& model, Tape& tape);

  const Model& model() const { return *model_; }
  Tape& tape() const { return *tape_; }
  Var param(std::string_view name) const;
  std::optional<Var> log_gamma() const;
  /// Gradients for every parameter, in ParamSet order. Valid after backward().
  std::vector<Tensor> grads() const;

 private:
  const Model* model_;
  Tape* tape_;
  std::vector<Var> vars_;
};

struct Encoded {
  Var mu;
  std::optional<Var> sigma;
};

Encoded encode(const BoundModel& m, Var x);
Var decode(const BoundModel& m, Var code);

struct EncodedValue {
  Tensor mu;
  std::optional<Tensor> sigma;
};

/// Tape-free evaluation helpers.
EncodedValue encode(const Model& m, const Tensor& x);
Tensor decode(const Model& m, const Tensor& code);

void save_checkpoint(const Model& m, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace mslab
