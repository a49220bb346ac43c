#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "mslab/binary_io.hpp"
#include "mslab/nets.hpp"
#include "mslab/rng.hpp"
#include "support.hpp"

using namespace mslab;

namespace {

ModelSpec spec_of(EncoderArch e, DecoderArch dec, ModelKind kind, std::size_t d = 6, std::size_t k = 3) {
  ModelSpec s;
  s.input_dim = d;
  s.latent_dim = k;
  s.encoder = e;
  s.decoder = dec;
  s.kind = kind;
  s.seed = 11;
  return s;
}

std::size_t expected_param_count(const ModelSpec& s) {
  const std::size_t d = s.input_dim, k = s.latent_dim;
  const std::size_t heads = s.stochastic() ? 2 : 1;
  std::size_t n = 0;
  switch (s.encoder) {
    case EncoderArch::MLP4Swish: {
      const std::size_t h = 2 * k;
      n += (d + 1) * h + 2 * (h + 1) * h + heads * (h + 1) * k;
      break;
    }
    case EncoderArch::Residual3x3: {
      const std::size_t h = 8 * k;
      n += (d + 1) * h + 9 * (h + 1) * h + heads * (h + 1) * k;
      break;
    }
    case EncoderArch::LinearReLU:
    case EncoderArch::Linear: n += heads * (d + 1) * k; break;
  }
  if (s.decoder == DecoderArch::Linear) {
    n += k * d;
  } else {
    const std::size_t h = 2 * k;
    n += (k + 1) * h + (h + 1) * d;
  }
  return n + (s.stochastic() ? 1 : 0);
}

}  // namespace

TEST(Nets, ParameterCountMatchesArchitecture) {
  for (auto e : {EncoderArch::MLP4Swish, EncoderArch::Residual3x3, EncoderArch::LinearReLU, EncoderArch::Linear}) {
    for (auto dec : {DecoderArch::Linear, DecoderArch::MLP2LeakyReLU}) {
      for (auto kind : {ModelKind::SAE, ModelKind::VAE, ModelKind::VAEase}) {
        const ModelSpec s = spec_of(e, dec, kind, 7, 4);
        EXPECT_EQ(build(s).params.scalar_count(), expected_param_count(s))
            << to_string(e) << ' ' << to_string(dec) << ' ' << to_string(kind);
      }
    }
  }
}

TEST(Nets, BuildIsDeterministicInTheSeed) {
  const ModelSpec s = spec_of(EncoderArch::MLP4Swish, DecoderArch::MLP2LeakyReLU, ModelKind::VAEase);
  EXPECT_EQ(build(s), build(s));
  ModelSpec other = s;
  other.seed = 12;
  EXPECT_NE(build(s).params, build(other).params);
}

TEST(Nets, LinearDecoderIsMatrixProduct) {
  Model m = build(spec_of(EncoderArch::Linear, DecoderArch::Linear, ModelKind::VAE, 3, 2));
  m.params.at("dec.weight") = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  const Tensor y = decode(m, Tensor::matrix({{1, -1}, {0.5, 2}}));
  EXPECT_EQ(y, Tensor::matrix({{-1, -1, -1}, {4.5, 9.5, 14.5}}));
  EXPECT_EQ(decode(m, Tensor::zeros(1, 2)), Tensor::zeros(1, 3));
}

TEST(Nets, LeakyReluDecoderUsesSlopeOnNegativePreactivation) {
  Model m = build(spec_of(EncoderArch::Linear, DecoderArch::MLP2LeakyReLU, ModelKind::VAE, 1, 1));
  // Hidden width 2; the output reads unit 0, which sees -u.
  m.params.at("dec.l0.weight") = Tensor::matrix({{-1}, {1}});
  m.params.at("dec.l0.bias") = Tensor::vector({0, 0});
  m.params.at("dec.l1.weight") = Tensor::matrix({{1, 0}});
  m.params.at("dec.l1.bias") = Tensor::vector({0});
  EXPECT_DOUBLE_EQ(decode(m, Tensor::matrix({{2.0}}))(0, 0), kLeakySlope * -2.0);
  EXPECT_DOUBLE_EQ(decode(m, Tensor::matrix({{-2.0}}))(0, 0), 2.0);
}

TEST(Nets, SigmaHeadStaysInUnitInterval) {
  Model m = build(spec_of(EncoderArch::MLP4Swish, DecoderArch::Linear, ModelKind::VAEase));
  Rng rng(3);
  const Tensor x = normal_tensor({50, 6}, rng);
  const EncodedValue e = encode(m, x);
  ASSERT_TRUE(e.sigma.has_value());
  for (double s : e.sigma->data()) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
}

TEST(Nets, ExtremeSigmaLogitsStayPositive) {
  Model m = build(spec_of(EncoderArch::MLP4Swish, DecoderArch::Linear, ModelKind::VAE));
  for (double& b : m.params.at("enc.sigma.bias").storage()) b = -1e4;
  Rng rng(4);
  const EncodedValue e = encode(m, normal_tensor({5, 6}, rng));
  for (double s : e.sigma->data()) EXPECT_NEAR(s, 1.0 / (1.0 + std::exp(kSigmaLogitBound)), 1e-20);
}

TEST(Nets, SaeHasNoSigmaOrGamma) {
  ModelSpec s = spec_of(EncoderArch::LinearReLU, DecoderArch::Linear, ModelKind::SAE);
  s.penalty.kind = PenaltyKind::L1;
  Model m = build(s);
  EXPECT_FALSE(m.params.contains("log_gamma"));
  EXPECT_EQ(m.gamma(), 1.0);
  Rng rng(4);
  const EncodedValue e = encode(m, normal_tensor({10, 6}, rng));
  EXPECT_FALSE(e.sigma.has_value());
  for (double v : e.mu.data()) EXPECT_GE(v, 0.0);
}

TEST(Nets, GammaClampBounds) {
  Model m = build(spec_of(EncoderArch::Linear, DecoderArch::Linear, ModelKind::VAE));
  m.params.at("log_gamma")[0] = -100.0;
  m.clamp_gamma();
  EXPECT_NEAR(m.gamma(), kMinGamma, 1e-20);
  m.params.at("log_gamma")[0] = 100.0;
  m.clamp_gamma();
  EXPECT_NEAR(m.gamma(), kMaxGamma, 1e-9);
}

TEST(Nets, SpecValidation) {
  ModelSpec s = spec_of(EncoderArch::Linear, DecoderArch::Linear, ModelKind::SAE);
  s.penalty.kind = PenaltyKind::TopK;
  s.penalty.k = 0;
  EXPECT_THROW(build(s), std::invalid_argument);
  s.penalty.k = 4;
  EXPECT_THROW(build(s), std::invalid_argument);
  s.penalty.k = 2;
  EXPECT_NO_THROW(build(s));
  s.kind = ModelKind::VAE;
  EXPECT_THROW(build(s), std::invalid_argument);
  s = spec_of(EncoderArch::Linear, DecoderArch::Linear, ModelKind::VAE);
  s.latent_dim = 0;
  EXPECT_THROW(build(s), std::invalid_argument);
}

TEST(Nets, EncodeRejectsWrongWidth) {
  Model m = build(spec_of(EncoderArch::MLP4Swish, DecoderArch::Linear, ModelKind::VAE));
  EXPECT_THROW(encode(m, Tensor::zeros(2, 5)), ShapeError);
  EXPECT_THROW(decode(m, Tensor::zeros(2, 4)), ShapeError);
}

TEST(Nets, EnumNamesRoundTrip) {
  for (auto e : {EncoderArch::MLP4Swish, EncoderArch::Residual3x3, EncoderArch::LinearReLU, EncoderArch::Linear}) {
    EXPECT_EQ(parse_encoder_arch(to_string(e)), e);
  }
  for (auto d : {DecoderArch::Linear, DecoderArch::MLP2LeakyReLU}) EXPECT_EQ(parse_decoder_arch(to_string(d)), d);
  for (auto k : {ModelKind::SAE, ModelKind::VAE, ModelKind::VAEase}) EXPECT_EQ(parse_model_kind(to_string(k)), k);
  for (auto p : {PenaltyKind::None, PenaltyKind::L1, PenaltyKind::LogEps, PenaltyKind::TopK}) {
    EXPECT_EQ(parse_penalty_kind(to_string(p)), p);
  }
  EXPECT_THROW(parse_model_kind("gan"), std::invalid_argument);
}

TEST(Nets, CheckpointRoundTrip) {
  const auto dir = mslab::testing::scratch_dir("nets_ckpt");
  for (auto e : {EncoderArch::MLP4Swish, EncoderArch::Residual3x3}) {
    Model m = build(spec_of(e, DecoderArch::MLP2LeakyReLU, ModelKind::VAEase));
    m.params.at("log_gamma")[0] = -3.25;
    save_checkpoint(m, dir / "m.mslm");
    EXPECT_EQ(load_checkpoint(dir / "m.mslm"), m);
  }
}

TEST(Nets, CheckpointRejectsCorruption) {
  const auto dir = mslab::testing::scratch_dir("nets_corrupt");
  Model m = build(spec_of(EncoderArch::Linear, DecoderArch::Linear, ModelKind::VAE));
  save_checkpoint(m, dir / "m.mslm");
  std::string bytes = mslab::testing::slurp(dir / "m.mslm");

  std::string bad = bytes;
  bad[0] = 'X';
  std::ofstream(dir / "bad.mslm", std::ios::binary) << bad;
  EXPECT_THROW(load_checkpoint(dir / "bad.mslm"), io::FormatError);

  std::ofstream(dir / "short.mslm", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  EXPECT_THROW(load_checkpoint(dir / "short.mslm"), io::FormatError);

  EXPECT_THROW(load_checkpoint(dir / "missing.mslm"), std::runtime_error);
}
