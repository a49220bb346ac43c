#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "mslab/binary_io.hpp"
#include "mslab/manifold_data.hpp"
#include "mslab/rng.hpp"
#include "support.hpp"

using namespace mslab;

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) m(r, c) = t(r, c);
  }
  return m;
}

Tensor rows_of(const ManifoldDataset& ds, std::uint16_t id) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.manifold_id[i] == id) idx.push_back(i);
  }
  return ds.samples.gather_rows(idx);
}

}  // namespace

TEST(LinearSubspaces, BasesAreOrthonormal) {
  for (const Tensor& b : linear_subspace_bases(40, {4, 4, 4}, 3)) {
    const Eigen::MatrixXd m = to_eigen(b);
    const Eigen::MatrixXd gram = m.transpose() * m - Eigen::MatrixXd::Identity(4, 4);
    EXPECT_LT(gram.cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(LinearSubspaces, SamplesLieOnTheirSubspace) {
  const ManifoldDataset ds = gen_linear_subspaces(40, {4, 4, 4}, {500, 500, 500}, 1);
  const std::vector<Tensor> bases = linear_subspace_bases(40, {4, 4, 4}, 1);
  double worst = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Eigen::MatrixXd b = to_eigen(bases[ds.manifold_id[i]]);
    Eigen::VectorXd x(40);
    for (int a = 0; a < 40; ++a) x(a) = ds.samples(i, a);
    worst = std::max(worst, (x - b * (b.transpose() * x)).norm());
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(LinearSubspaces, UnionHasRankTwelve) {
  const ManifoldDataset ds = gen_linear_subspaces(40, {4, 4, 4}, {2000, 2000, 2000}, 2);
  EXPECT_EQ(numerical_rank(ds.samples), 12u);
}

TEST(LinearSubspaces, MetadataAndMixtureWeights) {
  const ManifoldDataset ds = gen_linear_subspaces(10, {2, 3}, {30, 10}, 4);
  EXPECT_EQ(ds.size(), 40u);
  EXPECT_EQ(ds.counts(), (std::vector<std::size_t>{30, 10}));
  EXPECT_DOUBLE_EQ(std::accumulate(ds.mixture_weights.begin(), ds.mixture_weights.end(), 0.0), 1.0);
  EXPECT_DOUBLE_EQ(ds.mixture_weights[0], 0.75);
}

TEST(LinearSubspaces, ZeroDimensionalManifoldIsOnePoint) {
  const ManifoldDataset ds = gen_linear_subspaces(5, {0, 2}, {20, 20}, 6);
  const Tensor pts = rows_of(ds, 0);
  for (std::size_t r = 1; r < pts.rows(); ++r) {
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(pts(r, c), pts(0, c));
  }
  EXPECT_GT(pts.slice_rows(0, 1).squared_norm(), 0.0);
}

TEST(LinearSubspaces, InvalidDimensionsAreRejected) {
  EXPECT_THROW(gen_linear_subspaces(3, {4}, {10}, 0), std::invalid_argument);
  EXPECT_THROW(gen_linear_subspaces(5, {0, 0}, {10, 10}, 0), std::invalid_argument);
  EXPECT_THROW(gen_linear_subspaces(5, {1, 2}, {10}, 0), std::invalid_argument);
}

TEST(MlpManifolds, DeterministicInTheSeed) {
  const auto a = gen_mlp_manifolds(20, {2, 3}, {50, 50}, 8);
  const auto b = gen_mlp_manifolds(20, {2, 3}, {50, 50}, 8);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NE(a.samples, gen_mlp_manifolds(20, {2, 3}, {50, 50}, 9).samples);
}

TEST(MlpManifolds, UnionRankIsBoundedByTotalDimension) {
  const ManifoldDataset ds = gen_mlp_manifolds(100, {5, 5, 10, 10}, {1000, 1000, 1000, 1000}, 0);
  EXPECT_LE(numerical_rank(ds.samples), 30u);
  for (std::uint16_t i = 0; i < 4; ++i) EXPECT_EQ(numerical_rank(rows_of(ds, i)), ds.gt_dims[i]);
}

TEST(MlpManifolds, JacobianRankIsIntrinsicDimension) {
  const std::vector<ManifoldMap> maps = mlp_manifold_maps(100, {5, 5, 10, 10}, 0);
  Rng rng(12);
  for (const ManifoldMap& m : maps) {
    const std::size_t r = m.intrinsic_dim();
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor c = normal_tensor({1, r}, rng);
      Tensor jac({100, r});
      const double h = 1e-6;
      for (std::size_t k = 0; k < r; ++k) {
        Tensor plus = c, minus = c;
        plus[k] += h;
        minus[k] -= h;
        const Tensor fp = m.apply(plus), fm = m.apply(minus);
        for (std::size_t a = 0; a < 100; ++a) jac(a, k) = (fp[a] - fm[a]) / (2 * h);
      }
      EXPECT_LE(numerical_rank(jac), r);
      EXPECT_EQ(numerical_rank(jac), r);
    }
  }
}

TEST(MlpManifolds, RejectsZeroDimension) {
  EXPECT_THROW(gen_mlp_manifolds(10, {0}, {5}, 0), std::invalid_argument);
}

TEST(Split, DisjointAndExhaustive) {
  ManifoldDataset ds = gen_linear_subspaces(6, {1, 2}, {37, 63}, 5);
  // Tag each row with a unique value so membership is visible after the shuffle.
  for (std::size_t i = 0; i < ds.size(); ++i) ds.samples(i, 0) = static_cast<double>(i);
  const auto [train, test] = split_train_test(ds, 0.9, 5);
  EXPECT_EQ(train.size(), 90u);
  EXPECT_EQ(test.size(), 10u);
  std::multiset<double> seen;
  for (const auto* part : {&train, &test}) {
    for (std::size_t i = 0; i < part->size(); ++i) seen.insert(part->samples(i, 0));
  }
  EXPECT_EQ(seen.size(), 100u);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(seen.count(static_cast<double>(i)), 1u);
  EXPECT_THROW(split_train_test(ds, 1.5, 0), std::invalid_argument);
}

TEST(DatasetFile, RoundTripIsExact) {
  const auto dir = mslab::testing::scratch_dir("data_io");
  const ManifoldDataset ds = gen_mlp_manifolds(7, {2, 3}, {11, 13}, 3);
  save_dataset(ds, dir / "d.msld");
  const ManifoldDataset back = load_dataset(dir / "d.msld");
  EXPECT_TRUE(same_contents(ds, back));
  EXPECT_EQ(back.samples, ds.samples);
}

TEST(DatasetFile, EmptyDatasetRoundTrips) {
  const auto dir = mslab::testing::scratch_dir("data_empty");
  const ManifoldDataset ds = gen_linear_subspaces(4, {1, 2}, {0, 0}, 0);
  save_dataset(ds, dir / "e.msld");
  const ManifoldDataset back = load_dataset(dir / "e.msld");
  EXPECT_EQ(back.size(), 0u);
  EXPECT_EQ(back.gt_dims, ds.gt_dims);
}

TEST(DatasetFile, CorruptionIsDetected) {
  const auto dir = mslab::testing::scratch_dir("data_bad");
  save_dataset(gen_linear_subspaces(4, {1}, {5}, 0), dir / "d.msld");
  const std::string bytes = mslab::testing::slurp(dir / "d.msld");
  std::string bad = bytes;
  bad[1] = '?';
  std::ofstream(dir / "magic.msld", std::ios::binary) << bad;
  try {
    load_dataset(dir / "magic.msld");
    FAIL() << "expected a format error";
  } catch (const io::FormatError& e) {
    EXPECT_STREQ(e.what(), "bad magic");
  }
  std::ofstream(dir / "short.msld", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  EXPECT_THROW(load_dataset(dir / "short.msld"), io::FormatError);
}

TEST(DatasetFile, CsvHeader) {
  std::ostringstream os;
  write_dataset_csv(gen_linear_subspaces(3, {1}, {2}, 0), os);
  std::istringstream lines(os.str());
  std::string header;
  std::getline(lines, header);
  EXPECT_EQ(header, "m_id,x0,x1,x2");
  int rows = 0;
  for (std::string l; std::getline(lines, l);) ++rows;
  EXPECT_EQ(rows, 2);
}

TEST(NumericalRank, KnownMatrices) {
  EXPECT_EQ(numerical_rank(Tensor::identity(4)), 4u);
  EXPECT_EQ(numerical_rank(Tensor::matrix({{1, 2}, {2, 4}})), 1u);
  EXPECT_EQ(numerical_rank(Tensor::zeros(3, 3)), 0u);
}
