#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <utility>
#include <vector>

#include "mslab/tensor.hpp"

namespace mslab {

/// Samples drawn from a union of manifolds with known ground truth.
struct ManifoldDataset {
  std::size_t d = 0;
  Tensor samples;                       ///< n x d
  std::vector<std::uint16_t> manifold_id;  ///< one per sample, < gt_dims.size()
  std::vector<std::size_t> gt_dims;
  std::vector<double> mixture_weights;  ///< fraction of samples per manifold
  std::uint64_t seed = 0;

  std::size_t size() const { return manifold_id.size(); }
  std::size_t n_manifolds() const { return gt_dims.size(); }
  std::vector<std::size_t> counts() const;
  /// Subset of rows, keeping ground truth metadata.
  ManifoldDataset subset(const std::vector<std::size_t>& rows) const;
};

/// Compares everything that the dataset file stores (the seed is not stored).
bool same_contents(const ManifoldDataset& a, const ManifoldDataset& b);

/// Orthonormal bases (d x r_i) used by gen_linear_subspaces for this seed.
std::vector<Tensor> linear_subspace_bases(std::size_t d, const std::vector<std::size_t>& dims,
                                          std::uint64_t seed);

/// Each manifold is span(B_i) with B_i orthonormal; coefficients ~ N(0, I).
/// A zero-dimensional manifold is a single random point (at most one allowed).
ManifoldDataset gen_linear_subspaces(std::size_t d, const std::vector<std::size_t>& dims,
                                     const std::vector<std::size_t>& counts, std::uint64_t seed);

/// Two-layer generator c -> W2 leaky_relu(W1 c + b1) for one manifold. Without an
/// output bias each manifold spans an r-dimensional linear subspace.
struct ManifoldMap {
  Tensor w1, b1, w2;
  /// Maps latent coefficients [n x r] to ambient samples [n x d].
  Tensor apply(const Tensor& coeffs) const;
  std::size_t intrinsic_dim() const { return w1.cols(); }
};

std::vector<ManifoldMap> mlp_manifold_maps(std::size_t d, const std::vector<std::size_t>& dims,
                                           std::uint64_t seed);

ManifoldDataset gen_mlp_manifolds(std::size_t d, const std::vector<std::size_t>& dims,
                                  const std::vector<std::size_t>& counts, std::uint64_t seed);

/// Seeded shuffle split into (train, test); train gets round(train_fraction * n) rows.
std::pair<ManifoldDataset, ManifoldDataset> split_train_test(const ManifoldDataset& ds,
                                                             double train_fraction,
                                                             std::uint64_t seed);

void save_dataset(const ManifoldDataset& ds, const std::filesystem::path& path);
ManifoldDataset load_dataset(const std::filesystem::path& path);
void write_dataset_csv(const ManifoldDataset& ds, std::ostream& os);

/// Number of singular values above rel_tol * largest singular value.
std::size_t numerical_rank(const Tensor& m, double rel_tol = 1e-6);

}  // namespace mslab
