#include "mslab/manifold_data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "mslab/binary_io.hpp"
#include "mslab/rng.hpp"

namespace mslab {

namespace {

constexpr std::uint32_t kDatasetVersion = 1;
constexpr double kLeaky = 0.2;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> view(const Tensor& t) {
  return Eigen::Map<const RowMat>(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                                  static_cast<Eigen::Index>(t.cols()));
}

void check_counts(const std::vector<std::size_t>& dims, const std::vector<std::size_t>& counts) {
  if (dims.empty()) throw std::invalid_argument("at least one manifold is required");
  if (dims.size() != counts.size()) {
    throw std::invalid_argument("dims and counts must have the same length");
  }
  if (dims.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw std::invalid_argument("too many manifolds");
  }
}

std::vector<double> weights_from(const std::vector<std::size_t>& counts) {
  const double n = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  std::vector<double> w(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    w[i] = n > 0 ? static_cast<double>(counts[i]) / n : 1.0 / static_cast<double>(counts.size());
  }
  return w;
}

ManifoldDataset empty_like(std::size_t d, const std::vector<std::size_t>& dims,
                           const std::vector<std::size_t>& counts, std::uint64_t seed) {
  ManifoldDataset ds;
  ds.d = d;
  ds.gt_dims = dims;
  ds.mixture_weights = weights_from(counts);
  ds.seed = seed;
  const std::size_t n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  ds.samples = Tensor({n, d});
  ds.manifold_id.reserve(n);
  return ds;
}

}  // namespace

std::vector<std::size_t> ManifoldDataset::counts() const {
  std::vector<std::size_t> c(gt_dims.size(), 0);
  for (auto id : manifold_id) ++c.at(id);
  return c;
}

ManifoldDataset ManifoldDataset::subset(const std::vector<std::size_t>& rows) const {
  ManifoldDataset out;
  out.d = d;
  out.gt_dims = gt_dims;
  out.seed = seed;
  out.samples = rows.empty() ? Tensor({0, d}) : samples.gather_rows(rows);
  out.manifold_id.reserve(rows.size());
  for (std::size_t r : rows) out.manifold_id.push_back(manifold_id.at(r));
  out.mixture_weights = weights_from(out.counts());
  return out;
}

bool same_contents(const ManifoldDataset& a, const ManifoldDataset& b) {
  return a.d == b.d && a.samples == b.samples && a.manifold_id == b.manifold_id &&
         a.gt_dims == b.gt_dims && a.mixture_weights == b.mixture_weights;
}

std::vector<Tensor> linear_subspace_bases(std::size_t d, const std::vector<std::size_t>& dims,
                                          std::uint64_t seed) {
  std::vector<Tensor> bases;
  std::size_t zero_dims = 0;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const std::size_t r = dims[i];
    if (r > d) {
      throw std::invalid_argument("manifold dimension " + std::to_string(r) +
                                  " exceeds ambient dimension " + std::to_string(d));
    }
    if (r == 0 && ++zero_dims > 1) {
      throw std::invalid_argument("at most one zero-dimensional manifold is allowed");
    }
    Rng rng(derive_seed(seed, 100 + i));
    Tensor basis({d, r});
    if (r > 0) {
      Tensor g = normal_tensor({d, r}, rng);
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(view(g));
      const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(
                                                        static_cast<Eigen::Index>(d),
                                                        static_cast<Eigen::Index>(r));
      for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < r; ++b) basis(a, b) = q(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      }
    }
    bases.push_back(std::move(basis));
  }
  return bases;
}

ManifoldDataset gen_linear_subspaces(std::size_t d, const std::vector<std::size_t>& dims,
                                     const std::vector<std::size_t>& counts, std::uint64_t seed) {
  check_counts(dims, counts);
  const std::vector<Tensor> bases = linear_subspace_bases(d, dims, seed);
  ManifoldDataset ds = empty_like(d, dims, counts, seed);
  std::size_t row = 0;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    Rng rng(derive_seed(seed, 200 + i));
    const Tensor& b = bases[i];
    const std::size_t r = dims[i];
    Tensor point;
    if (r == 0) point = normal_tensor({d}, rng);
    std::vector<double> c(r);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t s = 0; s < counts[i]; ++s, ++row) {
      if (r == 0) {
        for (std::size_t a = 0; a < d; ++a) ds.samples(row, a) = point[a];
      } else {
        for (double& v : c) v = normal(rng);
        for (std::size_t a = 0; a < d; ++a) {
          double acc = 0.0;
          for (std::size_t k = 0; k < r; ++k) acc += b(a, k) * c[k];
          ds.samples(row, a) = acc;
        }
      }
      ds.manifold_id.push_back(static_cast<std::uint16_t>(i));
    }
  }
  return ds;
}

Tensor ManifoldMap::apply(const Tensor& coeffs) const {
  const std::size_t n = coeffs.rows();
  const std::size_t r = w1.cols();
  const std::size_t d = w2.rows();
  if (coeffs.cols() != r) throw ShapeError("ManifoldMap::apply: coefficient width mismatch");
  Tensor out({n, d});
  std::vector<double> h(w1.rows());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < h.size(); ++j) {
      double acc = b1[j];
      for (std::size_t k = 0; k < r; ++k) acc += w1(j, k) * coeffs(s, k);
      h[j] = acc > 0.0 ? acc : kLeaky * acc;
    }
    for (std::size_t a = 0; a < d; ++a) {
      double acc = 0.0;
      for (std::size_t j = 0; j < h.size(); ++j) acc += w2(a, j) * h[j];
      out(s, a) = acc;
    }
  }
  return out;
}

std::vector<ManifoldMap> mlp_manifold_maps(std::size_t d, const std::vector<std::size_t>& dims,
                                           std::uint64_t seed) {
  std::vector<ManifoldMap> maps;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const std::size_t r = dims[i];
    if (r < 1) throw std::invalid_argument("MLP manifolds need dimension >= 1");
    Rng rng(derive_seed(seed, 300 + i));
    const double s = 1.0 / std::sqrt(static_cast<double>(r));
    ManifoldMap m;
    m.w1 = normal_tensor({r, r}, rng);
    m.b1 = normal_tensor({r}, rng);
    m.w2 = normal_tensor({d, r}, rng);
    for (Tensor* t : {&m.w1, &m.b1, &m.w2}) {
      for (double& v : t->storage()) v *= s;
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

ManifoldDataset gen_mlp_manifolds(std::size_t d, const std::vector<std::size_t>& dims,
                                  const std::vector<std::size_t>& counts, std::uint64_t seed) {
  check_counts(dims, counts);
  if (d < 1) throw std::invalid_argument("ambient dimension must be >= 1");
  const std::vector<ManifoldMap> maps = mlp_manifold_maps(d, dims, seed);
  ManifoldDataset ds = empty_like(d, dims, counts, seed);
  std::size_t row = 0;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    Rng rng(derive_seed(seed, 400 + i));
    const Tensor x = maps[i].apply(normal_tensor({counts[i], dims[i]}, rng));
    std::copy(x.storage().begin(), x.storage().end(),
              ds.samples.storage().begin() + static_cast<std::ptrdiff_t>(row * d));
    row += counts[i];
    ds.manifold_id.insert(ds.manifold_id.end(), counts[i], static_cast<std::uint16_t>(i));
  }
  return ds;
}

std::pair<ManifoldDataset, ManifoldDataset> split_train_test(const ManifoldDataset& ds,
                                                             double train_fraction,
                                                             std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw std::invalid_argument("train fraction must lie in [0, 1]");
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 500));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ds.size())));
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return {ds.subset(train), ds.subset(test)};
}

void save_dataset(const ManifoldDataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  io::write_magic(os, "MSLD");
  io::write_le<std::uint32_t>(os, kDatasetVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.d));
  io::write_le<std::uint64_t>(os, ds.size());
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.gt_dims.size()));
  for (std::size_t r : ds.gt_dims) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(r));
  for (std::size_t s = 0; s < ds.size(); ++s) {
    io::write_le<std::uint16_t>(os, ds.manifold_id[s]);
    for (std::size_t a = 0; a < ds.d; ++a) io::write_le<double>(os, ds.samples(s, a));
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

ManifoldDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset " + path.string());
  io::expect_magic(is, "MSLD");
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kDatasetVersion) {
    throw io::FormatError("unsupported dataset version " + std::to_string(version));
  }
  ManifoldDataset ds;
  ds.d = io::read_le<std::uint32_t>(is);
  const auto n = io::read_le<std::uint64_t>(is);
  const auto n_manifolds = io::read_le<std::uint32_t>(is);
  ds.gt_dims.resize(n_manifolds);
  for (auto& r : ds.gt_dims) r = io::read_le<std::uint32_t>(is);
  // Guard the allocation against a corrupted header.
  const auto start = is.tellg();
  is.seekg(0, std::ios::end);
  const auto remaining = static_cast<std::uint64_t>(is.tellg() - start);
  is.seekg(start);
  if (n * (2 + 8 * static_cast<std::uint64_t>(ds.d)) > remaining) throw io::FormatError("truncated file");
  ds.samples = Tensor({static_cast<std::size_t>(n), ds.d});
  ds.manifold_id.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    ds.manifold_id[s] = io::read_le<std::uint16_t>(is);
    if (ds.manifold_id[s] >= n_manifolds) throw io::FormatError("manifold id out of range");
    for (std::size_t a = 0; a < ds.d; ++a) ds.samples(s, a) = io::read_le<double>(is);
  }
  ds.mixture_weights = weights_from(ds.counts());
  return ds;
}

void write_dataset_csv(const ManifoldDataset& ds, std::ostream& os) {
  os << "m_id";
  for (std::size_t a = 0; a < ds.d; ++a) os << ",x" << a;
  os << '\n' << std::setprecision(17);
  for (std::size_t s = 0; s < ds.size(); ++s) {
    os << ds.manifold_id[s];
    for (std::size_t a = 0; a < ds.d; ++a) os << ',' << ds.samples(s, a);
    os << '\n';
  }
}

std::size_t numerical_rank(const Tensor& m, double rel_tol) {
  if (m.size() == 0) return 0;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(view(m));
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > rel_tol * sv(0)) ++rank;
  }
  return rank;
}

}  // namespace mslab
