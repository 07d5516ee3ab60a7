#ifndef SDR_DATASET_HPP
#define SDR_DATASET_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sdr/error.hpp"
#include "sdr/rng.hpp"

namespace sdr {

using Index = Eigen::Index;
using CoordMatrix = Eigen::Matrix<double, Eigen::Dynamic, 2>;
using LabelMask = Eigen::Array<bool, Eigen::Dynamic, 1>;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Per-unit observed records: coordinates, features, external prediction,
// label indicator and (when labeled) the outcome. Immutable once built;
// the constructor enforces every invariant.
class SpatialDataset {
 public:
  // `outcome` carries NaN for unlabeled units.
  SpatialDataset(CoordMatrix coords, Eigen::MatrixXd features, Eigen::VectorXd pred, LabelMask labeled,
                 Eigen::VectorXd outcome, std::vector<std::string> feature_names = {});

  Index size() const noexcept { return coords_.rows(); }
  Index feature_count() const noexcept { return features_.cols(); }
  Index labeled_count() const noexcept { return labeled_count_; }

  const CoordMatrix& coords() const noexcept { return coords_; }
  const Eigen::MatrixXd& features() const noexcept { return features_; }
  const Eigen::VectorXd& pred() const noexcept { return pred_; }
  const LabelMask& labeled() const noexcept { return labeled_; }
  const std::vector<std::string>& feature_names() const noexcept { return feature_names_; }

  std::optional<double> outcome(Index i) const {
    if (!labeled_(i)) return std::nullopt;
    return outcome_(i);
  }
  // Outcome vector with NaN at unlabeled positions.
  const Eigen::VectorXd& outcome_or_nan() const noexcept { return outcome_; }
  // Outcome vector with `fill` at unlabeled positions.
  Eigen::VectorXd outcome_or(double fill) const;

  // Subset of rows, in the given order.
  SpatialDataset select(const std::vector<Index>& rows) const;

 private:
  CoordMatrix coords_;
  Eigen::MatrixXd features_;
  Eigen::VectorXd pred_;
  LabelMask labeled_;
  Eigen::VectorXd outcome_;
  std::vector<std::string> feature_names_;
  Index labeled_count_ = 0;
};

// Which CSV header names feed which dataset role.
struct ColumnMap {
  std::string coord_x = "sx";
  std::string coord_y = "sy";
  std::vector<std::string> features;
  std::string pred = "yhat";
  std::string label = "r";
  std::string outcome = "y";
};

// Raw CSV table: header plus string cells, used by the loaders here and in
// the harness.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column position by name, or SchemaError.
  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
std::vector<std::string> split_csv_line(const std::string& line);

// Empty cell or "NA" (case-insensitive) encodes a missing value.
bool is_missing_token(const std::string& cell);
double parse_double_cell(const std::string& cell, std::size_t row, const std::string& column);
bool parse_bool_cell(const std::string& cell, std::size_t row, const std::string& column);

// Shortest decimal repr that parses back to the same double.
std::string format_double(double v);

SpatialDataset load_dataset_csv(const std::filesystem::path& path, const ColumnMap& columns);
void write_dataset_csv(const SpatialDataset& ds, const std::filesystem::path& path, const ColumnMap& columns);

// -- distances ---------------------------------------------------------------

template <typename Scalar>
Scalar triangular_kernel(Scalar u) {
  if (!(u >= Scalar(0))) throw DomainError("triangular_kernel: argument must be nonnegative");
  return std::max(Scalar(1) - u, Scalar(0));
}

// Upper-triangle Euclidean distances d_ij, i < j, in row-major pair order.
template <typename Derived>
std::vector<typename Derived::Scalar> pairwise_distances(const Eigen::MatrixBase<Derived>& coords) {
  using Scalar = typename Derived::Scalar;
  const Index n = coords.rows();
  std::vector<Scalar> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) d.push_back((coords.row(i) - coords.row(j)).norm());
  return d;
}

// 1-based nearest rank ceil(q * count), clamped to [1, count].
std::size_t nearest_rank(double q, std::size_t count);

// Nearest-rank quantile; reorders `values`.
template <typename Scalar>
Scalar nearest_rank_quantile(std::vector<Scalar>& values, double q) {
  if (values.empty()) throw InsufficientDataError("quantile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw ParameterError("quantile probability must lie in [0,1]");
  const auto k = nearest_rank(q, values.size()) - 1;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
  return values[k];
}

struct QuantileOptions {
  // Above this many pairs, `subsample` switches to a seeded pair subsample.
  std::size_t max_pairs = 20000;
  bool subsample = false;
  std::uint64_t seed = 0;
};

// q-quantile of {d_ij : i < j} under the nearest-rank rule.
template <typename Derived>
typename Derived::Scalar pairwise_distance_quantile(const Eigen::MatrixBase<Derived>& coords, double q,
                                                    const QuantileOptions& opt = {}) {
  using Scalar = typename Derived::Scalar;
  const Index n = coords.rows();
  if (n < 2) throw InsufficientDataError("pairwise_distance_quantile needs at least two points");
  if (!(q >= 0.0 && q <= 1.0)) throw ParameterError("quantile probability must lie in [0,1]");
  const auto pairs = static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2;
  if (opt.subsample && pairs > opt.max_pairs) {
    std::vector<Scalar> d;
    d.reserve(opt.max_pairs);
    Rng rng(opt.seed);
    std::uniform_int_distribution<Index> pick(0, n - 1);
    while (d.size() < opt.max_pairs) {
      const Index i = pick(rng);
      const Index j = pick(rng);
      if (i == j) continue;
      d.push_back((coords.row(i) - coords.row(j)).norm());
    }
    return nearest_rank_quantile(d, q);
  }
  auto d = pairwise_distances(coords);
  return nearest_rank_quantile(d, q);
}

struct DistanceSummary {
  std::map<double, double> quantile_table;
  double min_pair_distance = 0.0;
  std::size_t n_pairs = 0;
};

DistanceSummary summarize_distances(const CoordMatrix& coords, const std::vector<double>& probs);

}  // namespace sdr

#endif  // SDR_DATASET_HPP
