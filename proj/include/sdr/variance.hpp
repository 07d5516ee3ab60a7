#ifndef SDR_VARIANCE_HPP
#define SDR_VARIANCE_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>

#include <Eigen/Dense>

#include "sdr/dataset.hpp"
#include "sdr/estimator.hpp"
#include "sdr/nuisance.hpp"

namespace sdr {

// -- quadratic-form kernels (templated on the scalar type) -------------------

template <typename Scalar>
struct FoldCentered {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> centered;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> fold_means;
  Eigen::VectorXi fold_sizes;
};

// psi_i - mean of psi over fold(i). `folds` may be 1.
template <typename Derived>
FoldCentered<typename Derived::Scalar> fold_center(const Eigen::MatrixBase<Derived>& scores,
                                                   const Eigen::VectorXi& fold_of, int folds) {
  using Scalar = typename Derived::Scalar;
  const Index n = scores.size();
  if (fold_of.size() != n) throw ParameterError("fold_center: fold labels do not match scores");
  if (folds < 1) throw PartitionError("fold_center: need at least one fold");
  FoldCentered<Scalar> out;
  out.fold_means = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(folds);
  out.fold_sizes = Eigen::VectorXi::Zero(folds);
  for (Index i = 0; i < n; ++i) {
    const int k = fold_of(i);
    if (k < 0 || k >= folds) throw PartitionError("fold_center: fold id out of range");
    out.fold_means(k) += scores(i);
    ++out.fold_sizes(k);
  }
  for (int k = 0; k < folds; ++k) {
    if (out.fold_sizes(k) == 0) throw PartitionError("fold_center: fold " + std::to_string(k) + " is empty");
    out.fold_means(k) /= Scalar(out.fold_sizes(k));
  }
  out.centered.resize(n);
  for (Index i = 0; i < n; ++i) out.centered(i) = scores(i) - out.fold_means(fold_of(i));
  return out;
}

template <typename Scalar>
struct HacTerms {
  Scalar within = 0;
  Scalar diag = 0;
  Scalar off = 0;
};

// n^-2 sum_ij kappa(d_ij / h) x_i x_j over all ordered pairs, split into the
// diagonal part and the off-diagonal remainder. At h = 0 only coincident
// pairs carry weight (kappa(0) = 1).
template <typename DerivedX, typename DerivedC>
HacTerms<typename DerivedX::Scalar> hac_within(const Eigen::MatrixBase<DerivedX>& x,
                                               const Eigen::MatrixBase<DerivedC>& coords,
                                               typename DerivedX::Scalar h_n) {
  using Scalar = typename DerivedX::Scalar;
  if (!(h_n >= Scalar(0))) throw ParameterError("HAC bandwidth must be nonnegative");
  const Index n = x.size();
  if (coords.rows() != n) throw ParameterError("hac_within: coordinates do not match scores");
  Scalar diag = 0, off = 0;
  for (Index i = 0; i < n; ++i) {
    diag += x(i) * x(i);
    Scalar row = 0;
    for (Index j = i + 1; j < n; ++j) {
      const Scalar d = (coords.row(i) - coords.row(j)).norm();
      if (d == Scalar(0)) row += x(j);
      else if (d < h_n) row += (Scalar(1) - d / h_n) * x(j);
    }
    off += x(i) * row;
  }
  const Scalar n2 = Scalar(n) * Scalar(n);
  HacTerms<Scalar> t;
  t.diag = diag / n2;
  t.off = Scalar(2) * off / n2;
  t.within = t.diag + t.off;
  return t;
}

// n^-2 sum over ordered pairs sharing a cluster label of x_i x_j, i.e.
// n^-2 sum_g (sum_{i in g} x_i)^2.
template <typename Derived>
typename Derived::Scalar cluster_quadratic_form(const Eigen::MatrixBase<Derived>& x, const Eigen::VectorXi& g) {
  using Scalar = typename Derived::Scalar;
  const Index n = x.size();
  if (g.size() != n) throw ParameterError("cluster labels do not match scores");
  std::unordered_map<int, Scalar> sums;
  for (Index i = 0; i < n; ++i) sums[g(i)] += x(i);
  // sorted accumulation keeps the result independent of hash order
  std::map<int, Scalar> ordered(sums.begin(), sums.end());
  Scalar s = 0;
  for (const auto& [label, v] : ordered) s += v * v;
  return s / (Scalar(n) * Scalar(n));
}

// Cameron-Gelbach-Miller inclusion-exclusion: V_g1 + V_g2 - V_{g1 x g2}.
template <typename Derived>
typename Derived::Scalar twoway_cgm_variance(const Eigen::MatrixBase<Derived>& x, const Eigen::VectorXi& g1,
                                             const Eigen::VectorXi& g2) {
  const Index n = x.size();
  if (g1.size() != n || g2.size() != n) throw ParameterError("cluster labels do not match scores");
  // dense relabeling of the (g1, g2) intersection cells
  std::map<std::pair<int, int>, int> cell_ids;
  Eigen::VectorXi cell(n);
  for (Index i = 0; i < n; ++i) {
    auto [it, inserted] = cell_ids.try_emplace({g1(i), g2(i)}, static_cast<int>(cell_ids.size()));
    cell(i) = it->second;
  }
  return cluster_quadratic_form(x, g1) + cluster_quadratic_form(x, g2) - cluster_quadratic_form(x, cell);
}

// K/(K-1) sum_k (n_k/n)^2 (fold_mean_k - theta)^2.
template <typename Scalar>
Scalar between_fold_term(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& fold_means,
                         const Eigen::VectorXi& fold_sizes, Scalar theta) {
  const int k = static_cast<int>(fold_means.size());
  if (k < 2) throw ParameterError("between-fold term needs K >= 2 folds");
  const Scalar n = Scalar(fold_sizes.sum());
  Scalar s = 0;
  for (int f = 0; f < k; ++f) {
    const Scalar share = Scalar(fold_sizes(f)) / n;
    const Scalar dev = fold_means(f) - theta;
    s += share * share * dev * dev;
  }
  return Scalar(k) / Scalar(k - 1) * s;
}

// -- variance estimates over a ScoreVector -----------------------------------

enum class VarianceMethod { iid, hac, jk_hac, twoway, jk_twoway };
std::string to_string(VarianceMethod m);

struct VarianceEstimate {
  double value = 0.0;  // variance of theta-hat, floored where applicable
  double raw = 0.0;    // before the floor
  VarianceMethod method = VarianceMethod::iid;
  std::map<std::string, double> components;
  bool floor_applied = false;
};

inline constexpr double kDefaultEpsilon = 1e-12;

// Sample variance (denominator n-1) over n.
VarianceEstimate iid_variance(const ScoreVector& sv);

// Conley HAC on globally centered scores, diagonal included.
VarianceEstimate hac_variance_at(const ScoreVector& sv, const CoordMatrix& coords, double h_n, double epsilon);
VarianceEstimate hac_variance(const ScoreVector& sv, const CoordMatrix& coords, double h_q, double epsilon);

// Jackknife-HAC: off-diagonal HAC of fold-centered scores plus the
// between-fold term, floored at epsilon.
VarianceEstimate jk_hac_variance_at(const ScoreVector& sv, const CoordMatrix& coords, double h_n, double epsilon);
VarianceEstimate jk_hac_variance(const ScoreVector& sv, const CoordMatrix& coords, double h_q, double epsilon);

// Plug-in CGM two-way variance on globally centered scores.
VarianceEstimate twoway_variance(const ScoreVector& sv, const Eigen::VectorXi& g1, const Eigen::VectorXi& g2,
                                 double epsilon);
// Jackknife two-way: CGM on fold-centered scores minus the diagonal, plus the
// between-fold term, floored at epsilon.
VarianceEstimate jk_twoway_variance(const ScoreVector& sv, const Eigen::VectorXi& g1, const Eigen::VectorXi& g2,
                                    double epsilon);

// -- Moran gate and intervals ------------------------------------------------

struct MoranGateRecord {
  double statistic = 0.0;
  double p_value = 1.0;
  bool spatial = false;
  bool degenerate = false;  // constant residuals; gate forced non-spatial
  double h_n = 0.0;
  Index n_residuals = 0;
};

// Moran's I on labeled residuals Y - m_hat with kernel weights at the
// h_q-quantile bandwidth of the full sample, tested by permutation.
MoranGateRecord moran_gate(const SpatialDataset& ds, const CrossfitResult& cf, double h_q, int permutations,
                           double gate_level, std::uint64_t seed);

enum class CriticalBranch { z_spatial, t_spatial, t_iid_gate };
std::string to_string(CriticalBranch b);

struct IntervalReport {
  double theta_hat = 0.0;
  VarianceEstimate variance;
  CriticalBranch critical_branch = CriticalBranch::z_spatial;
  double critical_value = 0.0;
  double alpha = 0.1;
  double lo = 0.0;
  double hi = 0.0;
  std::optional<MoranGateRecord> gate;

  double width() const noexcept { return hi - lo; }
};

double normal_quantile(double p);
double student_t_quantile(double p, double dof);

struct IntervalOptions {
  double alpha = 0.10;
  // Applied regardless of the gate when set.
  std::optional<CriticalBranch> force_branch;
  // Critical value in the spatial branch: z by default, t_{K-1} on request.
  bool spatial_t = false;
};

// theta-hat +- c sqrt(V). A gate that does not detect spatial signal swaps in
// the iid variance and a t_{K-1} critical value.
IntervalReport build_interval(const ScoreVector& sv, const VarianceEstimate& variance,
                              const std::optional<MoranGateRecord>& gate, const IntervalOptions& opt);

}  // namespace sdr

#endif  // SDR_VARIANCE_HPP
