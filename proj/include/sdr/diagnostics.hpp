#ifndef SDR_DIAGNOSTICS_HPP
#define SDR_DIAGNOSTICS_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "sdr/dataset.hpp"

namespace sdr {

// Triangular-kernel spatial weights with a zero diagonal, no row
// standardization.
struct KernelWeights {
  Eigen::MatrixXd w;
  double s0 = 0.0;  // sum of all weights
};

KernelWeights kernel_weights(const CoordMatrix& coords, double h_n);

// I = (m / S0) * sum_{i != j} w_ij r_i r_j / sum_i r_i^2 with r centered.
double morans_i(const Eigen::VectorXd& residuals, const KernelWeights& weights);
double morans_i(const Eigen::VectorXd& residuals, const CoordMatrix& coords, double h_n);

// One-sided upper p-value (1 + #{T(perm) >= T(obs)}) / (draws + 1) over
// seeded permutations of `residuals`.
double permutation_pvalue(const std::function<double(const Eigen::VectorXd&)>& statistic,
                          const Eigen::VectorXd& residuals, int draws, std::uint64_t seed);

// Index of each unit's nearest other unit; ties go to the lowest index.
Eigen::VectorXi nearest_neighbors(const CoordMatrix& coords);

double pearson_correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// corr(r_i, r_nn(i)) over the directed nearest-neighbor relation.
double nn_residual_correlation(const Eigen::VectorXd& residuals, const CoordMatrix& coords);
double nn_residual_correlation(const Eigen::VectorXd& residuals, const Eigen::VectorXi& nn);

struct VariogramBin {
  double lo = 0.0;
  double hi = 0.0;
  double center = 0.0;
  double gamma = 0.0;
  std::size_t pairs = 0;
};

// 0.5 * mean (r_i - r_j)^2 per equal-width distance bin over (0, max d];
// empty bins are omitted.
std::vector<VariogramBin> semivariogram(const Eigen::VectorXd& residuals, const CoordMatrix& coords, int bins);

struct OverlapReport {
  std::optional<double> pi_q05_design;
  double pi_q05_estimated = 0.0;
  double clip_rate = 0.0;
  double ess = 0.0;
  double ess_ratio = 0.0;
  Index n_labeled = 0;
};

// `estimated_pi_raw` is taken before clipping so the clip rate can be
// reported; the q05 quantile and ESS use the clipped values.
OverlapReport overlap_report(const std::optional<Eigen::VectorXd>& design_pi, const Eigen::VectorXd& estimated_pi_raw,
                             const LabelMask& labeled, double pi_min);

}  // namespace sdr

#endif  // SDR_DIAGNOSTICS_HPP
