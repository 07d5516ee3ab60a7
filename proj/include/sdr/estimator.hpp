#ifndef SDR_ESTIMATOR_HPP
#define SDR_ESTIMATOR_HPP

#include <Eigen/Dense>

#include "sdr/dataset.hpp"
#include "sdr/nuisance.hpp"

namespace sdr {

// Uncentered DR scores psi_i = m_i + R_i (Y_i - m_i) / pi_i with their folds.
struct ScoreVector {
  Eigen::VectorXd scores;
  Eigen::VectorXi fold_of;
  int folds = 0;
  double theta_hat = 0.0;

  Index size() const noexcept { return scores.size(); }
};

// Left-to-right sum / n, fixed order for bit reproducibility.
double ordered_mean(const Eigen::VectorXd& v);

ScoreVector make_score_vector(Eigen::VectorXd scores, Eigen::VectorXi fold_of, int folds);

ScoreVector dr_scores(const SpatialDataset& ds, const CrossfitResult& cf);

struct CrossPpiEstimate {
  double point = 0.0;
  double variance = 0.0;
  Index n_labeled = 0;
};

// mean(Y-hat) + mean over labeled of (Y - Y-hat), with the two-term plug-in
// variance Var(Y-hat)/n + Var_labeled(Y - Y-hat)/n_labeled.
CrossPpiEstimate crossppi_estimate(const SpatialDataset& ds);

}  // namespace sdr

#endif  // SDR_ESTIMATOR_HPP
