#ifndef SDR_NUISANCE_HPP
#define SDR_NUISANCE_HPP

#include <cstdint>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "sdr/dataset.hpp"
#include "sdr/folds.hpp"
#include "sdr/learners.hpp"

namespace sdr {

enum class PiSource { estimated, oracle_mar, oracle_mcar_constant };
std::string to_string(PiSource s);

// Out-of-fold nuisance values, one entry per unit.
struct CrossfitResult {
  Eigen::VectorXd m_hat;
  Eigen::VectorXd pi_hat;  // clipped to [pi_min, 1 - pi_min]
  Eigen::VectorXd pi_raw;  // before clipping
  FoldPlan fold_plan;
  PiSource pi_source = PiSource::estimated;
  bool m_supplied = false;
  double pi_min = 0.1;
};

struct CrossfitOptions {
  double pi_min = 0.10;
  // Used verbatim (after clipping) instead of fitting the propensity model.
  std::optional<Eigen::VectorXd> pi_override;
  // Used verbatim instead of fitting the outcome model, e.g. m_hat = Y-hat.
  std::optional<Eigen::VectorXd> m_override;
  std::uint64_t seed = 0;
};

// Nuisance design [X, Y-hat, s] for the rows of `ds`.
Eigen::MatrixXd nuisance_design(const SpatialDataset& ds);

// Column means and sds of `design` over `rows`; zero-sd columns keep sd = 1.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd sd;

  static Standardizer fit(const Eigen::MatrixXd& design, const std::vector<Index>& rows);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& design) const;
};

// For each fold k: outcome learner on the labeled units of T_k, propensity
// learner on all of T_k, both evaluated on I_k with T_k-standardized design.
CrossfitResult crossfit_nuisances(const SpatialDataset& ds, const FoldPlan& plan, const NuisanceLearner& m_learner,
                                  const NuisanceLearner& pi_learner, const CrossfitOptions& opt);

Eigen::VectorXd clip(const Eigen::VectorXd& v, double lo, double hi);

}  // namespace sdr

#endif  // SDR_NUISANCE_HPP
