#include "sdr/estimator.hpp"

namespace sdr {

double ordered_mean(const Eigen::VectorXd& v) {
  double s = 0.0;
  for (Index i = 0; i < v.size(); ++i) s += v(i);
  return s / static_cast<double>(v.size());
}

ScoreVector make_score_vector(Eigen::VectorXd scores, Eigen::VectorXi fold_of, int folds) {
  if (scores.size() == 0) throw InsufficientDataError("score vector is empty");
  if (fold_of.size() != scores.size()) throw ParameterError("fold labels do not match scores");
  if (!scores.allFinite()) throw DomainError("non-finite DR score");
  ScoreVector sv;
  sv.theta_hat = ordered_mean(scores);
  sv.scores = std::move(scores);
  sv.fold_of = std::move(fold_of);
  sv.folds = folds;
  return sv;
}

ScoreVector dr_scores(const SpatialDataset& ds, const CrossfitResult& cf) {
  const Index n = ds.size();
  if (cf.m_hat.size() != n || cf.pi_hat.size() != n || cf.fold_plan.size() != n)
    throw ParameterError("crossfit result is not aligned with the dataset");
  Eigen::VectorXd psi(n);
  for (Index i = 0; i < n; ++i) {
    psi(i) = cf.m_hat(i);
    if (ds.labeled()(i)) {
      const auto y = ds.outcome(i);
      if (!y) throw ConsistencyError("labeled unit " + std::to_string(i) + " has no outcome");
      psi(i) += (*y - cf.m_hat(i)) / cf.pi_hat(i);
    }
  }
  return make_score_vector(std::move(psi), cf.fold_plan.assignment, cf.fold_plan.folds);
}

CrossPpiEstimate crossppi_estimate(const SpatialDataset& ds) {
  const Index n = ds.size();
  const Index nl = ds.labeled_count();
  if (nl == 0) throw InsufficientDataError("Cross-PPI needs at least one labeled unit");
  const Eigen::VectorXd& pred = ds.pred();
  const double pbar = ordered_mean(pred);
  double rsum = 0.0;
  for (Index i = 0; i < n; ++i)
    if (ds.labeled()(i)) rsum += *ds.outcome(i) - pred(i);
  const double rbar = rsum / static_cast<double>(nl);

  double vp = 0.0, vr = 0.0;
  for (Index i = 0; i < n; ++i) {
    vp += (pred(i) - pbar) * (pred(i) - pbar);
    if (ds.labeled()(i)) {
      const double e = *ds.outcome(i) - pred(i) - rbar;
      vr += e * e;
    }
  }
  vp /= static_cast<double>(std::max<Index>(n - 1, 1));
  vr /= static_cast<double>(std::max<Index>(nl - 1, 1));

  CrossPpiEstimate out;
  out.point = pbar + rbar;
  out.variance = vp / static_cast<double>(n) + vr / static_cast<double>(nl);
  out.n_labeled = nl;
  return out;
}

}  // namespace sdr
