#include "sdr/variance.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "sdr/diagnostics.hpp"

namespace sdr {

std::string to_string(VarianceMethod m) {
  switch (m) {
    case VarianceMethod::iid: return "iid";
    case VarianceMethod::hac: return "hac";
    case VarianceMethod::jk_hac: return "jk_hac";
    case VarianceMethod::twoway: return "twoway";
    case VarianceMethod::jk_twoway: return "jk_twoway";
  }
  return "unknown";
}

std::string to_string(CriticalBranch b) {
  switch (b) {
    case CriticalBranch::z_spatial: return "z_spatial";
    case CriticalBranch::t_spatial: return "t_spatial";
    case CriticalBranch::t_iid_gate: return "t_iid_gate";
  }
  return "unknown";
}

namespace {

VarianceEstimate floored(VarianceMethod method, double raw, double epsilon) {
  if (!(epsilon > 0.0)) throw ParameterError("variance floor epsilon must be positive");
  VarianceEstimate v;
  v.method = method;
  v.raw = raw;
  v.floor_applied = !(raw > epsilon);
  v.value = v.floor_applied ? epsilon : raw;
  return v;
}

void require_folds(const ScoreVector& sv) {
  if (sv.folds < 2) throw ParameterError("jackknife variance needs K >= 2 folds");
}

}  // namespace

VarianceEstimate iid_variance(const ScoreVector& sv) {
  const Index n = sv.size();
  if (n < 2) throw InsufficientDataError("iid variance needs at least two scores");
  double ss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double e = sv.scores(i) - sv.theta_hat;
    ss += e * e;
  }
  VarianceEstimate v;
  v.method = VarianceMethod::iid;
  v.raw = ss / static_cast<double>(n - 1) / static_cast<double>(n);
  v.value = v.raw;
  v.components["sample_variance"] = ss / static_cast<double>(n - 1);
  return v;
}

VarianceEstimate hac_variance_at(const ScoreVector& sv, const CoordMatrix& coords, double h_n, double epsilon) {
  const Eigen::VectorXd c = sv.scores.array() - sv.theta_hat;
  const auto t = hac_within(c, coords, h_n);
  auto v = floored(VarianceMethod::hac, t.within, epsilon);
  v.components["v_hac"] = t.within;
  v.components["v_diag"] = t.diag;
  v.components["v_off"] = t.off;
  v.components["h_n"] = h_n;
  return v;
}

VarianceEstimate hac_variance(const ScoreVector& sv, const CoordMatrix& coords, double h_q, double epsilon) {
  return hac_variance_at(sv, coords, pairwise_distance_quantile(coords, h_q), epsilon);
}

VarianceEstimate jk_hac_variance_at(const ScoreVector& sv, const CoordMatrix& coords, double h_n, double epsilon) {
  require_folds(sv);
  const auto fc = fold_center(sv.scores, sv.fold_of, sv.folds);
  const auto t = hac_within(fc.centered, coords, h_n);
  const double between = between_fold_term(fc.fold_means, fc.fold_sizes, sv.theta_hat);
  auto v = floored(VarianceMethod::jk_hac, t.off + between, epsilon);
  v.components["v_within"] = t.within;
  v.components["v_diag"] = t.diag;
  v.components["v_off"] = t.off;
  v.components["v_between"] = between;
  v.components["v_jk"] = t.off + between;
  v.components["h_n"] = h_n;
  return v;
}

VarianceEstimate jk_hac_variance(const ScoreVector& sv, const CoordMatrix& coords, double h_q, double epsilon) {
  require_folds(sv);
  return jk_hac_variance_at(sv, coords, pairwise_distance_quantile(coords, h_q), epsilon);
}

VarianceEstimate twoway_variance(const ScoreVector& sv, const Eigen::VectorXi& g1, const Eigen::VectorXi& g2,
                                 double epsilon) {
  const Eigen::VectorXd c = sv.scores.array() - sv.theta_hat;
  const double v2 = twoway_cgm_variance(c, g1, g2);
  auto v = floored(VarianceMethod::twoway, v2, epsilon);
  v.components["v_2way"] = v2;
  v.components["v_diag"] = c.squaredNorm() / (static_cast<double>(c.size()) * static_cast<double>(c.size()));
  return v;
}

VarianceEstimate jk_twoway_variance(const ScoreVector& sv, const Eigen::VectorXi& g1, const Eigen::VectorXi& g2,
                                    double epsilon) {
  require_folds(sv);
  const auto fc = fold_center(sv.scores, sv.fold_of, sv.folds);
  const double n = static_cast<double>(sv.size());
  const double v2 = twoway_cgm_variance(fc.centered, g1, g2);
  const double diag = fc.centered.squaredNorm() / (n * n);
  const double between = between_fold_term(fc.fold_means, fc.fold_sizes, sv.theta_hat);
  auto v = floored(VarianceMethod::jk_twoway, (v2 - diag) + between, epsilon);
  v.components["v_2way"] = v2;
  v.components["v_diag"] = diag;
  v.components["v_off"] = v2 - diag;
  v.components["v_between"] = between;
  v.components["v_jk"] = (v2 - diag) + between;
  return v;
}

MoranGateRecord moran_gate(const SpatialDataset& ds, const CrossfitResult& cf, double h_q, int permutations,
                           double gate_level, std::uint64_t seed) {
  if (!(gate_level > 0.0 && gate_level < 1.0)) throw ParameterError("gate level must lie in (0,1)");
  const Index nl = ds.labeled_count();
  if (nl < 3) throw InsufficientDataError("Moran gate needs at least three labeled units");
  CoordMatrix c(nl, 2);
  Eigen::VectorXd r(nl);
  Index a = 0;
  for (Index i = 0; i < ds.size(); ++i)
    if (ds.labeled()(i)) {
      c.row(a) = ds.coords().row(i);
      r(a) = *ds.outcome(i) - cf.m_hat(i);
      ++a;
    }
  MoranGateRecord g;
  g.n_residuals = nl;
  g.h_n = pairwise_distance_quantile(ds.coords(), h_q);
  const Eigen::VectorXd rc = r.array() - r.mean();
  if (!(rc.squaredNorm() > 1e-24 * (1.0 + r.squaredNorm()))) {
    g.degenerate = true;
    g.spatial = false;
    g.p_value = 1.0;
    return g;
  }
  if (!(g.h_n > 0.0)) {
    // every pair at zero distance: no usable weights
    g.degenerate = true;
    return g;
  }
  const KernelWeights w = kernel_weights(c, g.h_n);
  if (!(w.s0 > 0.0)) {
    g.degenerate = true;
    return g;
  }
  auto stat = [&w](const Eigen::VectorXd& v) { return morans_i(v, w); };
  g.statistic = stat(r);
  g.p_value = permutation_pvalue(stat, r, permutations, seed);
  g.spatial = g.p_value <= gate_level;
  return g;
}

double normal_quantile(double p) { return boost::math::quantile(boost::math::normal_distribution<double>(), p); }

double student_t_quantile(double p, double dof) {
  return boost::math::quantile(boost::math::students_t_distribution<double>(dof), p);
}

IntervalReport build_interval(const ScoreVector& sv, const VarianceEstimate& variance,
                              const std::optional<MoranGateRecord>& gate, const IntervalOptions& opt) {
  if (!(opt.alpha > 0.0 && opt.alpha < 1.0)) throw ParameterError("alpha must lie in (0,1)");
  IntervalReport rep;
  rep.theta_hat = sv.theta_hat;
  rep.alpha = opt.alpha;
  rep.gate = gate;

  CriticalBranch branch = opt.spatial_t ? CriticalBranch::t_spatial : CriticalBranch::z_spatial;
  if (gate && !gate->spatial) branch = CriticalBranch::t_iid_gate;
  if (opt.force_branch) branch = *opt.force_branch;
  if (branch != CriticalBranch::z_spatial && sv.folds < 2)
    throw ParameterError("t critical value needs K >= 2 folds");

  rep.critical_branch = branch;
  const double p = 1.0 - opt.alpha / 2.0;
  switch (branch) {
    case CriticalBranch::z_spatial:
      rep.variance = variance;
      rep.critical_value = normal_quantile(p);
      break;
    case CriticalBranch::t_spatial:
      rep.variance = variance;
      rep.critical_value = student_t_quantile(p, sv.folds - 1);
      break;
    case CriticalBranch::t_iid_gate:
      rep.variance = iid_variance(sv);
      rep.critical_value = student_t_quantile(p, sv.folds - 1);
      break;
  }
  const double half = rep.critical_value * std::sqrt(rep.variance.value);
  rep.lo = rep.theta_hat - half;
  rep.hi = rep.theta_hat + half;
  return rep;
}

}  // namespace sdr
