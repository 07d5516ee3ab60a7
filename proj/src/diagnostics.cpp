#include "sdr/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sdr/rng.hpp"

namespace sdr {

KernelWeights kernel_weights(const CoordMatrix& coords, double h_n) {
  if (!(h_n >= 0.0)) throw ParameterError("kernel bandwidth must be nonnegative");
  const Index m = coords.rows();
  KernelWeights k;
  k.w = Eigen::MatrixXd::Zero(m, m);
  for (Index i = 0; i < m; ++i)
    for (Index j = i + 1; j < m; ++j) {
      const double d = (coords.row(i) - coords.row(j)).norm();
      const double v = d == 0.0 ? 1.0 : (h_n > 0.0 ? triangular_kernel(d / h_n) : 0.0);
      k.w(i, j) = v;
      k.w(j, i) = v;
    }
  k.s0 = k.w.sum();
  return k;
}

double morans_i(const Eigen::VectorXd& residuals, const KernelWeights& weights) {
  const Index m = residuals.size();
  if (m < 3) throw InsufficientDataError("Moran's I needs at least three residuals");
  if (weights.w.rows() != m) throw ParameterError("weight matrix does not match residuals");
  const Eigen::VectorXd r = residuals.array() - residuals.mean();
  const double ss = r.squaredNorm();
  if (!(ss > 1e-300)) throw ZeroVarianceError("Moran's I is undefined for constant residuals");
  if (!(weights.s0 > 0.0)) throw InsufficientDataError("no pairs with positive weight at this bandwidth");
  return static_cast<double>(m) / weights.s0 * r.dot(weights.w * r) / ss;
}

double morans_i(const Eigen::VectorXd& residuals, const CoordMatrix& coords, double h_n) {
  if (residuals.size() < 3) throw InsufficientDataError("Moran's I needs at least three residuals");
  return morans_i(residuals, kernel_weights(coords, h_n));
}

double permutation_pvalue(const std::function<double(const Eigen::VectorXd&)>& statistic,
                          const Eigen::VectorXd& residuals, int draws, std::uint64_t seed) {
  if (draws < 19) throw ParameterError("permutation test needs at least 19 draws");
  const double observed = statistic(residuals);
  Rng rng(seed);
  Eigen::VectorXd perm = residuals;
  int exceed = 0;
  for (int b = 0; b < draws; ++b) {
    std::shuffle(perm.data(), perm.data() + perm.size(), rng);
    if (statistic(perm) >= observed) ++exceed;
  }
  return (1.0 + exceed) / (draws + 1.0);
}

Eigen::VectorXi nearest_neighbors(const CoordMatrix& coords) {
  const Index m = coords.rows();
  if (m < 2) throw InsufficientDataError("nearest neighbors need at least two points");
  Eigen::VectorXi nn(m);
  for (Index i = 0; i < m; ++i) {
    double best = std::numeric_limits<double>::infinity();
    Index arg = -1;
    for (Index j = 0; j < m; ++j) {
      if (j == i) continue;
      const double d = (coords.row(i) - coords.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    nn(i) = static_cast<int>(arg);
  }
  return nn;
}

double pearson_correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd ac = a.array() - a.mean();
  const Eigen::VectorXd bc = b.array() - b.mean();
  const double den = std::sqrt(ac.squaredNorm() * bc.squaredNorm());
  if (!(den > 1e-300)) throw ZeroVarianceError("correlation is undefined for constant input");
  return ac.dot(bc) / den;
}

double nn_residual_correlation(const Eigen::VectorXd& residuals, const Eigen::VectorXi& nn) {
  const Index m = residuals.size();
  if (m < 3) throw InsufficientDataError("nearest-neighbor correlation needs at least three residuals");
  Eigen::VectorXd partner(m);
  for (Index i = 0; i < m; ++i) partner(i) = residuals(nn(i));
  return pearson_correlation(residuals, partner);
}

double nn_residual_correlation(const Eigen::VectorXd& residuals, const CoordMatrix& coords) {
  if (residuals.size() < 3) throw InsufficientDataError("nearest-neighbor correlation needs at least three residuals");
  return nn_residual_correlation(residuals, nearest_neighbors(coords));
}

std::vector<VariogramBin> semivariogram(const Eigen::VectorXd& residuals, const CoordMatrix& coords, int bins) {
  if (bins < 2) throw ParameterError("semivariogram needs at least two bins");
  const Index m = residuals.size();
  if (coords.rows() != m) throw ParameterError("coordinates do not match residuals");
  double dmax = 0.0;
  for (Index i = 0; i < m; ++i)
    for (Index j = i + 1; j < m; ++j) dmax = std::max(dmax, (coords.row(i) - coords.row(j)).norm());
  std::vector<VariogramBin> out;
  if (!(dmax > 0.0)) return out;
  const double width = dmax / bins;
  std::vector<double> sum(static_cast<std::size_t>(bins), 0.0);
  std::vector<std::size_t> cnt(static_cast<std::size_t>(bins), 0);
  for (Index i = 0; i < m; ++i)
    for (Index j = i + 1; j < m; ++j) {
      const double d = (coords.row(i) - coords.row(j)).norm();
      if (!(d > 0.0)) continue;
      auto b = static_cast<int>(std::ceil(d / width)) - 1;
      b = std::clamp(b, 0, bins - 1);
      const double diff = residuals(i) - residuals(j);
      sum[static_cast<std::size_t>(b)] += diff * diff;
      ++cnt[static_cast<std::size_t>(b)];
    }
  for (int b = 0; b < bins; ++b) {
    const auto u = static_cast<std::size_t>(b);
    if (cnt[u] == 0) continue;
    VariogramBin v;
    v.lo = b * width;
    v.hi = (b + 1) * width;
    v.center = (b + 0.5) * width;
    v.pairs = cnt[u];
    v.gamma = 0.5 * sum[u] / static_cast<double>(cnt[u]);
    out.push_back(v);
  }
  return out;
}

namespace {
double q05(Eigen::VectorXd v) {
  std::vector<double> x(v.data(), v.data() + v.size());
  return nearest_rank_quantile(x, 0.05);
}
}  // namespace

OverlapReport overlap_report(const std::optional<Eigen::VectorXd>& design_pi, const Eigen::VectorXd& estimated_pi_raw,
                             const LabelMask& labeled, double pi_min) {
  const Index n = estimated_pi_raw.size();
  if (labeled.size() != n) throw ParameterError("label mask does not match propensities");
  if (!(pi_min > 0.0 && pi_min < 0.5)) throw ParameterError("pi_min must lie in (0, 0.5)");
  if (design_pi && design_pi->size() != n) throw ParameterError("design propensities do not match");
  const Index nl = labeled.count();
  if (nl == 0) throw InsufficientDataError("overlap report needs at least one labeled unit");

  OverlapReport rep;
  rep.n_labeled = nl;
  const Eigen::VectorXd clipped = estimated_pi_raw.cwiseMax(pi_min).cwiseMin(1.0 - pi_min);
  Index outside = 0;
  for (Index i = 0; i < n; ++i)
    if (estimated_pi_raw(i) < pi_min || estimated_pi_raw(i) > 1.0 - pi_min) ++outside;
  rep.clip_rate = static_cast<double>(outside) / static_cast<double>(n);
  rep.pi_q05_estimated = q05(clipped);
  if (design_pi) rep.pi_q05_design = q05(*design_pi);

  double sw = 0.0, sw2 = 0.0;
  for (Index i = 0; i < n; ++i)
    if (labeled(i)) {
      const double w = 1.0 / clipped(i);
      sw += w;
      sw2 += w * w;
    }
  rep.ess = sw * sw / sw2;
  rep.ess_ratio = rep.ess / static_cast<double>(nl);
  return rep;
}

}  // namespace sdr
