#include "sdr/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdr/rng.hpp"

namespace sdr {

Eigen::VectorXd standardize(const Eigen::VectorXd& v) {
  const double m = v.mean();
  const Eigen::VectorXd c = v.array() - m;
  const double sd = std::sqrt(c.squaredNorm() / static_cast<double>(v.size()));
  if (!(sd > 1e-300)) return Eigen::VectorXd::Zero(v.size());
  return c / sd;
}

Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (Index j = 0; j < m.cols(); ++j) out.col(j) = standardize(m.col(j));
  return out;
}

Eigen::VectorXd smooth_field(int side, double sigma, std::uint64_t seed) {
  if (side < 1) throw ParameterError("grid side must be positive");
  if (!(sigma >= 0.0)) throw ParameterError("smoothing radius must be nonnegative");
  if (sigma >= side) throw ParameterError("smoothing radius must be smaller than the grid side");
  const Index n = static_cast<Index>(side) * side;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd raw(n);
  for (Index i = 0; i < n; ++i) raw(i) = normal(rng);
  if (sigma == 0.0) return standardize(raw);

  // row prefix sums: prefix(r, c) = sum of raw over columns [0, c) of row r
  Eigen::MatrixXd prefix = Eigen::MatrixXd::Zero(side, side + 1);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) prefix(r, c + 1) = prefix(r, c) + raw(static_cast<Index>(r) * side + c);

  const int reach = static_cast<int>(std::floor(sigma));
  std::vector<int> half(static_cast<std::size_t>(2 * reach + 1));
  for (int dy = -reach; dy <= reach; ++dy)
    half[static_cast<std::size_t>(dy + reach)] =
        static_cast<int>(std::floor(std::sqrt(std::max(0.0, sigma * sigma - double(dy) * dy)) + 1e-12));

  Eigen::VectorXd out(n);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      double sum = 0.0;
      long count = 0;
      for (int dy = std::max(-reach, -r); dy <= std::min(reach, side - 1 - r); ++dy) {
        const int hw = half[static_cast<std::size_t>(dy + reach)];
        const int lo = std::max(0, c - hw);
        const int hi = std::min(side - 1, c + hw);
        sum += prefix(r + dy, hi + 1) - prefix(r + dy, lo);
        count += hi - lo + 1;
      }
      out(static_cast<Index>(r) * side + c) = sum / static_cast<double>(count);
    }
  }
  return standardize(out);
}

Eigen::MatrixXd GridPopulation::features() const {
  Eigen::MatrixXd f(size(), 2);
  f.col(0) = x_field;
  f.col(1) = u_obs;
  return f;
}

GridPopulation generate_population(int side, double sigma, std::uint64_t seed, const GridDgp& dgp) {
  if (side < 8) throw ParameterError("grid side must be at least 8");
  GridPopulation pop;
  pop.side = side;
  pop.sigma = sigma;
  pop.dgp = dgp;
  pop.mu_true = dgp.mu;
  const Index n = static_cast<Index>(side) * side;
  pop.coords.resize(n, 2);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const Index i = static_cast<Index>(r) * side + c;
      pop.coords(i, 0) = static_cast<double>(c) / (side - 1);
      pop.coords(i, 1) = static_cast<double>(r) / (side - 1);
    }
  pop.x_field = smooth_field(side, dgp.x_radius, derive_seed(seed, {11}));
  pop.u_obs = smooth_field(side, sigma, derive_seed(seed, {12}));
  pop.u_unobs = smooth_field(side, sigma, derive_seed(seed, {13}));
  Rng rng(derive_seed(seed, {14}));
  std::normal_distribution<double> normal(0.0, dgp.noise_sd);
  pop.noise.resize(n);
  for (Index i = 0; i < n; ++i) pop.noise(i) = normal(rng);
  pop.y = (dgp.mu + dgp.beta * pop.x_field.array() + dgp.lambda * pop.u_obs.array() +
           dgp.lambda * pop.u_unobs.array() + pop.noise.array())
              .matrix();
  return pop;
}

GbtParams default_base_predictor_params() {
  GbtParams p;
  p.loss = GbtLoss::squared;
  p.trees = 35;
  p.depth = 3;
  p.rate = 0.1;
  p.min_leaf = 20;
  p.max_bins = 64;
  return p;
}

BasePrediction fit_base_predictor(const GridPopulation& pop, double aux_frac, std::uint64_t seed,
                                  const GbtParams& params) {
  if (!(aux_frac > 0.0 && aux_frac < 1.0)) throw ParameterError("auxiliary fraction must lie in (0,1)");
  const Index n = pop.size();
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(derive_seed(seed, {stream::base_predictor}));
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_aux = static_cast<std::size_t>(std::llround(aux_frac * static_cast<double>(n)));
  if (n_aux == 0 || n_aux >= perm.size()) throw ParameterError("auxiliary split leaves an empty side");

  BasePrediction bp;
  bp.auxiliary.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_aux));
  bp.analysis.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_aux), perm.end());
  std::sort(bp.auxiliary.begin(), bp.auxiliary.end());
  std::sort(bp.analysis.begin(), bp.analysis.end());

  Eigen::MatrixXd design(n, 4);
  design.col(0) = pop.x_field;
  design.col(1) = pop.u_obs;
  design.rightCols(2) = pop.coords;

  const auto na = static_cast<Index>(bp.auxiliary.size());
  Eigen::MatrixXd xa(na, 4);
  Eigen::VectorXd ya(na);
  for (Index a = 0; a < na; ++a) {
    xa.row(a) = design.row(bp.auxiliary[static_cast<std::size_t>(a)]);
    ya(a) = pop.y(bp.auxiliary[static_cast<std::size_t>(a)]);
  }
  const Eigen::RowVectorXd mean = xa.colwise().mean();
  Eigen::RowVectorXd sd = ((xa.rowwise() - mean).cwiseAbs2().colwise().sum() / static_cast<double>(na)).cwiseSqrt();
  for (Index j = 0; j < sd.size(); ++j)
    if (!(sd(j) > 0)) sd(j) = 1.0;
  auto scale = [&](const Eigen::MatrixXd& m) -> Eigen::MatrixXd {
    return (m.rowwise() - mean).array().rowwise() / sd.array();
  };

  GbtParams p = params;
  p.loss = GbtLoss::squared;
  p.seed = derive_seed(seed, {stream::base_predictor, 1});
  const GbtModel model = fit_gbt(scale(xa), ya, p);

  const auto nv = static_cast<Index>(bp.analysis.size());
  Eigen::MatrixXd xv(nv, 4);
  for (Index a = 0; a < nv; ++a) xv.row(a) = design.row(bp.analysis[static_cast<std::size_t>(a)]);
  bp.pred = model.predict(scale(xv));
  return bp;
}

std::string to_string(SamplingMode m) { return m == SamplingMode::iid ? "iid" : "soft_block"; }

SamplingMode parse_sampling_mode(const std::string& s) {
  if (s == "iid") return SamplingMode::iid;
  if (s == "block" || s == "soft_block" || s == "soft-block") return SamplingMode::soft_block;
  throw ParameterError("unknown sampling mode '" + s + "' (expected iid or block)");
}

std::vector<Index> draw_sample(const std::vector<Index>& pool, const CoordMatrix& coords, Index n, SamplingMode mode,
                               double core_frac, std::uint64_t seed) {
  const auto size = static_cast<Index>(pool.size());
  if (n < 0 || n > size) throw ParameterError("sample size " + std::to_string(n) + " exceeds pool size " +
                                              std::to_string(size));
  if (!(core_frac >= 0.0 && core_frac <= 1.0)) throw ParameterError("core fraction must lie in [0,1]");
  Rng rng(seed);
  std::vector<Index> rest = pool;
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(n));

  const auto core = mode == SamplingMode::soft_block
                        ? static_cast<Index>(std::llround(core_frac * static_cast<double>(n)))
                        : Index{0};
  if (core > 0) {
    std::uniform_int_distribution<Index> pick(0, size - 1);
    const Index anchor = pool[static_cast<std::size_t>(pick(rng))];
    std::vector<std::pair<double, Index>> d;
    d.reserve(pool.size());
    for (Index i : pool) d.emplace_back((coords.row(i) - coords.row(anchor)).squaredNorm(), i);
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(core), d.end());
    std::vector<Index> chosen;
    for (Index k = 0; k < core; ++k) chosen.push_back(d[static_cast<std::size_t>(k)].second);
    out = chosen;
    std::sort(chosen.begin(), chosen.end());
    rest.clear();
    std::set_difference(pool.begin(), pool.end(), chosen.begin(), chosen.end(), std::back_inserter(rest));
    if (static_cast<Index>(rest.size()) != size - core) {
      // pool was not sorted; fall back to a membership scan
      rest.clear();
      for (Index i : pool)
        if (!std::binary_search(chosen.begin(), chosen.end(), i)) rest.push_back(i);
    }
  }
  const Index need = n - core;
  const auto rs = static_cast<Index>(rest.size());
  for (Index t = 0; t < need; ++t) {
    std::uniform_int_distribution<Index> pick(t, rs - 1);
    std::swap(rest[static_cast<std::size_t>(t)], rest[static_cast<std::size_t>(pick(rng))]);
    out.push_back(rest[static_cast<std::size_t>(t)]);
  }
  return out;
}

Eigen::VectorXd mar_score(const Eigen::MatrixXd& features_z, const CoordMatrix& coords_z, const Eigen::VectorXd& pred_z,
                          double strength) {
  const Index n = pred_z.size();
  if (features_z.rows() != n || coords_z.rows() != n) throw ParameterError("MAR inputs must share length n");
  auto f = [&](Index i, Index j) { return j < features_z.cols() ? features_z(i, j) : 0.0; };
  const double s = strength / 1.5;
  Eigen::VectorXd score(n);
  for (Index i = 0; i < n; ++i) {
    const double f1 = f(i, 0), f2 = f(i, 1), f3 = f(i, 2);
    const double c1 = coords_z(i, 0), c2 = coords_z(i, 1);
    score(i) = s * (1.425 * f1 + 1.125 * f2 + 0.525 * f3 + 0.825 * c1 - 0.825 * c2 + 0.600 * f1 * c1 +
                    0.525 * c1 * c2 + 0.450 * f2 * c2 + 1.350 * pred_z(i));
  }
  return score;
}

MarPropensity mar_propensity(const Eigen::MatrixXd& features_z, const CoordMatrix& coords_z,
                             const Eigen::VectorXd& pred_z, double strength, double target_rate, double floor,
                             double ceil) {
  if (!(floor < ceil)) throw ParameterError("propensity floor must be below the ceiling");
  if (!(target_rate > floor && target_rate < ceil))
    throw InfeasibleTargetError("target label rate must lie strictly between the propensity floor and ceiling");
  MarPropensity out;
  out.score = mar_score(features_z, coords_z, pred_z, strength);
  const Index n = out.score.size();
  if (n == 0) throw InsufficientDataError("MAR propensity needs at least one unit");

  auto mean_pi = [&](double a) {
    double s = 0.0;
    for (Index i = 0; i < n; ++i) s += std::clamp(expit(a + out.score(i)), floor, ceil);
    return s / static_cast<double>(n);
  };
  const double span = out.score.cwiseAbs().maxCoeff() + 40.0;
  double lo = -span, hi = span;
  if (!(mean_pi(lo) < target_rate && mean_pi(hi) > target_rate))
    throw SolverError("bisection for the MAR intercept does not bracket the target");
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < 300; ++it) {
    mid = 0.5 * (lo + hi);
    const double m = mean_pi(mid);
    if (std::abs(m - target_rate) <= 1e-12 || hi - lo < 1e-14) break;
    (m < target_rate ? lo : hi) = mid;
  }
  out.alpha = mid;
  if (std::abs(mean_pi(mid) - target_rate) > 1e-6) throw SolverError("bisection for the MAR intercept did not converge");
  out.pi.resize(n);
  for (Index i = 0; i < n; ++i) out.pi(i) = std::clamp(expit(mid + out.score(i)), floor, ceil);
  return out;
}

std::string to_string(LabelMode m) { return m == LabelMode::mcar ? "mcar" : "mar"; }

LabelMode parse_label_mode(const std::string& s) {
  if (s == "mcar" || s == "MCAR") return LabelMode::mcar;
  if (s == "mar" || s == "MAR") return LabelMode::mar;
  throw ParameterError("unknown label arm '" + s + "' (expected mcar or mar)");
}

LabelMask assign_labels(const Eigen::VectorXd& pi, LabelMode mode, double target_rate, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LabelMask r(pi.size());
  for (Index i = 0; i < pi.size(); ++i) {
    const double p = mode == LabelMode::mcar ? target_rate : pi(i);
    r(i) = u(rng) < p;
  }
  return r;
}

TwoWayPopulation generate_twoway_population(Index n, int g1_count, int g2_count, double dep_scale, std::uint64_t seed,
                                            const TwoWayDgp& dgp) {
  if (n < 1) throw ParameterError("two-way population needs n >= 1");
  if (g1_count < 1 || g2_count < 1) throw ParameterError("cluster counts must be at least 1");
  if (!(dep_scale >= 0.0)) throw ParameterError("dep_scale must be nonnegative");
  TwoWayPopulation pop;
  pop.dep_scale = dep_scale;
  pop.mu_true = dgp.mu;
  pop.dgp = dgp;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> c1(0, g1_count - 1), c2(0, g2_count - 1);
  pop.u.resize(g1_count);
  pop.v.resize(g2_count);
  for (int g = 0; g < g1_count; ++g) pop.u(g) = dep_scale * normal(rng);
  for (int g = 0; g < g2_count; ++g) pop.v(g) = dep_scale * normal(rng);
  pop.g1.resize(n);
  pop.g2.resize(n);
  pop.x.resize(n);
  pop.noise.resize(n);
  pop.pred.resize(n);
  pop.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    pop.g1(i) = c1(rng);
    pop.g2(i) = c2(rng);
    pop.x(i) = normal(rng);
    pop.noise(i) = dgp.noise_sd * normal(rng);
    pop.pred(i) = dgp.pred_slope * pop.x(i) + dgp.pred_noise_sd * normal(rng);
    pop.y(i) = dgp.mu + dgp.beta * pop.x(i) + pop.u(pop.g1(i)) + pop.v(pop.g2(i)) + pop.noise(i);
  }
  return pop;
}

}  // namespace sdr
