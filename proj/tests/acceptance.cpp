// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "sdr/diagnostics.hpp"
#include "sdr/estimator.hpp"
#include "sdr/harness.hpp"
#include "sdr/nuisance.hpp"
#include "sdr/rng.hpp"
#include "sdr/synthgen.hpp"
#include "sdr/variance.hpp"

using namespace sdr;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(const std::string& id, bool pass, const std::string& detail, double secs) {
  std::printf("%s %s: %s [%.1fs]\n", pass ? "PASS" : "FAIL", id.c_str(), detail.c_str(), secs);
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

Eigen::VectorXd normals(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = z(rng);
  return v;
}

CoordMatrix uniform_coords(Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CoordMatrix c(n, 2);
  for (Index i = 0; i < n; ++i) c.row(i) << u(rng), u(rng);
  return c;
}

CrossfitResult manual_crossfit(const Eigen::VectorXd& m, const Eigen::VectorXd& pi, int folds) {
  CrossfitResult cf;
  cf.m_hat = m;
  cf.pi_hat = pi;
  cf.pi_raw = pi;
  cf.fold_plan.folds = folds;
  cf.fold_plan.assignment.resize(m.size());
  for (Index i = 0; i < m.size(); ++i) cf.fold_plan.assignment(i) = static_cast<int>(i % folds);
  return cf;
}

Eigen::VectorXd clipped_expit(const Eigen::VectorXd& eta, double lo, double hi) {
  return eta.unaryExpr([&](double e) { return std::clamp(1.0 / (1.0 + std::exp(-e)), lo, hi); });
}

// 1. Fold-constant offsets leave the centered quantities unchanged.
void offset_invariance() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    const Index n = 20 + static_cast<Index>(rng() % 60);
    const int k = 2 + static_cast<int>(rng() % 5);
    Eigen::VectorXi fold(n);
    for (Index i = 0; i < n; ++i) fold(i) = static_cast<int>((i + rng() % 2) % k);
    for (int f = 0; f < k; ++f) fold(f) = f;
    Eigen::VectorXi g1(n), g2(n);
    for (Index i = 0; i < n; ++i) {
      g1(i) = static_cast<int>(rng() % 5);
      g2(i) = static_cast<int>(rng() % 7);
    }
    const Eigen::VectorXd psi = normals(n, rng);
    const Eigen::VectorXd a = 10.0 * normals(k, rng);
    Eigen::VectorXd shifted = psi;
    for (Index i = 0; i < n; ++i) shifted(i) += a(fold(i));
    const CoordMatrix c = uniform_coords(n, rng);
    const double h = 0.3;

    const auto c0 = fold_center(psi, fold, k), c1 = fold_center(shifted, fold, k);
    worst = std::max(worst, (c0.centered - c1.centered).cwiseAbs().maxCoeff() /
                                std::max(c0.centered.cwiseAbs().maxCoeff(), 1e-300));
    const auto h0 = hac_within(c0.centered, c, h), h1 = hac_within(c1.centered, c, h);
    worst = std::max({worst, rel(h0.within, h1.within), rel(h0.diag, h1.diag), rel(h0.off, h1.off)});
    worst = std::max(worst, rel(twoway_cgm_variance(c0.centered, g1, g2), twoway_cgm_variance(c1.centered, g1, g2)));
  }
  const double secs = seconds_since(t0);
  report("1 offset invariance", worst <= 1e-12 && secs < 10.0, fmt("max rel err %.2e over 200 instances", worst), secs);
}

// 2. Kernels against explicit loops over every ordered pair.
void oracle_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const Index n = 2 + static_cast<Index>(rng() % 11);
    const Eigen::VectorXd x = normals(n, rng);
    CoordMatrix c = uniform_coords(n, rng);
    if (rep % 5 == 0) c.row(n - 1) = c.row(0);
    const double h = 0.1 + 0.8 * std::uniform_real_distribution<double>(0, 1)(rng);
    Eigen::VectorXi g1(n), g2(n);
    for (Index i = 0; i < n; ++i) {
      g1(i) = static_cast<int>(rng() % 3);
      g2(i) = static_cast<int>(rng() % 4);
    }
    double within = 0, diag = 0;
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const double d = std::hypot(c(i, 0) - c(j, 0), c(i, 1) - c(j, 1));
        const double w = d == 0.0 ? 1.0 : (d < h ? 1.0 - d / h : 0.0);
        within += w * x(i) * x(j);
        if (i == j) diag += x(i) * x(i);
      }
    within /= double(n * n);
    diag /= double(n * n);
    double cgm = 0.0;
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const bool s1 = g1(i) == g1(j), s2 = g2(i) == g2(j);
        cgm += (double(s1) + double(s2) - double(s1 && s2)) * x(i) * x(j);
      }
    cgm /= double(n * n);
    const auto hw = hac_within(x, c, h);
    worst = std::max({worst, rel(hw.within, within), rel(hw.diag, diag), rel(hw.off, within - diag),
                      rel(twoway_cgm_variance(x, g1, g2), cgm)});
  }
  const double secs = seconds_since(t0);
  report("2 oracle equivalence", worst <= 1e-12 && secs < 10.0, fmt("max rel err %.2e over 100 instances", worst), secs);
}

// 3. Either nuisance correct gives an unbiased score mean.
void dr_identification() {
  const auto t0 = Clock::now();
  const Index n = 200000;
  std::mt19937_64 rng(303);
  const Eigen::VectorXd x = normals(n, rng), e = normals(n, rng);
  const Eigen::VectorXd m0 = (1.0 + x.array() + 0.5 * x.array().square()).matrix();
  const Eigen::VectorXd y = m0 + e;
  const double mu_true = 1.5;
  const Eigen::VectorXd pi0 = clipped_expit((-1.0 + 0.8 * x.array()).matrix(), 0.1, 0.9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LabelMask lab(n);
  Eigen::VectorXd outcome(n);
  for (Index i = 0; i < n; ++i) {
    lab(i) = u(rng) < pi0(i);
    outcome(i) = lab(i) ? y(i) : kNaN;
  }
  const CoordMatrix c = uniform_coords(n, rng);
  const SpatialDataset ds(c, x, Eigen::VectorXd::Zero(n), lab, outcome, {"x"});

  auto check = [&](const Eigen::VectorXd& m, const Eigen::VectorXd& pi, double& z) {
    const auto sv = dr_scores(ds, manual_crossfit(m, pi, 5));
    const double mean = sv.scores.mean();
    const double se = std::sqrt((sv.scores.array() - mean).square().sum() / double(n - 1) / double(n));
    z = (mean - mu_true) / se;
    return std::abs(z) <= 3.0;
  };
  double za = 0, zb = 0;
  const bool a = check(Eigen::VectorXd::Zero(n), pi0, za);
  const Eigen::VectorXd pi_bad = clipped_expit((0.5 - 1.2 * x.array()).matrix(), 0.1, 0.9);
  const bool b = check(m0, pi_bad, zb);
  const double secs = seconds_since(t0);
  report("3 DR identification", a && b && secs < 60.0,
         fmt("known pi, m=0: z=%.2f; known m, distorted pi: z=%.2f", za, zb), secs);
}

// 4. Cross-PPI bias tracks Cov(pi, Y-m)/mean(pi).
void crossppi_bias() {
  const auto t0 = Clock::now();
  const Index n = 200000;
  std::mt19937_64 rng(404);
  const Eigen::VectorXd x = normals(n, rng), zres = normals(n, rng);
  const Eigen::VectorXd y = (x + zres).array() + 2.0;
  const double lo = 0.1, hi = 0.9, a0 = -1.5, b0 = 1.0;
  const Eigen::VectorXd pi = clipped_expit((a0 + b0 * zres.array()).matrix(), lo, hi);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LabelMask lab(n);
  Eigen::VectorXd outcome(n);
  for (Index i = 0; i < n; ++i) {
    lab(i) = u(rng) < pi(i);
    outcome(i) = lab(i) ? y(i) : kNaN;
  }
  const SpatialDataset ds(uniform_coords(n, rng), x, x, lab, outcome, {"x"});
  const double bias = crossppi_estimate(ds).point - 2.0;

  // residual Y - m is standard normal; integrate E[pi r] and E[pi] on a fine grid
  double epr = 0.0, ep = 0.0;
  const double step = 1e-4;
  for (double r = -12.0; r <= 12.0; r += step) {
    const double phi = std::exp(-0.5 * r * r) / std::sqrt(2.0 * M_PI) * step;
    const double p = std::clamp(1.0 / (1.0 + std::exp(-(a0 + b0 * r))), lo, hi);
    epr += p * r * phi;
    ep += p * phi;
  }
  const double analytic = epr / ep;
  const double secs = seconds_since(t0);
  const bool pass = bias > 0.0 && analytic > 0.0 && std::abs(bias - analytic) <= 0.15 * analytic && secs < 60.0;
  report("4 Cross-PPI bias", pass, fmt("empirical %.4f, analytic %.4f", bias, analytic), secs);
}

// 5. MAR intercept hits the label budget exactly.
void mar_calibration() {
  const auto t0 = Clock::now();
  double worst_mean = 0.0, pmin = 1.0, pmax = 0.0;
  for (int pop = 0; pop < 50; ++pop) {
    const auto seed = derive_seed(505, {std::uint64_t(pop)});
    const auto g = generate_population(100, 40.0, seed);
    std::vector<Index> all(static_cast<std::size_t>(g.size()));
    std::iota(all.begin(), all.end(), Index{0});
    const auto s = draw_sample(all, g.coords, 600, SamplingMode::soft_block, 0.05, derive_seed(seed, {1}));
    const Index n = static_cast<Index>(s.size());
    Eigen::MatrixXd f(n, 2);
    CoordMatrix c(n, 2);
    Eigen::VectorXd pred(n);
    const Eigen::MatrixXd feats = g.features();
    for (Index i = 0; i < n; ++i) {
      f.row(i) = feats.row(s[static_cast<std::size_t>(i)]);
      c.row(i) = g.coords.row(s[static_cast<std::size_t>(i)]);
      pred(i) = 0.8 * f(i, 0) + f(i, 1);
    }
    const auto mp = mar_propensity(standardize_columns(f), standardize_columns(c), standardize(pred), 1.5, 0.20, 0.10,
                                   0.90);
    worst_mean = std::max(worst_mean, std::abs(mp.pi.mean() - 0.20));
    pmin = std::min(pmin, mp.pi.minCoeff());
    pmax = std::max(pmax, mp.pi.maxCoeff());
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_mean <= 1e-6 && pmin >= 0.10 && pmax <= 0.90 && secs < 30.0;
  report("5 MAR calibration", pass, fmt("max |mean-0.2| %.1e, pi range [%.3f, %.3f]", worst_mean, pmin, pmax), secs);
}

// 6. Gate rejection rate under iid residuals.
void moran_null() {
  const auto t0 = Clock::now();
  const int trials = 500;
  const double level = 0.05;
  int rejections = 0;
  for (int t = 0; t < trials; ++t) {
    std::mt19937_64 rng(derive_seed(606, {std::uint64_t(t)}));
    const Index n = 600;
    const CoordMatrix c = uniform_coords(n, rng);
    const Eigen::VectorXd e = normals(n, rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    LabelMask lab(n);
    Eigen::VectorXd outcome(n);
    for (Index i = 0; i < n; ++i) {
      lab(i) = u(rng) < 0.2;
      outcome(i) = lab(i) ? e(i) : kNaN;
    }
    const SpatialDataset ds(c, Eigen::MatrixXd::Zero(n, 1), Eigen::VectorXd::Zero(n), lab, outcome, {"x"});
    const auto cf = manual_crossfit(Eigen::VectorXd::Zero(n), Eigen::VectorXd::Constant(n, 0.2), 5);
    if (moran_gate(ds, cf, 0.10, 199, level, derive_seed(606, {std::uint64_t(t), 1})).spatial) ++rejections;
  }
  const double rate = double(rejections) / trials;
  const double secs = seconds_since(t0);
  report("6 Moran null calibration", std::abs(rate - level) <= 0.04 && secs < 120.0,
         fmt("rejection rate %.3f at level %.2f", rate, level), secs);
}

// -- Monte Carlo cells -------------------------------------------------------

int worker_threads() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

ExperimentConfig grid_profile() {
  ExperimentConfig c;
  c.populations = 20;
  c.draws = 50;
  c.h_q = 0.002;
  c.jk_t_critical = true;
  c.seed = 2024;
  c.threads = worker_threads();
  return c;
}

struct Cell {
  const SummaryRow* row;
  double cov() const { return row ? row->coverage : kNaN; }
  double width() const { return row ? row->mean_width : kNaN; }
};

bool in(double v, double lo, double hi) { return v >= lo && v <= hi; }

void calm_cell() {
  const auto t0 = Clock::now();
  auto cfg = grid_profile();
  cfg.params = {0.0};
  const auto s = aggregate(run_experiment(cfg));
  bool pass = true;
  std::string detail;
  for (Method m : cfg.methods) {
    const Cell c{find_cell(s, 0.0, SamplingMode::iid, LabelMode::mcar, m)};
    pass = pass && in(c.cov(), 0.85, 0.95);
    detail += fmt("%s %.3f ", to_string(m).c_str(), c.cov());
  }
  const double secs = seconds_since(t0);
  report("8 calm cell", pass && secs < 600.0, detail, secs);
}

void sigma120_cells() {
  const auto t0 = Clock::now();
  auto cfg = grid_profile();
  cfg.params = {120.0};
  cfg.samplings = {SamplingMode::iid, SamplingMode::soft_block};
  cfg.arms = {LabelMode::mcar, LabelMode::mar};
  const auto s = aggregate(run_experiment(cfg));
  const double secs = seconds_since(t0);
  auto cell = [&](SamplingMode sm, LabelMode a, Method m) { return Cell{find_cell(s, 120.0, sm, a, m)}; };

  const auto sb = SamplingMode::soft_block;
  const Cell jk_mcar = cell(sb, LabelMode::mcar, Method::dr_jk_hac), jk_mar = cell(sb, LabelMode::mar, Method::dr_jk_hac);
  const Cell cp_mcar = cell(sb, LabelMode::mcar, Method::crossppi), cp_mar = cell(sb, LabelMode::mar, Method::crossppi);
  const Cell iid_mar = cell(sb, LabelMode::mar, Method::dr_iid), hac_mar = cell(sb, LabelMode::mar, Method::dr_hac);

  report("7a hardest cell DR-JK-HAC coverage", in(jk_mcar.cov(), 0.85, 0.96) && in(jk_mar.cov(), 0.85, 0.96),
         fmt("MCAR %.3f, MAR %.3f", jk_mcar.cov(), jk_mar.cov()), secs);
  report("7b hardest cell Cross-PPI coverage", cp_mar.cov() <= 0.60 && in(cp_mcar.cov(), 0.74, 0.88),
         fmt("MAR %.3f, MCAR %.3f", cp_mar.cov(), cp_mcar.cov()), secs);
  report("7c hardest cell MAR coverage ordering",
         in(iid_mar.cov(), 0.74, 0.90) && iid_mar.cov() < hac_mar.cov() && hac_mar.cov() < jk_mar.cov(),
         fmt("DR-iid %.3f < DR-HAC %.3f < DR-JK-HAC %.3f", iid_mar.cov(), hac_mar.cov(), jk_mar.cov()), secs);
  const double ratio = jk_mar.width() / cp_mar.width();
  report("7d hardest cell MAR widths",
         jk_mar.width() > hac_mar.width() && hac_mar.width() > iid_mar.width() && ratio >= 1.3,
         fmt("JK %.3f > HAC %.3f > iid %.3f, JK/Cross-PPI %.2f", jk_mar.width(), hac_mar.width(), iid_mar.width(),
             ratio),
         secs);
  report("7e hardest cell runtime", secs < 1800.0, fmt("four sigma=120 cells in %.0f s", secs), secs);

  const Cell cp_iid = cell(SamplingMode::iid, LabelMode::mar, Method::crossppi);
  const Cell jk_iid = cell(SamplingMode::iid, LabelMode::mar, Method::dr_jk_hac);
  report("9 MAR-iid cell", cp_iid.cov() <= 0.60 && in(jk_iid.cov(), 0.85, 0.96),
         fmt("Cross-PPI %.3f, DR-JK-HAC %.3f", cp_iid.cov(), jk_iid.cov()), secs);
}

void twoway_cell() {
  const auto t0 = Clock::now();
  ExperimentConfig cfg;
  cfg.design = Design::twoway;
  cfg.params = {0.0};
  cfg.arms = {LabelMode::mar};
  cfg.methods = {Method::crossppi, Method::dr_2way, Method::dr_jk_2way};
  cfg.populations = 20;
  cfg.draws = 50;
  cfg.seed = 2024;
  cfg.threads = worker_threads();
  const auto s = aggregate(run_experiment(cfg));
  auto cell = [&](Method m) { return Cell{find_cell(s, 0.0, SamplingMode::iid, LabelMode::mar, m)}; };
  const Cell cp = cell(Method::crossppi), pl = cell(Method::dr_2way), jk = cell(Method::dr_jk_2way);
  const double wr = jk.width() / pl.width();
  const double secs = seconds_since(t0);
  const bool pass = cp.cov() < jk.cov() && jk.cov() < pl.cov() && in(jk.cov(), 0.78, 0.92) && std::abs(wr - 1.0) <= 0.05 &&
                    secs < 900.0;
  report("10 two-way extension", pass,
         fmt("coverage Cross-PPI %.3f < JK-2way %.3f < plug-in %.3f; width ratio %.3f", cp.cov(), jk.cov(), pl.cov(),
             wr),
         secs);
}

}  // namespace

int main() {
  offset_invariance();
  oracle_equivalence();
  dr_identification();
  crossppi_bias();
  mar_calibration();
  moran_null();
  calm_cell();
  sigma120_cells();
  twoway_cell();
  std::printf("%s: %d failing criteria\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
