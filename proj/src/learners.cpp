#include "sdr/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sdr/rng.hpp"

namespace sdr {

double expit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

// -- ridge -------------------------------------------------------------------

namespace {

LinearModel fit_ridge_weighted(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                               const Eigen::VectorXd& weights, double lambda) {
  const Index n = design.rows();
  const Index q = design.cols();
  if (n < 1) throw InsufficientDataError("fit_ridge needs at least one row");
  if (targets.size() != n) throw ParameterError("fit_ridge: target length does not match design rows");
  if (!(lambda >= 0.0)) throw ParameterError("fit_ridge: lambda must be nonnegative");
  if (!design.allFinite() || !targets.allFinite()) throw DomainError("fit_ridge: non-finite input");

  Eigen::VectorXd w = weights.size() == n ? weights : Eigen::VectorXd::Ones(n);
  const double wsum = w.sum();
  if (!(wsum > 0)) throw ParameterError("fit_ridge: weights must have positive sum");
  const Eigen::RowVectorXd xbar = (w.asDiagonal() * design).colwise().sum() / wsum;
  const double ybar = w.dot(targets) / wsum;

  LinearModel m;
  m.coef = Eigen::VectorXd::Zero(q);
  if (q > 0) {
    const Eigen::VectorXd sw = w.array().sqrt();
    const Eigen::MatrixXd xc = sw.asDiagonal() * (design.rowwise() - xbar);
    const Eigen::VectorXd yc = sw.array() * (targets.array() - ybar);
    if (lambda == 0.0) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xc);
      if (qr.rank() < q)
        throw RankError("fit_ridge: centered design is rank deficient (rank " + std::to_string(qr.rank()) + " < " +
                        std::to_string(q) + ") with lambda = 0");
      m.coef = qr.solve(yc);
    } else {
      Eigen::MatrixXd gram = xc.transpose() * xc;
      gram.diagonal().array() += lambda;
      m.coef = gram.llt().solve(xc.transpose() * yc);
    }
  }
  m.intercept = ybar - xbar.dot(m.coef);
  return m;
}

}  // namespace

LinearModel fit_ridge(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets, double lambda) {
  return fit_ridge_weighted(design, targets, Eigen::VectorXd(), lambda);
}

// -- logistic ----------------------------------------------------------------

Eigen::VectorXd LogisticModel::predict_proba(const Eigen::MatrixXd& design) const {
  Eigen::VectorXd eta = linear.predict(design);
  return eta.unaryExpr([](double v) { return expit(v); });
}

namespace {

LogisticModel fit_logistic_weighted(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                                    const Eigen::VectorXd& weights, int max_iter, double tol, double ridge) {
  const Index n = design.rows();
  const Index q = design.cols();
  if (n < 1) throw InsufficientDataError("fit_logistic needs at least one row");
  if (labels.size() != n) throw ParameterError("fit_logistic: label length does not match design rows");
  if (!(ridge > 0.0)) throw ParameterError("fit_logistic: ridge must be positive");
  const Eigen::VectorXd w = weights.size() == n ? weights : Eigen::VectorXd::Ones(n);

  Eigen::MatrixXd a(n, q + 1);
  a.col(0).setOnes();
  a.rightCols(q) = design;

  auto objective = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = a * beta;
    double ll = 0.0;
    for (Index i = 0; i < n; ++i) {
      // log(1 + e^eta) computed stably
      const double e = eta(i);
      const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
      ll += w(i) * (labels(i) * e - softplus);
    }
    return ll - 0.5 * ridge * beta.squaredNorm();
  };

  LogisticModel out;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(q + 1);
  double obj = objective(beta);
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd eta = a * beta;
    Eigen::VectorXd p(n), h(n);
    for (Index i = 0; i < n; ++i) {
      p(i) = expit(eta(i));
      h(i) = std::max(w(i) * p(i) * (1.0 - p(i)), 1e-12 * w(i));
    }
    const Eigen::VectorXd grad = a.transpose() * (w.array() * (labels - p).array()).matrix() - ridge * beta;
    Eigen::MatrixXd hess = a.transpose() * h.asDiagonal() * a;
    hess.diagonal().array() += ridge;
    Eigen::VectorXd step = hess.ldlt().solve(grad);

    double scale = 1.0;
    Eigen::VectorXd next = beta + step;
    double next_obj = objective(next);
    while (next_obj < obj - 1e-12 * std::abs(obj) && scale > 1e-8) {
      scale *= 0.5;
      next = beta + scale * step;
      next_obj = objective(next);
    }
    const double change = (scale * step).cwiseAbs().maxCoeff();
    beta = next;
    obj = next_obj;
    out.iterations = it + 1;
    if (change < tol) {
      out.converged = true;
      break;
    }
  }
  out.linear.intercept = beta(0);
  out.linear.coef = beta.tail(q);

  const double lmin = labels.minCoeff(), lmax = labels.maxCoeff();
  const Eigen::VectorXd p = out.predict_proba(design);
  const double max_err = (labels - p).cwiseAbs().maxCoeff();
  out.separation = lmin == lmax || max_err < 0.01 || !out.converged;
  return out;
}

}  // namespace

LogisticModel fit_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels, int max_iter, double tol,
                           double ridge) {
  return fit_logistic_weighted(design, labels, Eigen::VectorXd(), max_iter, tol, ridge);
}

// -- gradient boosted trees --------------------------------------------------

double RegressionTree::predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  int at = 0;
  while (nodes[static_cast<std::size_t>(at)].feature >= 0) {
    const Node& nd = nodes[static_cast<std::size_t>(at)];
    at = x(nd.feature) <= nd.threshold ? nd.left : nd.right;
  }
  return nodes[static_cast<std::size_t>(at)].value;
}

Eigen::VectorXd GbtModel::predict_raw(const Eigen::MatrixXd& design) const {
  Eigen::VectorXd out = Eigen::VectorXd::Constant(design.rows(), base_);
  for (Index i = 0; i < design.rows(); ++i) {
    double s = 0.0;
    for (const auto& t : trees_) s += t.predict_row(design.row(i));
    out(i) += rate_ * s;
  }
  return out;
}

Eigen::VectorXd GbtModel::predict(const Eigen::MatrixXd& design) const {
  Eigen::VectorXd raw = predict_raw(design);
  if (loss_ == GbtLoss::logistic) return raw.unaryExpr([](double v) { return expit(v); });
  return raw;
}

namespace {

// Per-feature cut points. Bin b holds x <= cuts[b] (and > cuts[b-1]); the last
// bin holds everything above the last cut.
struct Binning {
  std::vector<std::vector<double>> cuts;
  Eigen::Matrix<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic> bins;  // n x q

  int bin_count(Index f) const { return static_cast<int>(cuts[static_cast<std::size_t>(f)].size()) + 1; }
};

Binning make_binning(const Eigen::MatrixXd& x, int max_bins) {
  const Index n = x.rows(), q = x.cols();
  Binning b;
  b.cuts.resize(static_cast<std::size_t>(q));
  b.bins.resize(n, q);
  for (Index f = 0; f < q; ++f) {
    std::vector<double> v(x.col(f).data(), x.col(f).data() + n);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    auto& cuts = b.cuts[static_cast<std::size_t>(f)];
    if (static_cast<int>(v.size()) <= max_bins) {
      for (std::size_t k = 0; k + 1 < v.size(); ++k) cuts.push_back(0.5 * (v[k] + v[k + 1]));
    } else {
      std::vector<double> all(x.col(f).data(), x.col(f).data() + n);
      std::sort(all.begin(), all.end());
      for (int k = 1; k < max_bins; ++k) {
        const auto pos = static_cast<std::size_t>(static_cast<double>(k) * static_cast<double>(n) / max_bins);
        const double lo = all[std::min(pos, all.size() - 1)];
        auto it = std::upper_bound(v.begin(), v.end(), lo);
        if (it == v.end()) break;
        const double cut = 0.5 * (lo + *it);
        if (cuts.empty() || cut > cuts.back()) cuts.push_back(cut);
      }
    }
    for (Index i = 0; i < n; ++i) {
      auto it = std::lower_bound(cuts.begin(), cuts.end(), x(i, f));
      b.bins(i, f) = static_cast<std::uint16_t>(it - cuts.begin());
    }
  }
  return b;
}

struct TreeBuilder {
  const Binning& bin;
  const Eigen::VectorXd& grad;
  const Eigen::VectorXd& hess;
  int max_depth;
  Index min_leaf;
  RegressionTree tree;

  int grow(std::vector<Index>& rows, int depth) {
    double g = 0.0, h = 0.0;
    for (Index i : rows) {
      g += grad(i);
      h += hess(i);
    }
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes.back().value = h > 1e-12 ? g / h : 0.0;
    if (depth >= max_depth || static_cast<Index>(rows.size()) < 2 * min_leaf) return id;

    const double parent = h > 1e-12 ? g * g / h : 0.0;
    double best_gain = 1e-12 * (1.0 + std::abs(parent));
    int best_f = -1, best_b = -1;
    const Index q = bin.bins.cols();
    std::vector<double> hg, hh;
    std::vector<Index> hc;
    for (Index f = 0; f < q; ++f) {
      const int nb = bin.bin_count(f);
      if (nb < 2) continue;
      hg.assign(static_cast<std::size_t>(nb), 0.0);
      hh.assign(static_cast<std::size_t>(nb), 0.0);
      hc.assign(static_cast<std::size_t>(nb), 0);
      for (Index i : rows) {
        const auto b = bin.bins(i, f);
        hg[b] += grad(i);
        hh[b] += hess(i);
        ++hc[b];
      }
      double gl = 0.0, hl = 0.0;
      Index cl = 0;
      for (int b = 0; b + 1 < nb; ++b) {
        gl += hg[static_cast<std::size_t>(b)];
        hl += hh[static_cast<std::size_t>(b)];
        cl += hc[static_cast<std::size_t>(b)];
        const Index cr = static_cast<Index>(rows.size()) - cl;
        if (cl < min_leaf) continue;
        if (cr < min_leaf) break;
        const double gr = g - gl, hr = h - hl;
        if (hl <= 1e-12 || hr <= 1e-12) continue;
        const double gain = gl * gl / hl + gr * gr / hr - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_f = static_cast<int>(f);
          best_b = b;
        }
      }
    }
    if (best_f < 0) return id;

    std::vector<Index> left, right;
    for (Index i : rows) (bin.bins(i, best_f) <= best_b ? left : right).push_back(i);
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    auto& nd = tree.nodes[static_cast<std::size_t>(id)];
    nd.feature = best_f;
    nd.threshold = bin.cuts[static_cast<std::size_t>(best_f)][static_cast<std::size_t>(best_b)];
    nd.left = l;
    nd.right = r;
    return id;
  }
};

}  // namespace

GbtModel fit_gbt(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets, const GbtParams& params) {
  const Index n = design.rows();
  if (n < 1) throw InsufficientDataError("fit_gbt needs at least one row");
  if (targets.size() != n) throw ParameterError("fit_gbt: target length does not match design rows");
  if (params.trees < 1) throw ParameterError("fit_gbt: trees must be >= 1");
  if (params.depth < 1) throw ParameterError("fit_gbt: depth must be >= 1");
  if (!(params.rate > 0.0 && params.rate <= 1.0)) throw ParameterError("fit_gbt: rate must lie in (0,1]");
  if (params.max_bins < 2 || params.max_bins > 65535) throw ParameterError("fit_gbt: max_bins out of range");
  if (!(params.subsample > 0.0 && params.subsample <= 1.0)) throw ParameterError("fit_gbt: subsample in (0,1]");
  if (!design.allFinite() || !targets.allFinite()) throw DomainError("fit_gbt: non-finite input");

  double base = targets.mean();
  if (params.loss == GbtLoss::logistic) {
    const double p = std::clamp(base, 1e-6, 1.0 - 1e-6);
    base = logit(p);
  }
  const Binning bin = make_binning(design, params.max_bins);
  Eigen::VectorXd raw = Eigen::VectorXd::Constant(n, base);
  Eigen::VectorXd grad(n), hess(n);
  const double scale = 1.0 + targets.cwiseAbs().maxCoeff();

  Rng rng(params.seed);
  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index{0});
  std::vector<RegressionTree> trees;
  for (int t = 0; t < params.trees; ++t) {
    if (params.loss == GbtLoss::squared) {
      grad = targets - raw;
      hess.setOnes();
    } else {
      for (Index i = 0; i < n; ++i) {
        const double p = expit(raw(i));
        grad(i) = targets(i) - p;
        hess(i) = p * (1.0 - p);
      }
    }
    if (grad.cwiseAbs().maxCoeff() <= 1e-12 * scale) break;

    std::vector<Index> rows;
    if (params.subsample < 1.0) {
      std::bernoulli_distribution keep(params.subsample);
      for (Index i = 0; i < n; ++i)
        if (keep(rng)) rows.push_back(i);
      if (rows.empty()) rows = all;
    } else {
      rows = all;
    }
    TreeBuilder tb{bin, grad, hess, params.depth, std::max<Index>(1, params.min_leaf), {}};
    tb.grow(rows, 0);
    if (tb.tree.nodes.size() == 1 && std::abs(tb.tree.nodes[0].value) <= 1e-15) break;
    for (Index i = 0; i < n; ++i) raw(i) += params.rate * tb.tree.predict_row(design.row(i));
    trees.push_back(std::move(tb.tree));
  }
  return GbtModel(params.loss, base, params.rate, std::move(trees));
}

// -- learner adapters --------------------------------------------------------

namespace {

struct LinearFit final : FittedModel {
  LinearModel m;
  Eigen::VectorXd predict(const Eigen::MatrixXd& design) const override { return m.predict(design); }
};

struct LogisticFit final : FittedModel {
  LogisticModel m;
  Eigen::VectorXd predict(const Eigen::MatrixXd& design) const override { return m.predict_proba(design); }
};

struct GbtFit final : FittedModel {
  explicit GbtFit(GbtModel model) : m(std::move(model)) {}
  GbtModel m;
  Eigen::VectorXd predict(const Eigen::MatrixXd& design) const override { return m.predict(design); }
};

}  // namespace

std::unique_ptr<FittedModel> RidgeLearner::fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                                               const Eigen::VectorXd& weights, std::uint64_t) const {
  auto f = std::make_unique<LinearFit>();
  f->m = fit_ridge_weighted(design, targets, weights, lambda_);
  return f;
}

std::unique_ptr<FittedModel> LogisticLearner::fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                                                  const Eigen::VectorXd& weights, std::uint64_t) const {
  auto f = std::make_unique<LogisticFit>();
  f->m = fit_logistic_weighted(design, targets, weights, max_iter_, tol_, ridge_);
  return f;
}

std::unique_ptr<FittedModel> GbtLearner::fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                                             const Eigen::VectorXd&, std::uint64_t seed) const {
  GbtParams p = params_;
  p.seed = seed;
  return std::make_unique<GbtFit>(fit_gbt(design, targets, p));
}

std::unique_ptr<NuisanceLearner> make_outcome_learner(const std::string& name) {
  if (name == "ridge") return std::make_unique<RidgeLearner>(1e-3);
  if (name == "gbt") {
    GbtParams p;
    p.trees = 100;
    p.depth = 3;
    p.rate = 0.1;
    p.min_leaf = 5;
    return std::make_unique<GbtLearner>(p);
  }
  throw ParameterError("unknown outcome learner '" + name + "' (expected ridge or gbt)");
}

std::unique_ptr<NuisanceLearner> make_propensity_learner(const std::string& name) {
  if (name == "logistic") return std::make_unique<LogisticLearner>(100, 1e-8, 1e-6);
  if (name == "gbt") {
    GbtParams p;
    p.loss = GbtLoss::logistic;
    p.trees = 100;
    p.depth = 2;
    p.rate = 0.1;
    p.min_leaf = 10;
    return std::make_unique<GbtLearner>(p);
  }
  throw ParameterError("unknown propensity learner '" + name + "' (expected logistic or gbt)");
}

}  // namespace sdr
