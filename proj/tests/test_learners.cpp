#include <doctest.h>

#include "sdr/learners.hpp"
#include "support.hpp"

using namespace sdr;

namespace {

double loglik(const Eigen::VectorXd& x, const Eigen::VectorXd& r, double b) {
  double s = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    const double eta = b * x(i);
    s += r(i) * eta - std::log1p(std::exp(eta));
  }
  return s;
}

}  // namespace

TEST_SUITE("learners") {
  TEST_CASE("ridge exact fit") {
    Eigen::MatrixXd x(5, 1);
    x << 0, 1, 2, 3, 4;
    const Eigen::VectorXd y = 2.0 * x.col(0);
    const auto m = fit_ridge(x, y, 0.0);
    CHECK(m.coef(0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(m.intercept == doctest::Approx(0.0).epsilon(1e-12));
  }

  TEST_CASE("ridge shrinkage limit") {
    Eigen::MatrixXd x(5, 1);
    x << 0, 1, 2, 3, 4;
    Eigen::VectorXd y(5);
    y << 1, 3, 2, 5, 4;
    const auto m = fit_ridge(x, y, 1e12);
    CHECK(std::abs(m.coef(0)) < 1e-9);
    CHECK(m.intercept == doctest::Approx(3.0).epsilon(1e-9));
  }

  TEST_CASE("ridge matches a direct dense solve") {
    std::mt19937_64 rng(17);
    Eigen::MatrixXd x(20, 3);
    for (int j = 0; j < 3; ++j) x.col(j) = test::normal_vector(20, rng);
    const Eigen::VectorXd y = test::normal_vector(20, rng);
    const double lambda = 0.1;
    const auto m = fit_ridge(x, y, lambda);
    // unpenalized intercept: solve on centered data
    const Eigen::RowVectorXd xm = x.colwise().mean();
    const Eigen::MatrixXd xc = x.rowwise() - xm;
    const Eigen::VectorXd yc = y.array() - y.mean();
    const Eigen::MatrixXd a = xc.transpose() * xc + lambda * Eigen::MatrixXd::Identity(3, 3);
    const Eigen::VectorXd beta = a.fullPivLu().solve(xc.transpose() * yc);
    for (int j = 0; j < 3; ++j) CHECK(m.coef(j) == doctest::Approx(beta(j)).epsilon(1e-10));
    CHECK(m.intercept == doctest::Approx(y.mean() - xm.dot(beta)).epsilon(1e-10));
  }

  TEST_CASE("logistic with every label true") {
    Eigen::MatrixXd x(30, 1);
    x.col(0) = Eigen::VectorXd::LinSpaced(30, -1, 1);
    const auto m = fit_logistic(x, Eigen::VectorXd::Ones(30));
    CHECK(m.separation);
    CHECK((m.predict_proba(x).array() > 0.9).all());
    CHECK(m.predict_proba(x).allFinite());
  }

  TEST_CASE("logistic without signal") {
    std::mt19937_64 rng(2);
    const Index n = 4000;
    Eigen::MatrixXd x(n, 2);
    x.col(0) = test::normal_vector(n, rng);
    x.col(1) = test::normal_vector(n, rng);
    Eigen::VectorXd r(n);
    for (Index i = 0; i < n; ++i) r(i) = i % 2;
    const auto m = fit_logistic(x, r);
    CHECK(m.converged);
    CHECK(std::abs(m.linear.intercept) < 0.1);
    CHECK(std::abs(m.linear.coef(0)) < 0.1);
    CHECK(std::abs(m.linear.coef(1)) < 0.1);
  }

  TEST_CASE("logistic slope against a grid-search maximum likelihood") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Index n = 5000;
    Eigen::MatrixXd x(n, 1);
    x.col(0) = test::normal_vector(n, rng);
    Eigen::VectorXd r(n);
    for (Index i = 0; i < n; ++i) r(i) = u(rng) < expit(1.5 * x(i, 0)) ? 1.0 : 0.0;
    double best_b = 0.0, best = -1e300;
    for (double b = 0.5; b <= 2.5; b += 0.001) {
      const double l = loglik(x.col(0), r, b);
      if (l > best) best = l, best_b = b;
    }
    const auto m = fit_logistic(x, r);
    // the fit has a free intercept, so compare loosely with the no-intercept grid optimum
    CHECK(std::abs(m.linear.coef(0) - 1.5) < 0.1);
    CHECK(std::abs(m.linear.coef(0) - best_b) < 0.05);
    CHECK(std::abs(m.linear.intercept) < 0.1);
  }

  TEST_CASE("expit and logit") {
    CHECK(expit(0.0) == 0.5);
    CHECK(logit(0.2) == doctest::Approx(-1.3862944).epsilon(1e-7));
    CHECK(expit(logit(0.37)) == doctest::Approx(0.37).epsilon(1e-14));
    CHECK(expit(-800.0) >= 0.0);
    CHECK(expit(800.0) <= 1.0);
  }

  TEST_CASE("gbt constant target") {
    Eigen::MatrixXd x(50, 2);
    x.col(0) = Eigen::VectorXd::LinSpaced(50, 0, 1);
    x.col(1) = Eigen::VectorXd::LinSpaced(50, 1, 0);
    GbtParams p;
    p.trees = 10;
    const auto m = fit_gbt(x, Eigen::VectorXd::Constant(50, 4.2), p);
    CHECK((m.predict(x).array() - 4.2).abs().maxCoeff() < 1e-12);
  }

  TEST_CASE("gbt step function with stumps") {
    const Index n = 400;
    Eigen::MatrixXd x(n, 1);
    x.col(0) = Eigen::VectorXd::LinSpaced(n, -1, 1);
    Eigen::VectorXd y(n);
    for (Index i = 0; i < n; ++i) y(i) = x(i, 0) > 0.3 ? 2.0 : -1.0;
    GbtParams p;
    p.trees = 50;
    p.depth = 1;
    const auto m = fit_gbt(x, y, p);
    const double var = (y.array() - y.mean()).square().mean();
    const double mse = (m.predict(x) - y).array().square().mean();
    CHECK(mse < 0.01 * var);
  }

  TEST_CASE("single boosting step at rate one is one regression tree") {
    // oracle: exhaustive best split on a single feature, leaf means
    const Index n = 9;
    Eigen::MatrixXd x(n, 1);
    x.col(0) << 1, 2, 3, 4, 5, 6, 7, 8, 9;
    Eigen::VectorXd y(n);
    y << 1, 1, 1, 5, 5, 5, 5, 9, 9;
    GbtParams p;
    p.trees = 1;
    p.depth = 1;
    p.rate = 1.0;
    const auto m = fit_gbt(x, y, p);
    double best = 1e300;
    Eigen::VectorXd best_fit;
    for (Index s = 1; s < n; ++s) {
      const double l = y.head(s).mean(), r = y.tail(n - s).mean();
      Eigen::VectorXd fit(n);
      fit.head(s).setConstant(l);
      fit.tail(n - s).setConstant(r);
      const double sse = (fit - y).squaredNorm();
      if (sse < best) best = sse, best_fit = fit;
    }
    CHECK((m.predict(x) - best_fit).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(m.tree_count() == 1);

    GbtParams deep = p;
    deep.depth = 8;
    const auto full = fit_gbt(x, y, deep);
    CHECK((full.predict(x) - y).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("gbt logistic loss returns probabilities") {
    std::mt19937_64 rng(4);
    const Index n = 600;
    Eigen::MatrixXd x(n, 1);
    x.col(0) = test::normal_vector(n, rng);
    Eigen::VectorXd r(n);
    for (Index i = 0; i < n; ++i) r(i) = x(i, 0) > 0 ? 1.0 : 0.0;
    GbtParams p;
    p.loss = GbtLoss::logistic;
    p.trees = 30;
    const auto m = fit_gbt(x, r, p);
    const Eigen::VectorXd pr = m.predict(x);
    CHECK((pr.array() > 0.0 && pr.array() < 1.0).all());
    double acc = 0.0;
    for (Index i = 0; i < n; ++i) acc += ((pr(i) > 0.5) == (r(i) > 0.5));
    CHECK(acc / n > 0.95);
  }

  TEST_CASE("gbt is deterministic under subsampling") {
    std::mt19937_64 rng(9);
    Eigen::MatrixXd x(200, 2);
    x.col(0) = test::normal_vector(200, rng);
    x.col(1) = test::normal_vector(200, rng);
    const Eigen::VectorXd y = x.col(0) - x.col(1);
    GbtParams p;
    p.trees = 20;
    p.subsample = 0.5;
    p.seed = 77;
    CHECK(fit_gbt(x, y, p).predict(x) == fit_gbt(x, y, p).predict(x));
  }

  TEST_CASE("learner factories") {
    CHECK(make_outcome_learner("ridge")->name() == "ridge");
    CHECK(make_outcome_learner("gbt")->name() == "gbt");
    CHECK(make_propensity_learner("logistic")->name() == "logistic");
    CHECK(make_propensity_learner("gbt")->name() == "gbt-logistic");
    CHECK_THROWS_AS(make_outcome_learner("forest"), ParameterError);
    CHECK_THROWS_AS(fit_ridge(Eigen::MatrixXd(3, 1), Eigen::VectorXd(2), 0.1), ParameterError);
  }
}
