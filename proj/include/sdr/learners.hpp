#ifndef SDR_LEARNERS_HPP
#define SDR_LEARNERS_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sdr/error.hpp"

namespace sdr {

using Index = Eigen::Index;

// y ~ intercept + X * coef. Only `coef` is penalized.
struct LinearModel {
  double intercept = 0.0;
  Eigen::VectorXd coef;

  Eigen::VectorXd predict(const Eigen::MatrixXd& design) const {
    return (design * coef).array() + intercept;
  }
};

// Minimizes ||y - b0 - X b||^2 + lambda ||b||^2. With lambda = 0 the
// centered design must have full column rank, otherwise RankError.
LinearModel fit_ridge(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets, double lambda);

struct LogisticModel {
  LinearModel linear;  // on the log-odds scale
  int iterations = 0;
  bool converged = false;
  bool separation = false;

  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& design) const;
};

// IRLS / Newton on the Bernoulli log-likelihood with a permanent L2 penalty
// `ridge` on all coefficients (intercept included), so the optimum exists
// under separation.
LogisticModel fit_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels, int max_iter = 100,
                           double tol = 1e-8, double ridge = 1e-6);

double expit(double x);
double logit(double p);

// -- gradient boosted trees --------------------------------------------------

enum class GbtLoss { squared, logistic };

struct GbtParams {
  GbtLoss loss = GbtLoss::squared;
  int trees = 100;
  int depth = 3;
  double rate = 0.1;
  Index min_leaf = 1;
  int max_bins = 256;
  double subsample = 1.0;
  std::uint64_t seed = 0;
};

struct RegressionTree {
  struct Node {
    int feature = -1;  // -1 for a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  std::vector<Node> nodes;

  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
};

class GbtModel {
 public:
  GbtModel(GbtLoss loss, double base, double rate, std::vector<RegressionTree> trees)
      : loss_(loss), base_(base), rate_(rate), trees_(std::move(trees)) {}

  // Raw additive score (log-odds for the logistic loss).
  Eigen::VectorXd predict_raw(const Eigen::MatrixXd& design) const;
  // Mean response: the raw score for squared loss, a probability for logistic.
  Eigen::VectorXd predict(const Eigen::MatrixXd& design) const;

  std::size_t tree_count() const noexcept { return trees_.size(); }
  double base_score() const noexcept { return base_; }
  const std::vector<RegressionTree>& trees() const noexcept { return trees_; }

 private:
  GbtLoss loss_;
  double base_;
  double rate_;
  std::vector<RegressionTree> trees_;
};

// Stagewise additive trees fit to the negative gradient. Boosting stops early
// once the gradient is identically zero, so a constant target yields zero
// trees.
GbtModel fit_gbt(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets, const GbtParams& params);

// -- learner interface -------------------------------------------------------

class FittedModel {
 public:
  virtual ~FittedModel() = default;
  virtual Eigen::VectorXd predict(const Eigen::MatrixXd& design) const = 0;
};

class NuisanceLearner {
 public:
  virtual ~NuisanceLearner() = default;
  // `weights` may be empty; learners that do not support weights ignore it.
  virtual std::unique_ptr<FittedModel> fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                                           const Eigen::VectorXd& weights, std::uint64_t seed) const = 0;
  virtual std::string name() const = 0;
};

class RidgeLearner final : public NuisanceLearner {
 public:
  explicit RidgeLearner(double lambda = 1e-3) : lambda_(lambda) {}
  std::unique_ptr<FittedModel> fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                                   const Eigen::VectorXd& weights, std::uint64_t seed) const override;
  std::string name() const override { return "ridge"; }

 private:
  double lambda_;
};

class LogisticLearner final : public NuisanceLearner {
 public:
  explicit LogisticLearner(int max_iter = 100, double tol = 1e-8, double ridge = 1e-6)
      : max_iter_(max_iter), tol_(tol), ridge_(ridge) {}
  std::unique_ptr<FittedModel> fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                                   const Eigen::VectorXd& weights, std::uint64_t seed) const override;
  std::string name() const override { return "logistic"; }

 private:
  int max_iter_;
  double tol_;
  double ridge_;
};

class GbtLearner final : public NuisanceLearner {
 public:
  explicit GbtLearner(GbtParams params) : params_(params) {}
  std::unique_ptr<FittedModel> fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                                   const Eigen::VectorXd& weights, std::uint64_t seed) const override;
  std::string name() const override { return params_.loss == GbtLoss::squared ? "gbt" : "gbt-logistic"; }

 private:
  GbtParams params_;
};

// Learner factory for CLI names: "ridge", "logistic", "gbt" (squared loss for
// outcomes) and "gbt" as a propensity learner (logistic loss).
std::unique_ptr<NuisanceLearner> make_outcome_learner(const std::string& name);
std::unique_ptr<NuisanceLearner> make_propensity_learner(const std::string& name);

}  // namespace sdr

#endif  // SDR_LEARNERS_HPP
