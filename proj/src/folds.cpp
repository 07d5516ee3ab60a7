#include "sdr/folds.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

#include "sdr/rng.hpp"

namespace sdr {

Eigen::VectorXi assign_folds(Index n, int k, std::uint64_t seed) {
  if (k < 2) throw ParameterError("fold count must be at least 2, got " + std::to_string(k));
  if (k > n) throw ParameterError("fold count " + std::to_string(k) + " exceeds unit count " + std::to_string(n));
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::VectorXi a(n);
  for (Index pos = 0; pos < n; ++pos) a(perm[static_cast<std::size_t>(pos)]) = static_cast<int>(pos % k);
  return a;
}

Index default_min_train(Index feature_count) { return std::max<Index>(50, 10 * (feature_count + 3)); }

FoldPlan build_fold_plan_from_assignment(const CoordMatrix& coords, Eigen::VectorXi assignment, int k, double q_b,
                                         Index min_train) {
  const Index n = coords.rows();
  if (k < 2) throw ParameterError("fold count must be at least 2");
  if (!(q_b >= 0.0 && q_b < 1.0)) throw ParameterError("buffer quantile q_b must lie in [0,1)");
  if (assignment.size() != n) throw PartitionError("assignment length does not match unit count");

  FoldPlan plan;
  plan.folds = k;
  plan.assignment = std::move(assignment);
  plan.held_out.assign(static_cast<std::size_t>(k), {});
  for (Index i = 0; i < n; ++i) {
    const int f = plan.assignment(i);
    if (f < 0 || f >= k) throw PartitionError("fold id out of range at unit " + std::to_string(i));
    plan.held_out[static_cast<std::size_t>(f)].push_back(i);
  }
  for (int f = 0; f < k; ++f)
    if (plan.held_out[static_cast<std::size_t>(f)].empty())
      throw PartitionError("fold " + std::to_string(f) + " is empty");

  plan.buffer_radius = n >= 2 ? pairwise_distance_quantile(coords, q_b) : 0.0;

  // nearest(i, f) = min_{j in I_f} d_ij
  Eigen::MatrixXd nearest = Eigen::MatrixXd::Constant(n, k, std::numeric_limits<double>::infinity());
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double d = (coords.row(i) - coords.row(j)).norm();
      double& a = nearest(i, plan.assignment(j));
      double& b = nearest(j, plan.assignment(i));
      a = std::min(a, d);
      b = std::min(b, d);
    }
  }

  plan.train_sets.assign(static_cast<std::size_t>(k), {});
  plan.fallback_used.assign(static_cast<std::size_t>(k), false);
  for (int f = 0; f < k; ++f) {
    auto& train = plan.train_sets[static_cast<std::size_t>(f)];
    for (Index i = 0; i < n; ++i)
      if (plan.assignment(i) != f && nearest(i, f) > plan.buffer_radius) train.push_back(i);
    if (static_cast<Index>(train.size()) < min_train) {
      plan.fallback_used[static_cast<std::size_t>(f)] = true;
      train.clear();
      for (Index i = 0; i < n; ++i)
        if (plan.assignment(i) != f) train.push_back(i);
    }
  }
  return plan;
}

FoldPlan build_fold_plan(const SpatialDataset& ds, int k, double q_b, std::optional<Index> min_train,
                         std::uint64_t seed) {
  auto a = assign_folds(ds.size(), k, seed);
  return build_fold_plan_from_assignment(ds.coords(), std::move(a), k, q_b,
                                         min_train.value_or(default_min_train(ds.feature_count())));
}

}  // namespace sdr
