#ifndef SDR_FOLDS_HPP
#define SDR_FOLDS_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "sdr/dataset.hpp"

namespace sdr {

// K-way partition plus the buffered training set of each fold. Fold ids are
// 0-based: assignment(i) in {0..K-1}.
struct FoldPlan {
  int folds = 0;
  Eigen::VectorXi assignment;
  std::vector<std::vector<Index>> held_out;    // I_k, ascending
  std::vector<std::vector<Index>> train_sets;  // T_k, ascending
  double buffer_radius = 0.0;                  // r_n
  std::vector<bool> fallback_used;

  Index size() const noexcept { return assignment.size(); }
  Index fold_size(int k) const { return static_cast<Index>(held_out.at(static_cast<std::size_t>(k)).size()); }
};

// Uniformly random partition of {0..n-1} into k folds whose sizes differ by at
// most one.
Eigen::VectorXi assign_folds(Index n, int k, std::uint64_t seed);

// max(50, 10 * (p + 3)).
Index default_min_train(Index feature_count);

// Random folds, then T_k = {i not in I_k : min_{j in I_k} d_ij > r_n} with
// r_n the q_b pairwise-distance quantile. A fold whose T_k has fewer than
// `min_train` units falls back to the full complement of I_k.
FoldPlan build_fold_plan(const SpatialDataset& ds, int k, double q_b, std::optional<Index> min_train,
                         std::uint64_t seed);

// Plan from an explicit assignment (no randomness); same buffering rule.
FoldPlan build_fold_plan_from_assignment(const CoordMatrix& coords, Eigen::VectorXi assignment, int k, double q_b,
                                         Index min_train);

}  // namespace sdr

#endif  // SDR_FOLDS_HPP
