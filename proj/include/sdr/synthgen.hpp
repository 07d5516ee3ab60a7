#ifndef SDR_SYNTHGEN_HPP
#define SDR_SYNTHGEN_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sdr/dataset.hpp"
#include "sdr/learners.hpp"

namespace sdr {

// Standard normal grid (row-major, side x side) smoothed by a disk-shaped
// mean filter of radius `sigma` cells, truncated at the boundary with the
// weights renormalized, then centered and scaled to unit sd.
Eigen::VectorXd smooth_field(int side, double sigma, std::uint64_t seed);

// Center to mean 0 and scale to (population) sd 1; a constant input maps to 0.
Eigen::VectorXd standardize(const Eigen::VectorXd& v);
Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& m);

struct GridDgp {
  double mu = 0.0;
  double beta = 0.8;
  double lambda = 1.0;
  double noise_sd = 0.6;
  double x_radius = 2.0;
};

struct GridPopulation {
  int side = 0;
  double sigma = 0.0;
  CoordMatrix coords;  // grid positions scaled to [0,1]^2
  Eigen::VectorXd x_field;
  Eigen::VectorXd u_obs;
  Eigen::VectorXd u_unobs;
  Eigen::VectorXd noise;
  Eigen::VectorXd y;
  double mu_true = 0.0;
  GridDgp dgp;

  Index size() const noexcept { return y.size(); }
  // Observed features (X, U_obs) as an N x 2 matrix.
  Eigen::MatrixXd features() const;
};

// Y = mu + beta X + lambda U_obs + lambda U_unobs + eps, X smoothed at radius
// 2 and both U fields at radius sigma.
GridPopulation generate_population(int side, double sigma, std::uint64_t seed, const GridDgp& dgp = {});

GbtParams default_base_predictor_params();

struct BasePrediction {
  std::vector<Index> analysis;  // ascending population indices
  std::vector<Index> auxiliary;
  Eigen::VectorXd pred;         // aligned with `analysis`
};

// Random auxiliary/analysis split; squared-loss GBT on standardized
// (X, U_obs, coords) fit on the auxiliary rows, predicted on analysis rows.
BasePrediction fit_base_predictor(const GridPopulation& pop, double aux_frac, std::uint64_t seed,
                                  const GbtParams& params = default_base_predictor_params());

enum class SamplingMode { iid, soft_block };
std::string to_string(SamplingMode m);
SamplingMode parse_sampling_mode(const std::string& s);

// Without replacement from `pool`. soft_block takes round(core_frac * n)
// nearest pool neighbors of a uniformly chosen pool anchor, then fills the
// rest uniformly from the remaining pool.
std::vector<Index> draw_sample(const std::vector<Index>& pool, const CoordMatrix& coords, Index n, SamplingMode mode,
                               double core_frac, std::uint64_t seed);

struct MarPropensity {
  Eigen::VectorXd pi;
  Eigen::VectorXd score;  // S_i
  double alpha = 0.0;
};

// Adversarial score S (coefficients scaled by strength / 1.5) and the
// intercept alpha, found by bisection, with mean(clip(expit(alpha + S))) equal
// to the target rate.
MarPropensity mar_propensity(const Eigen::MatrixXd& features_z, const CoordMatrix& coords_z,
                             const Eigen::VectorXd& pred_z, double strength, double target_rate, double floor,
                             double ceil);

Eigen::VectorXd mar_score(const Eigen::MatrixXd& features_z, const CoordMatrix& coords_z, const Eigen::VectorXd& pred_z,
                          double strength);

enum class LabelMode { mcar, mar };
std::string to_string(LabelMode m);
LabelMode parse_label_mode(const std::string& s);

// mcar: Bernoulli(target_rate); mar: Bernoulli(pi_i).
LabelMask assign_labels(const Eigen::VectorXd& pi, LabelMode mode, double target_rate, std::uint64_t seed);

struct TwoWayDgp {
  double mu = 0.0;
  double beta = 0.8;
  double noise_sd = 0.6;
  // External prediction Y-hat = pred_slope * X + N(0, pred_noise_sd^2).
  double pred_slope = 0.5;
  double pred_noise_sd = 1.0;
};

struct TwoWayPopulation {
  Eigen::VectorXi g1;
  Eigen::VectorXi g2;
  Eigen::VectorXd x;
  Eigen::VectorXd pred;
  Eigen::VectorXd u;      // per g1 cluster
  Eigen::VectorXd v;      // per g2 cluster
  Eigen::VectorXd noise;
  Eigen::VectorXd y;
  double dep_scale = 0.0;
  double mu_true = 0.0;
  TwoWayDgp dgp;

  Index size() const noexcept { return y.size(); }
};

// Y_i = mu + beta X_i + U_{g1(i)} + V_{g2(i)} + eps_i with uniform cluster
// labels and N(0, dep_scale^2) shocks.
TwoWayPopulation generate_twoway_population(Index n, int g1_count, int g2_count, double dep_scale, std::uint64_t seed,
                                            const TwoWayDgp& dgp = {});

}  // namespace sdr

#endif  // SDR_SYNTHGEN_HPP
