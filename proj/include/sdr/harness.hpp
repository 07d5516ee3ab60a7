#ifndef SDR_HARNESS_HPP
#define SDR_HARNESS_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sdr/dataset.hpp"
#include "sdr/synthgen.hpp"
#include "sdr/variance.hpp"

namespace sdr {

enum class Design { grid, twoway, external_csv };
std::string to_string(Design d);
Design parse_design(const std::string& s);

enum class Method { crossppi, dr_iid, dr_hac, dr_jk_hac, dr_2way, dr_jk_2way };
std::string to_string(Method m);
Method parse_method(const std::string& s);
std::vector<Method> parse_method_list(const std::string& csv);

enum class PiMode { oracle, estimated };
std::string to_string(PiMode m);
PiMode parse_pi_mode(const std::string& s);

struct ExperimentConfig {
  Design design = Design::grid;
  std::vector<double> params{0.0};  // sigma (grid) or dep_scale (twoway); ignored for CSV pools
  std::vector<SamplingMode> samplings{SamplingMode::iid};
  std::vector<LabelMode> arms{LabelMode::mcar};
  std::vector<Method> methods{Method::crossppi, Method::dr_iid, Method::dr_hac, Method::dr_jk_hac};

  // grid population
  int side = 250;
  double aux_frac = 0.35;
  GbtParams base_predictor = default_base_predictor_params();
  // two-way population
  int g1_count = 20;
  int g2_count = 20;
  TwoWayDgp twoway_dgp;
  // external pool: a CSV with fully observed outcomes and a prediction column
  std::filesystem::path pool_csv;
  ColumnMap columns;

  Index n = 600;
  double core_frac = 0.05;
  double label_rate = 0.20;
  double mar_strength = 1.5;
  double pi_floor = 0.10;
  double pi_ceil = 0.90;

  int k = 5;
  double q_b = 0.05;
  double h_q = 0.10;
  double alpha = 0.10;
  double pi_min = 0.10;
  double epsilon = kDefaultEpsilon;
  std::optional<PiMode> pi_mode;  // default: oracle for grid, estimated otherwise
  // "ridge", "gbt", or "yhat" to use the prediction itself as m-hat; empty
  // selects yhat for the two-way design and ridge otherwise.
  std::string m_learner;
  std::string pi_learner = "logistic";

  // Critical value for the jackknife methods: t_{K-1} when true, z otherwise.
  bool jk_t_critical = false;
  bool gate = false;
  int gate_permutations = 199;
  double gate_level = 0.05;

  int populations = 20;
  int draws = 50;
  std::uint64_t seed = 7;
  int threads = 1;
  bool timing = false;

  PiMode effective_pi_mode() const;
  std::string effective_m_learner() const;
  // Throws ParameterError describing the first invalid field.
  void validate() const;
};

struct ReplicateRecord {
  Design design = Design::grid;
  int population = 0;
  int draw = 0;
  double param = 0.0;
  SamplingMode sampling = SamplingMode::iid;
  LabelMode arm = LabelMode::mcar;
  Method method = Method::crossppi;
  bool ok = false;
  std::string error;

  double theta_hat = kNaN;
  double variance = kNaN;
  double lo = kNaN;
  double hi = kNaN;
  double width = kNaN;
  double mu_true = kNaN;
  double finite_target = kNaN;
  bool covered_superpop = false;
  bool covered_finite = false;

  double v_within = kNaN;
  double v_diag = kNaN;
  double v_off = kNaN;
  double v_between = kNaN;
  double v_jk = kNaN;
  double h_n = kNaN;
  bool floor_applied = false;
  std::string critical_branch;
  double critical_value = kNaN;

  double gate_statistic = kNaN;
  double gate_p_value = kNaN;
  std::optional<bool> gate_spatial;

  int fallback_folds = 0;
  Index n_labeled = 0;
  double elapsed_ms = kNaN;
};

// A finite pool of units to draw samples from.
struct UnitPool {
  CoordMatrix coords;
  Eigen::MatrixXd features;
  std::vector<std::string> feature_names;
  Eigen::VectorXd pred;
  Eigen::VectorXd y;
  Eigen::VectorXi g1;  // empty unless the design has cluster labels
  Eigen::VectorXi g2;
  std::vector<Index> candidates;  // indices eligible for sampling
  double mu_true = 0.0;
};

// Grid population and auxiliary-split predictions folded into a pool whose
// candidates are the analysis rows.
UnitPool make_grid_pool(const GridPopulation& pop, const BasePrediction& bp);
UnitPool make_twoway_pool(const TwoWayPopulation& pop);
// Pool from a CSV whose outcome column is complete; mu_true is its mean.
UnitPool load_pool_csv(const std::filesystem::path& path, const ColumnMap& columns);

struct ReplicateKey {
  int population = 0;
  int draw = 0;
  double param = 0.0;
  SamplingMode sampling = SamplingMode::iid;
  LabelMode arm = LabelMode::mcar;
};

// One sample end to end: labels, folds, nuisances and scores are
// shared by all methods; each method's failure is confined to its record.
std::vector<ReplicateRecord> run_replicate(const ExperimentConfig& cfg, const UnitPool& pool,
                                           const std::vector<Index>& sample, const ReplicateKey& key,
                                           std::uint64_t seed);

// All records in canonical order (param, population, draw, sampling, arm,
// method), independent of thread scheduling.
std::vector<ReplicateRecord> run_experiment(const ExperimentConfig& cfg);

struct SummaryRow {
  Design design = Design::grid;
  double param = 0.0;
  SamplingMode sampling = SamplingMode::iid;
  LabelMode arm = LabelMode::mcar;
  Method method = Method::crossppi;
  Index replicates = 0;
  Index successes = 0;
  double failure_rate = 0.0;
  double coverage = kNaN;
  double mcse = kNaN;
  double coverage_finite = kNaN;
  double mean_width = kNaN;
  double bias = kNaN;
  double mean_theta = kNaN;
  // per-population coverage distribution: min, q25, median, q75, max
  std::vector<double> population_coverage_quantiles;
  std::string warning;
};

std::vector<SummaryRow> aggregate(const std::vector<ReplicateRecord>& records);

struct ReportPaths {
  std::filesystem::path dir;
  std::filesystem::path records() const { return dir / "records.csv"; }
  std::filesystem::path summary_csv() const { return dir / "summary.csv"; }
  std::filesystem::path summary_json() const { return dir / "summary.json"; }
  std::filesystem::path coverage_by_param() const { return dir / "coverage_by_sigma.csv"; }
};

void write_records_csv(const std::vector<ReplicateRecord>& records, const std::filesystem::path& path);
std::vector<ReplicateRecord> read_records_csv(const std::filesystem::path& path);
void write_summary_csv(const std::vector<SummaryRow>& summary, const std::filesystem::path& path);
std::string summary_json(const std::vector<SummaryRow>& summary);
void write_coverage_by_param_csv(const std::vector<SummaryRow>& summary, const std::filesystem::path& path);

void emit_reports(const std::vector<SummaryRow>& summary, const std::vector<ReplicateRecord>& records,
                  const ReportPaths& paths);

// Per-cell lookup helper.
const SummaryRow* find_cell(const std::vector<SummaryRow>& summary, double param, SamplingMode sampling,
                            LabelMode arm, Method method);

}  // namespace sdr

#endif  // SDR_HARNESS_HPP
