// spatial_dr_infer: Monte Carlo coverage sweeps and single-dataset inference.
//
//   spatial_dr_infer simulate --sigma 0,40,80,120 --sampling iid,block --arm mcar,mar --out runs/grid
//   spatial_dr_infer simulate-twoway --dep-scale 0,0.25,0.5,1 --arm mar --out runs/twoway
//   spatial_dr_infer estimate --data sample.csv --features x1,x2
//   spatial_dr_infer diagnose --data sample.csv --features x1,x2

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sdr/diagnostics.hpp"
#include "sdr/estimator.hpp"
#include "sdr/folds.hpp"
#include "sdr/harness.hpp"
#include "sdr/nuisance.hpp"
#include "sdr/variance.hpp"

using nlohmann::ordered_json;

namespace {

std::vector<std::string> split(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> parse_doubles(const std::string& csv, const std::string& flag) {
  std::vector<double> out;
  for (const auto& s : split(csv)) out.push_back(sdr::parse_double_cell(s, 0, flag));
  return out;
}

ordered_json num(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

// Flags shared by the simulation verbs.
struct SimFlags {
  std::string params = "0";
  std::string sampling = "iid";
  std::string arms = "mcar";
  std::string methods;
  std::string critical = "z";
  std::string gate = "off";
  std::string pi_mode;
  std::string out = "sdr_out";
  bool full = false;
};

void add_common_sim(CLI::App* cmd, sdr::ExperimentConfig& cfg, SimFlags& f) {
  cmd->add_option("--arm", f.arms, "label arms: mcar,mar")->capture_default_str();
  cmd->add_option("--n", cfg.n, "sample size")->capture_default_str();
  cmd->add_option("--label-rate", cfg.label_rate, "label budget")->capture_default_str();
  cmd->add_option("--strength", cfg.mar_strength, "MAR score strength")->capture_default_str();
  cmd->add_option("--floor", cfg.pi_floor, "MAR propensity floor")->capture_default_str();
  cmd->add_option("--ceil", cfg.pi_ceil, "MAR propensity ceiling")->capture_default_str();
  cmd->add_option("--k", cfg.k, "cross-fitting folds")->capture_default_str();
  cmd->add_option("--qb", cfg.q_b, "buffer distance quantile")->capture_default_str();
  cmd->add_option("--hq", cfg.h_q, "HAC bandwidth distance quantile")->capture_default_str();
  cmd->add_option("--alpha", cfg.alpha, "1 - nominal coverage")->capture_default_str();
  cmd->add_option("--pi-min", cfg.pi_min, "propensity clipping floor")->capture_default_str();
  cmd->add_option("--epsilon", cfg.epsilon, "variance floor")->capture_default_str();
  cmd->add_option("--methods", f.methods, "comma-separated methods");
  cmd->add_option("--m-learner", cfg.m_learner, "ridge, gbt or yhat");
  cmd->add_option("--pi-learner", cfg.pi_learner, "logistic or gbt")->capture_default_str();
  cmd->add_option("--pi", f.pi_mode, "oracle or estimated propensities");
  cmd->add_option("--critical", f.critical, "jackknife critical value: z or t (t uses K-1 df)")
      ->check(CLI::IsMember({"z", "t"}))
      ->capture_default_str();
  cmd->add_option("--gate", f.gate, "Moran gate: on or off")->check(CLI::IsMember({"on", "off"}))->capture_default_str();
  cmd->add_option("--gate-perms", cfg.gate_permutations, "gate permutations")->capture_default_str();
  cmd->add_option("--gate-level", cfg.gate_level, "gate significance level")->capture_default_str();
  cmd->add_option("--pops", cfg.populations, "population replicates per cell")->capture_default_str();
  cmd->add_option("--draws", cfg.draws, "sample draws per population")->capture_default_str();
  cmd->add_flag("--full", f.full, "use 100 populations x 200 draws");
  cmd->add_option("--seed", cfg.seed, "master seed")->capture_default_str();
  cmd->add_option("--threads", cfg.threads, "worker threads")->capture_default_str();
  cmd->add_flag("--timing", cfg.timing, "record per-replicate wall time (breaks byte determinism)");
  cmd->add_option("--out", f.out, "output directory")->capture_default_str();
}

int finish_sim(sdr::ExperimentConfig& cfg, const SimFlags& f) {
  cfg.params = parse_doubles(f.params, "param");
  cfg.samplings.clear();
  for (const auto& s : split(f.sampling)) cfg.samplings.push_back(sdr::parse_sampling_mode(s));
  cfg.arms.clear();
  for (const auto& s : split(f.arms)) cfg.arms.push_back(sdr::parse_label_mode(s));
  if (!f.methods.empty()) cfg.methods = sdr::parse_method_list(f.methods);
  if (!f.pi_mode.empty()) cfg.pi_mode = sdr::parse_pi_mode(f.pi_mode);
  cfg.jk_t_critical = f.critical == "t";
  cfg.gate = f.gate == "on";
  if (f.full) {
    cfg.populations = 100;
    cfg.draws = 200;
  }
  const auto records = sdr::run_experiment(cfg);
  const auto summary = sdr::aggregate(records);
  sdr::emit_reports(summary, records, sdr::ReportPaths{f.out});

  std::size_t failed = 0;
  for (const auto& r : records) failed += r.ok ? 0 : 1;
  std::cout << records.size() << " records (" << failed << " failed) written to " << f.out << "\n";
  for (const auto& s : summary) {
    std::cout << "  param=" << sdr::format_double(s.param) << " " << sdr::to_string(s.sampling) << " "
              << sdr::to_string(s.arm) << " " << sdr::to_string(s.method) << ": coverage "
              << sdr::format_double(s.coverage) << " (mcse " << sdr::format_double(s.mcse) << "), width "
              << sdr::format_double(s.mean_width) << (s.warning.empty() ? "" : "  [" + s.warning + "]") << "\n";
  }
  return 0;
}

// Flags shared by the single-dataset verbs.
struct DataFlags {
  std::string data;
  std::string features;
  sdr::ColumnMap columns;
  int k = 5;
  double q_b = 0.05;
  double h_q = 0.10;
  double pi_min = 0.10;
  std::string m_learner = "ridge";
  std::string pi_learner = "logistic";
  std::uint64_t seed = 7;
  std::string out;
};

void add_data_flags(CLI::App* cmd, DataFlags& f) {
  cmd->add_option("--data", f.data, "input CSV")->required();
  cmd->add_option("--features", f.features, "comma-separated feature columns");
  cmd->add_option("--coord-x", f.columns.coord_x, "first coordinate column")->capture_default_str();
  cmd->add_option("--coord-y", f.columns.coord_y, "second coordinate column")->capture_default_str();
  cmd->add_option("--pred-col", f.columns.pred, "prediction column")->capture_default_str();
  cmd->add_option("--label-col", f.columns.label, "label indicator column")->capture_default_str();
  cmd->add_option("--outcome-col", f.columns.outcome, "outcome column (empty or NA when unlabeled)")
      ->capture_default_str();
  cmd->add_option("--k", f.k, "cross-fitting folds")->capture_default_str();
  cmd->add_option("--qb", f.q_b, "buffer distance quantile")->capture_default_str();
  cmd->add_option("--hq", f.h_q, "HAC bandwidth distance quantile")->capture_default_str();
  cmd->add_option("--pi-min", f.pi_min, "propensity clipping floor")->capture_default_str();
  cmd->add_option("--m-learner", f.m_learner, "ridge or gbt")->capture_default_str();
  cmd->add_option("--pi-learner", f.pi_learner, "logistic or gbt")->capture_default_str();
  cmd->add_option("--seed", f.seed, "seed for folds and permutations")->capture_default_str();
  cmd->add_option("--out", f.out, "write JSON here instead of stdout");
}

struct Fitted {
  sdr::SpatialDataset ds;
  sdr::CrossfitResult cf;
};

Fitted load_and_fit(DataFlags& f) {
  f.columns.features = split(f.features);
  sdr::SpatialDataset ds = sdr::load_dataset_csv(f.data, f.columns);
  const sdr::FoldPlan plan =
      sdr::build_fold_plan(ds, f.k, f.q_b, std::nullopt, sdr::derive_seed(f.seed, {sdr::stream::folds}));
  sdr::CrossfitOptions opt;
  opt.pi_min = f.pi_min;
  opt.seed = sdr::derive_seed(f.seed, {sdr::stream::learner});
  auto m = sdr::make_outcome_learner(f.m_learner);
  auto p = sdr::make_propensity_learner(f.pi_learner);
  sdr::CrossfitResult cf = sdr::crossfit_nuisances(ds, plan, *m, *p, opt);
  return {std::move(ds), std::move(cf)};
}

void emit_json(const ordered_json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream o(out);
  if (!o) throw sdr::IoError("cannot open '" + out + "' for writing");
  o << j.dump(2) << "\n";
  if (!o) throw sdr::IoError("write failed for '" + out + "'");
}

ordered_json gate_json(const sdr::MoranGateRecord& g) {
  return {{"statistic", num(g.statistic)}, {"p_value", g.p_value},     {"spatial", g.spatial},
          {"degenerate", g.degenerate},    {"h_n", num(g.h_n)},        {"n_residuals", g.n_residuals}};
}

ordered_json fold_json(const sdr::FoldPlan& plan) {
  ordered_json folds = ordered_json::array();
  for (int k = 0; k < plan.folds; ++k)
    folds.push_back({{"fold", k},
                     {"held_out", plan.fold_size(k)},
                     {"train", plan.train_sets[static_cast<std::size_t>(k)].size()},
                     {"fallback", static_cast<bool>(plan.fallback_used[static_cast<std::size_t>(k)])}});
  return {{"k", plan.folds}, {"buffer_radius", plan.buffer_radius}, {"folds", folds}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Doubly robust mean estimation with predicted labels and spatial jackknife-HAC inference"};
  app.set_config("--config", "", "read flags from a TOML / key=value file; command-line flags win");
  app.require_subcommand(1);

  sdr::ExperimentConfig grid_cfg;
  SimFlags grid_flags;
  std::string design = "grid";
  std::string pool_features;
  auto* sim = app.add_subcommand("simulate", "Monte Carlo sweep over the synthetic grid design (or a CSV pool)");
  sim->add_option("--sigma", grid_flags.params, "smoothing radii in grid cells")->capture_default_str();
  sim->add_option("--sampling", grid_flags.sampling, "sampling modes: iid,soft_block")->capture_default_str();
  sim->add_option("--design", design, "grid or external-csv")
      ->check(CLI::IsMember({"grid", "external-csv"}))
      ->capture_default_str();
  sim->add_option("--pool", grid_cfg.pool_csv, "pool CSV for the external-csv design");
  sim->add_option("--pool-features", pool_features, "feature columns of the pool CSV");
  sim->add_option("--pool-pred-col", grid_cfg.columns.pred, "prediction column of the pool CSV")
      ->capture_default_str();
  sim->add_option("--pool-outcome-col", grid_cfg.columns.outcome, "outcome column of the pool CSV")
      ->capture_default_str();
  sim->add_option("--side", grid_cfg.side, "grid side length")->capture_default_str();
  sim->add_option("--aux-frac", grid_cfg.aux_frac, "auxiliary training share")->capture_default_str();
  sim->add_option("--core-frac", grid_cfg.core_frac, "soft-block core share")->capture_default_str();
  add_common_sim(sim, grid_cfg, grid_flags);

  sdr::ExperimentConfig tw_cfg;
  tw_cfg.design = sdr::Design::twoway;
  tw_cfg.methods = {sdr::Method::crossppi, sdr::Method::dr_2way, sdr::Method::dr_jk_2way};
  SimFlags tw_flags;
  tw_flags.arms = "mar";
  auto* tw = app.add_subcommand("simulate-twoway", "Monte Carlo sweep over the two-way cluster design");
  tw->add_option("--dep-scale", tw_flags.params, "cluster shock sds")->capture_default_str();
  tw->add_option("--g1", tw_cfg.g1_count, "first cluster dimension size")->capture_default_str();
  tw->add_option("--g2", tw_cfg.g2_count, "second cluster dimension size")->capture_default_str();
  add_common_sim(tw, tw_cfg, tw_flags);

  DataFlags est_flags;
  std::string est_method = "dr-jk-hac";
  std::string est_critical = "z";
  std::string est_gate = "off";
  double est_alpha = 0.10;
  int est_perms = 199;
  double est_gate_level = 0.05;
  auto* est = app.add_subcommand("estimate", "Point estimate and interval for one CSV dataset (JSON)");
  add_data_flags(est, est_flags);
  est->add_option("--method", est_method, "dr-jk-hac, dr-hac, dr-iid or crossppi")->capture_default_str();
  est->add_option("--alpha", est_alpha, "1 - nominal coverage")->capture_default_str();
  est->add_option("--critical", est_critical, "z or t (t uses K-1 df)")
      ->check(CLI::IsMember({"z", "t"}))
      ->capture_default_str();
  est->add_option("--gate", est_gate, "Moran gate: on or off")->check(CLI::IsMember({"on", "off"}))->capture_default_str();
  est->add_option("--gate-perms", est_perms, "gate permutations")->capture_default_str();
  est->add_option("--gate-level", est_gate_level, "gate significance level")->capture_default_str();

  DataFlags diag_flags;
  int diag_perms = 199;
  int diag_bins = 12;
  auto* diag = app.add_subcommand("diagnose", "Residual dependence and overlap diagnostics for one CSV (JSON)");
  add_data_flags(diag, diag_flags);
  diag->add_option("--perms", diag_perms, "Moran permutations")->capture_default_str();
  diag->add_option("--bins", diag_bins, "semivariogram bins")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      grid_cfg.design = sdr::parse_design(design);
      grid_cfg.columns.features = split(pool_features);
      return finish_sim(grid_cfg, grid_flags);
    }
    if (*tw) return finish_sim(tw_cfg, tw_flags);

    if (*est) {
      const sdr::Method method = sdr::parse_method(est_method);
      Fitted fit = load_and_fit(est_flags);
      ordered_json j;
      j["n"] = fit.ds.size();
      j["n_labeled"] = fit.ds.labeled_count();
      j["method"] = est_method;
      if (method == sdr::Method::crossppi) {
        const auto c = sdr::crossppi_estimate(fit.ds);
        const double z = sdr::normal_quantile(1.0 - est_alpha / 2.0);
        const double half = z * std::sqrt(c.variance);
        j["theta_hat"] = c.point;
        j["variance"] = c.variance;
        j["critical_branch"] = "z";
        j["critical_value"] = z;
        j["alpha"] = est_alpha;
        j["lo"] = c.point - half;
        j["hi"] = c.point + half;
        emit_json(j, est_flags.out);
        return 0;
      }
      const sdr::ScoreVector sv = sdr::dr_scores(fit.ds, fit.cf);
      sdr::VarianceEstimate v;
      sdr::IntervalOptions iopt;
      iopt.alpha = est_alpha;
      iopt.spatial_t = est_critical == "t";
      std::optional<sdr::MoranGateRecord> gate;
      switch (method) {
        case sdr::Method::dr_iid:
          v = sdr::iid_variance(sv);
          iopt.force_branch = sdr::CriticalBranch::z_spatial;
          break;
        case sdr::Method::dr_hac:
          v = sdr::hac_variance(sv, fit.ds.coords(), est_flags.h_q, sdr::kDefaultEpsilon);
          break;
        case sdr::Method::dr_jk_hac:
          v = sdr::jk_hac_variance(sv, fit.ds.coords(), est_flags.h_q, sdr::kDefaultEpsilon);
          break;
        default:
          throw sdr::ParameterError("estimate supports dr-jk-hac, dr-hac, dr-iid and crossppi");
      }
      if (est_gate == "on" && method != sdr::Method::dr_iid)
        gate = sdr::moran_gate(fit.ds, fit.cf, est_flags.h_q, est_perms, est_gate_level,
                               sdr::derive_seed(est_flags.seed, {sdr::stream::gate}));
      const sdr::IntervalReport rep = sdr::build_interval(sv, v, gate, iopt);
      j["theta_hat"] = rep.theta_hat;
      j["variance"] = rep.variance.value;
      j["variance_raw"] = rep.variance.raw;
      j["variance_method"] = sdr::to_string(rep.variance.method);
      j["floor_applied"] = rep.variance.floor_applied;
      ordered_json comps;
      for (const auto& [k, val] : rep.variance.components) comps[k] = num(val);
      j["components"] = comps;
      j["critical_branch"] = sdr::to_string(rep.critical_branch);
      j["critical_value"] = rep.critical_value;
      j["alpha"] = rep.alpha;
      j["lo"] = rep.lo;
      j["hi"] = rep.hi;
      j["gate"] = rep.gate ? gate_json(*rep.gate) : ordered_json(nullptr);
      j["pi_source"] = sdr::to_string(fit.cf.pi_source);
      j["fold_plan"] = fold_json(fit.cf.fold_plan);
      emit_json(j, est_flags.out);
      return 0;
    }

    if (*diag) {
      Fitted fit = load_and_fit(diag_flags);
      const auto& ds = fit.ds;
      std::vector<sdr::Index> lab;
      for (sdr::Index i = 0; i < ds.size(); ++i)
        if (ds.labeled()(i)) lab.push_back(i);
      const auto n_lab = static_cast<sdr::Index>(lab.size());
      Eigen::VectorXd resid(n_lab);
      sdr::CoordMatrix lc(n_lab, 2);
      for (sdr::Index a = 0; a < n_lab; ++a) {
        const sdr::Index i = lab[static_cast<std::size_t>(a)];
        resid(a) = *ds.outcome(i) - fit.cf.m_hat(i);
        lc.row(a) = ds.coords().row(i);
      }
      ordered_json j;
      j["n"] = ds.size();
      j["n_labeled"] = n_lab;
      const auto gate = sdr::moran_gate(ds, fit.cf, diag_flags.h_q, diag_perms, 0.05,
                                        sdr::derive_seed(diag_flags.seed, {sdr::stream::gate}));
      j["moran"] = gate_json(gate);
      j["nn_residual_correlation"] = n_lab >= 3 ? num(sdr::nn_residual_correlation(resid, lc)) : ordered_json(nullptr);
      ordered_json vg = ordered_json::array();
      if (n_lab >= 2)
        for (const auto& b : sdr::semivariogram(resid, lc, diag_bins))
          vg.push_back({{"lo", b.lo}, {"hi", b.hi}, {"center", b.center}, {"gamma", b.gamma}, {"pairs", b.pairs}});
      j["semivariogram"] = vg;
      const auto ov = sdr::overlap_report(std::nullopt, fit.cf.pi_raw, ds.labeled(), diag_flags.pi_min);
      j["overlap"] = {{"pi_q05_estimated", ov.pi_q05_estimated},
                      {"clip_rate", ov.clip_rate},
                      {"ess", ov.ess},
                      {"ess_ratio", ov.ess_ratio},
                      {"n_labeled", ov.n_labeled}};
      j["fold_plan"] = fold_json(fit.cf.fold_plan);
      emit_json(j, diag_flags.out);
      return 0;
    }
  } catch (const sdr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
