#include "sdr/harness.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "sdr/estimator.hpp"
#include "sdr/folds.hpp"
#include "sdr/nuisance.hpp"
#include "sdr/rng.hpp"

namespace sdr {

// -- names -------------------------------------------------------------------

std::string to_string(Design d) {
  switch (d) {
    case Design::grid: return "grid";
    case Design::twoway: return "twoway";
    case Design::external_csv: return "external-csv";
  }
  return "unknown";
}

Design parse_design(const std::string& s) {
  if (s == "grid") return Design::grid;
  if (s == "twoway") return Design::twoway;
  if (s == "external-csv" || s == "csv") return Design::external_csv;
  throw ParameterError("unknown design '" + s + "'");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::crossppi: return "crossppi";
    case Method::dr_iid: return "dr-iid";
    case Method::dr_hac: return "dr-hac";
    case Method::dr_jk_hac: return "dr-jk-hac";
    case Method::dr_2way: return "dr-2way";
    case Method::dr_jk_2way: return "dr-jk-2way";
  }
  return "unknown";
}

Method parse_method(const std::string& s) {
  for (Method m : {Method::crossppi, Method::dr_iid, Method::dr_hac, Method::dr_jk_hac, Method::dr_2way,
                   Method::dr_jk_2way})
    if (s == to_string(m)) return m;
  throw ParameterError("unknown method '" + s + "'");
}

namespace {

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

std::vector<Method> parse_method_list(const std::string& csv) {
  std::vector<Method> out;
  for (const auto& s : split_list(csv)) out.push_back(parse_method(s));
  return out;
}

std::string to_string(PiMode m) { return m == PiMode::oracle ? "oracle" : "estimated"; }

PiMode parse_pi_mode(const std::string& s) {
  if (s == "oracle") return PiMode::oracle;
  if (s == "estimated") return PiMode::estimated;
  throw ParameterError("unknown propensity mode '" + s + "' (expected oracle or estimated)");
}

// -- config ------------------------------------------------------------------

PiMode ExperimentConfig::effective_pi_mode() const {
  if (pi_mode) return *pi_mode;
  return design == Design::grid ? PiMode::oracle : PiMode::estimated;
}

std::string ExperimentConfig::effective_m_learner() const {
  if (!m_learner.empty()) return m_learner;
  return design == Design::twoway ? "yhat" : "ridge";
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& what) { throw ParameterError("config: " + what); };
  if (methods.empty()) fail("at least one method is required");
  if (samplings.empty()) fail("at least one sampling mode is required");
  if (arms.empty()) fail("at least one label arm is required");
  if (design != Design::external_csv && params.empty()) fail("at least one sigma / dep_scale value is required");
  if (populations < 1 || draws < 1) fail("populations and draws must be at least 1");
  if (k < 2) fail("k must be at least 2");
  if (n < 2 * k) fail("n must be at least 2k");
  if (!(q_b >= 0.0 && q_b < 1.0)) fail("q_b must lie in [0,1)");
  if (!(h_q > 0.0 && h_q <= 1.0)) fail("h_q must lie in (0,1]");
  if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0,1)");
  if (!(pi_min > 0.0 && pi_min < 0.5)) fail("pi_min must lie in (0,0.5)");
  if (!(label_rate > 0.0 && label_rate < 1.0)) fail("label rate must lie in (0,1)");
  if (!(core_frac >= 0.0 && core_frac <= 1.0)) fail("core fraction must lie in [0,1]");
  if (!(epsilon > 0.0)) fail("epsilon must be positive");
  if (threads < 1) fail("threads must be at least 1");
  if (gate && gate_permutations < 19) fail("gate needs at least 19 permutations");
  if (std::find(arms.begin(), arms.end(), LabelMode::mar) != arms.end() &&
      !(pi_floor < label_rate && label_rate < pi_ceil))
    fail("MAR arm needs floor < label rate < ceil");
  const std::string ml = effective_m_learner();
  if (ml != "ridge" && ml != "gbt" && ml != "yhat") fail("unknown m learner '" + ml + "'");
  if (pi_learner != "logistic" && pi_learner != "gbt") fail("unknown pi learner '" + pi_learner + "'");
  const bool clustered = std::any_of(methods.begin(), methods.end(),
                                     [](Method m) { return m == Method::dr_2way || m == Method::dr_jk_2way; });
  if (clustered && design != Design::twoway) fail("two-way methods need the twoway design");
  if (design == Design::grid) {
    if (side < 8) fail("side must be at least 8");
    if (!(aux_frac > 0.0 && aux_frac < 1.0)) fail("aux_frac must lie in (0,1)");
    for (double s : params)
      if (!(s >= 0.0 && s < side)) fail("sigma must lie in [0, side)");
  }
  if (design == Design::twoway) {
    if (g1_count < 1 || g2_count < 1) fail("cluster counts must be at least 1");
    for (double s : params)
      if (!(s >= 0.0)) fail("dep_scale must be nonnegative");
    for (SamplingMode s : samplings)
      if (s != SamplingMode::iid) fail("the twoway design has no coordinates; only iid sampling applies");
  }
  if (design == Design::external_csv && pool_csv.empty()) fail("external-csv design needs a pool CSV");
}

// -- pools -------------------------------------------------------------------

UnitPool make_grid_pool(const GridPopulation& pop, const BasePrediction& bp) {
  UnitPool pool;
  pool.coords = pop.coords;
  pool.features = pop.features();
  pool.feature_names = {"x", "u_obs"};
  pool.y = pop.y;
  pool.pred = Eigen::VectorXd::Constant(pop.size(), kNaN);
  for (std::size_t a = 0; a < bp.analysis.size(); ++a) pool.pred(bp.analysis[a]) = bp.pred(static_cast<Index>(a));
  pool.candidates = bp.analysis;
  pool.mu_true = pop.mu_true;
  return pool;
}

UnitPool make_twoway_pool(const TwoWayPopulation& pop) {
  const Index n = pop.size();
  UnitPool pool;
  pool.coords = CoordMatrix::Zero(n, 2);
  pool.features = pop.x;
  pool.feature_names = {"x"};
  pool.pred = pop.pred;
  pool.y = pop.y;
  pool.g1 = pop.g1;
  pool.g2 = pop.g2;
  pool.candidates.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) pool.candidates[static_cast<std::size_t>(i)] = i;
  pool.mu_true = pop.mu_true;
  return pool;
}

UnitPool load_pool_csv(const std::filesystem::path& path, const ColumnMap& columns) {
  const CsvTable t = read_csv(path);
  const std::size_t cx = t.column(columns.coord_x), cy = t.column(columns.coord_y);
  const std::size_t cp = t.column(columns.pred), co = t.column(columns.outcome);
  std::vector<std::size_t> cf;
  for (const auto& f : columns.features) cf.push_back(t.column(f));
  const auto n = static_cast<Index>(t.rows.size());
  if (n < 1) throw InsufficientDataError("pool CSV '" + path.string() + "' has no rows");
  UnitPool pool;
  pool.coords.resize(n, 2);
  pool.features.resize(n, static_cast<Index>(cf.size()));
  pool.pred.resize(n);
  pool.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    const auto r = static_cast<std::size_t>(i);
    pool.coords(i, 0) = parse_double_cell(row[cx], r, columns.coord_x);
    pool.coords(i, 1) = parse_double_cell(row[cy], r, columns.coord_y);
    for (std::size_t j = 0; j < cf.size(); ++j)
      pool.features(i, static_cast<Index>(j)) = parse_double_cell(row[cf[j]], r, columns.features[j]);
    pool.pred(i) = parse_double_cell(row[cp], r, columns.pred);
    if (is_missing_token(row[co]))
      throw ConsistencyError("pool CSV row " + std::to_string(i) + " has no outcome; pools need complete outcomes");
    pool.y(i) = parse_double_cell(row[co], r, columns.outcome);
  }
  pool.feature_names = columns.features;
  pool.candidates.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) pool.candidates[static_cast<std::size_t>(i)] = i;
  pool.mu_true = ordered_mean(pool.y);
  return pool;
}

// -- one replicate -----------------------------------------------------------

namespace {

std::string branch_label(CriticalBranch b) {
  switch (b) {
    case CriticalBranch::z_spatial: return "z";
    case CriticalBranch::t_spatial: return "t";
    case CriticalBranch::t_iid_gate: return "t_gate";
  }
  return "unknown";
}

double component(const VarianceEstimate& v, const char* name) {
  auto it = v.components.find(name);
  return it == v.components.end() ? kNaN : it->second;
}

bool is_spatial(Method m) { return m == Method::dr_hac || m == Method::dr_jk_hac; }
bool is_dr(Method m) { return m != Method::crossppi; }

void finish_interval(ReplicateRecord& r, double theta, double variance, double crit) {
  const double half = crit * std::sqrt(variance);
  r.theta_hat = theta;
  r.variance = variance;
  r.critical_value = crit;
  r.lo = theta - half;
  r.hi = theta + half;
  r.width = r.hi - r.lo;
  r.covered_superpop = r.lo <= r.mu_true && r.mu_true <= r.hi;
  r.covered_finite = r.lo <= r.finite_target && r.finite_target <= r.hi;
  r.ok = std::isfinite(r.lo) && std::isfinite(r.hi);
  if (!r.ok) r.error = "non-finite interval";
}

template <typename Vec>
Vec take(const Vec& v, const std::vector<Index>& rows) {
  Vec out(static_cast<Index>(rows.size()));
  for (std::size_t a = 0; a < rows.size(); ++a) out(static_cast<Index>(a)) = v(rows[a]);
  return out;
}

struct DrContext {
  CrossfitResult cf;
  ScoreVector sv;
  std::optional<MoranGateRecord> gate;
};

}  // namespace

std::vector<ReplicateRecord> run_replicate(const ExperimentConfig& cfg, const UnitPool& pool,
                                           const std::vector<Index>& sample, const ReplicateKey& key,
                                           std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<ReplicateRecord> out;
  ReplicateRecord proto;
  proto.design = cfg.design;
  proto.population = key.population;
  proto.draw = key.draw;
  proto.param = key.param;
  proto.sampling = key.sampling;
  proto.arm = key.arm;
  proto.mu_true = pool.mu_true;

  const auto n = static_cast<Index>(sample.size());
  CoordMatrix coords(n, 2);
  Eigen::MatrixXd features(n, pool.features.cols());
  for (Index a = 0; a < n; ++a) {
    coords.row(a) = pool.coords.row(sample[static_cast<std::size_t>(a)]);
    features.row(a) = pool.features.row(sample[static_cast<std::size_t>(a)]);
  }
  const Eigen::VectorXd pred = take(pool.pred, sample);
  const Eigen::VectorXd y = take(pool.y, sample);
  proto.finite_target = ordered_mean(y);

  auto fail_all = [&](const std::string& what) {
    out.clear();
    for (Method m : cfg.methods) {
      ReplicateRecord r = proto;
      r.method = m;
      r.error = what;
      out.push_back(std::move(r));
    }
    return out;
  };

  // labels
  std::optional<SpatialDataset> ds;
  Eigen::VectorXd design_pi;
  try {
    if (key.arm == LabelMode::mar) {
      design_pi = mar_propensity(standardize_columns(features), standardize_columns(coords), standardize(pred),
                                 cfg.mar_strength, cfg.label_rate, cfg.pi_floor, cfg.pi_ceil)
                      .pi;
    } else {
      design_pi = Eigen::VectorXd::Constant(n, cfg.label_rate);
    }
    const LabelMask labels =
        assign_labels(design_pi, key.arm, cfg.label_rate, derive_seed(seed, {stream::labels, std::uint64_t(key.arm)}));
    ds.emplace(coords, features, pred, labels, y, pool.feature_names);
    proto.n_labeled = ds->labeled_count();
  } catch (const std::exception& e) {
    return fail_all(e.what());
  }

  // folds, nuisances, scores
  std::optional<DrContext> dr;
  std::string dr_error;
  if (std::any_of(cfg.methods.begin(), cfg.methods.end(), is_dr)) {
    try {
      const FoldPlan plan = build_fold_plan(*ds, cfg.k, cfg.q_b, std::nullopt,
                                            derive_seed(seed, {stream::folds, std::uint64_t(key.arm)}));
      CrossfitOptions opt;
      opt.pi_min = cfg.pi_min;
      opt.seed = derive_seed(seed, {stream::learner, std::uint64_t(key.arm)});
      if (cfg.effective_pi_mode() == PiMode::oracle) opt.pi_override = design_pi;
      const std::string ml = cfg.effective_m_learner();
      if (ml == "yhat") opt.m_override = pred;
      const auto m_learner = make_outcome_learner(ml == "yhat" ? "ridge" : ml);
      const auto pi_learner = make_propensity_learner(cfg.pi_learner);
      DrContext ctx{crossfit_nuisances(*ds, plan, *m_learner, *pi_learner, opt), {}, std::nullopt};
      ctx.sv = dr_scores(*ds, ctx.cf);
      if (cfg.gate && std::any_of(cfg.methods.begin(), cfg.methods.end(), is_spatial))
        ctx.gate = moran_gate(*ds, ctx.cf, cfg.h_q, cfg.gate_permutations, cfg.gate_level,
                              derive_seed(seed, {stream::gate, std::uint64_t(key.arm)}));
      dr = std::move(ctx);
    } catch (const std::exception& e) {
      dr_error = e.what();
    }
  }
  int fallbacks = 0;
  if (dr)
    for (bool b : dr->cf.fold_plan.fallback_used) fallbacks += b ? 1 : 0;

  const double z = normal_quantile(1.0 - cfg.alpha / 2.0);
  for (Method m : cfg.methods) {
    ReplicateRecord r = proto;
    r.method = m;
    r.fallback_folds = fallbacks;
    try {
      if (m == Method::crossppi) {
        const CrossPpiEstimate est = crossppi_estimate(*ds);
        r.critical_branch = "z";
        finish_interval(r, est.point, est.variance, z);
      } else {
        if (!dr) throw Error(dr_error);
        const ScoreVector& sv = dr->sv;
        VarianceEstimate v;
        IntervalOptions iopt;
        iopt.alpha = cfg.alpha;
        std::optional<MoranGateRecord> gate;
        switch (m) {
          case Method::dr_iid:
            v = iid_variance(sv);
            iopt.force_branch = CriticalBranch::z_spatial;
            break;
          case Method::dr_hac:
            v = hac_variance(sv, coords, cfg.h_q, cfg.epsilon);
            gate = dr->gate;
            break;
          case Method::dr_jk_hac:
            v = jk_hac_variance(sv, coords, cfg.h_q, cfg.epsilon);
            iopt.spatial_t = cfg.jk_t_critical;
            gate = dr->gate;
            break;
          case Method::dr_2way:
          case Method::dr_jk_2way: {
            if (pool.g1.size() == 0) throw ParameterError("two-way methods need cluster labels");
            const Eigen::VectorXi g1 = take(pool.g1, sample), g2 = take(pool.g2, sample);
            if (m == Method::dr_2way) {
              v = twoway_variance(sv, g1, g2, cfg.epsilon);
            } else {
              v = jk_twoway_variance(sv, g1, g2, cfg.epsilon);
              iopt.spatial_t = cfg.jk_t_critical;
            }
            break;
          }
          case Method::crossppi: break;
        }
        const IntervalReport rep = build_interval(sv, v, gate, iopt);
        r.v_within = component(rep.variance, "v_within");
        if (std::isnan(r.v_within)) r.v_within = component(rep.variance, "v_hac");
        if (std::isnan(r.v_within)) r.v_within = component(rep.variance, "v_2way");
        r.v_diag = component(rep.variance, "v_diag");
        r.v_off = component(rep.variance, "v_off");
        r.v_between = component(rep.variance, "v_between");
        r.v_jk = component(rep.variance, "v_jk");
        r.h_n = component(rep.variance, "h_n");
        r.floor_applied = rep.variance.floor_applied;
        r.critical_branch = branch_label(rep.critical_branch);
        if (rep.gate) {
          r.gate_statistic = rep.gate->statistic;
          r.gate_p_value = rep.gate->p_value;
          r.gate_spatial = rep.gate->spatial;
        }
        finish_interval(r, rep.theta_hat, rep.variance.value, rep.critical_value);
      }
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
    }
    out.push_back(std::move(r));
  }
  if (cfg.timing) {
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    for (auto& r : out) r.elapsed_ms = ms;
  }
  return out;
}

// -- experiment --------------------------------------------------------------

namespace {

std::uint64_t param_tag(double p) { return std::bit_cast<std::uint64_t>(p); }

// Records for one (param, population) unit of work.
std::vector<ReplicateRecord> run_population(const ExperimentConfig& cfg, double param, int pop_id,
                                            const UnitPool* shared_pool) {
  std::vector<ReplicateRecord> out;
  const std::uint64_t pop_seed = derive_seed(cfg.seed, {stream::population, param_tag(param), std::uint64_t(pop_id)});

  auto failed_draws = [&](int draw_lo, int draw_hi, const std::string& what) {
    for (int d = draw_lo; d < draw_hi; ++d)
      for (SamplingMode s : cfg.samplings)
        for (LabelMode a : cfg.arms)
          for (Method m : cfg.methods) {
            ReplicateRecord r;
            r.design = cfg.design;
            r.population = pop_id;
            r.draw = d;
            r.param = param;
            r.sampling = s;
            r.arm = a;
            r.method = m;
            r.error = what;
            out.push_back(std::move(r));
          }
  };

  std::optional<UnitPool> own_pool;
  if (cfg.design == Design::grid) {
    try {
      const GridPopulation pop = generate_population(cfg.side, param, pop_seed);
      const BasePrediction bp =
          fit_base_predictor(pop, cfg.aux_frac, derive_seed(pop_seed, {stream::base_predictor}), cfg.base_predictor);
      own_pool = make_grid_pool(pop, bp);
    } catch (const std::exception& e) {
      failed_draws(0, cfg.draws, e.what());
      return out;
    }
  }

  for (int d = 0; d < cfg.draws; ++d) {
    const std::uint64_t draw_seed = derive_seed(cfg.seed, {stream::sampling, param_tag(param), std::uint64_t(pop_id),
                                                           std::uint64_t(d)});
    if (cfg.design == Design::twoway) {
      try {
        own_pool = make_twoway_pool(generate_twoway_population(cfg.n, cfg.g1_count, cfg.g2_count, param,
                                                               derive_seed(pop_seed, {std::uint64_t(d)}),
                                                               cfg.twoway_dgp));
      } catch (const std::exception& e) {
        failed_draws(d, d + 1, e.what());
        continue;
      }
    }
    const UnitPool& pool = own_pool ? *own_pool : *shared_pool;
    for (SamplingMode s : cfg.samplings) {
      std::vector<Index> sample;
      try {
        if (cfg.design == Design::twoway)
          sample = pool.candidates;
        else
          sample = draw_sample(pool.candidates, pool.coords, cfg.n, s, cfg.core_frac,
                               derive_seed(draw_seed, {std::uint64_t(s)}));
      } catch (const std::exception& e) {
        for (LabelMode a : cfg.arms)
          for (Method m : cfg.methods) {
            ReplicateRecord r;
            r.design = cfg.design;
            r.population = pop_id;
            r.draw = d;
            r.param = param;
            r.sampling = s;
            r.arm = a;
            r.method = m;
            r.error = e.what();
            out.push_back(std::move(r));
          }
        continue;
      }
      for (LabelMode a : cfg.arms) {
        const ReplicateKey key{pop_id, d, param, s, a};
        auto recs = run_replicate(cfg, pool, sample, key, derive_seed(draw_seed, {std::uint64_t(s), 1}));
        out.insert(out.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
      }
    }
  }
  return out;
}

}  // namespace

std::vector<ReplicateRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::optional<UnitPool> shared;
  std::vector<double> params = cfg.params;
  if (cfg.design == Design::external_csv) {
    shared = load_pool_csv(cfg.pool_csv, cfg.columns);
    if (cfg.n > static_cast<Index>(shared->candidates.size()))
      throw ParameterError("config: n exceeds the pool size " + std::to_string(shared->candidates.size()));
    params = {0.0};
  }

  struct Unit {
    double param;
    int pop;
  };
  std::vector<Unit> units;
  for (double p : params)
    for (int j = 0; j < cfg.populations; ++j) units.push_back({p, j});
  std::vector<std::vector<ReplicateRecord>> results(units.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t u = next++; u < units.size(); u = next++)
      results[u] = run_population(cfg, units[u].param, units[u].pop, shared ? &*shared : nullptr);
  };
  const int nthreads = std::min<int>(cfg.threads, static_cast<int>(units.size()));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::vector<ReplicateRecord> all;
  for (auto& r : results) all.insert(all.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  return all;
}

// -- aggregation -------------------------------------------------------------

namespace {

using CellKey = std::tuple<int, double, int, int, int>;

CellKey cell_key(const ReplicateRecord& r) {
  return {static_cast<int>(r.design), r.param, static_cast<int>(r.sampling), static_cast<int>(r.arm),
          static_cast<int>(r.method)};
}

}  // namespace

std::vector<SummaryRow> aggregate(const std::vector<ReplicateRecord>& records) {
  std::map<CellKey, std::vector<const ReplicateRecord*>> cells;
  for (const auto& r : records) cells[cell_key(r)].push_back(&r);

  std::vector<SummaryRow> out;
  for (const auto& [key, rows] : cells) {
    SummaryRow s;
    const ReplicateRecord& first = *rows.front();
    s.design = first.design;
    s.param = first.param;
    s.sampling = first.sampling;
    s.arm = first.arm;
    s.method = first.method;
    s.replicates = static_cast<Index>(rows.size());
    double cov = 0, cov_f = 0, width = 0, bias = 0, theta = 0;
    std::map<int, std::pair<Index, Index>> per_pop;  // population -> (covered, successes)
    for (const ReplicateRecord* r : rows) {
      if (!r->ok) continue;
      ++s.successes;
      cov += r->covered_superpop ? 1.0 : 0.0;
      cov_f += r->covered_finite ? 1.0 : 0.0;
      width += r->width;
      bias += r->theta_hat - r->mu_true;
      theta += r->theta_hat;
      auto& pp = per_pop[r->population];
      pp.first += r->covered_superpop ? 1 : 0;
      ++pp.second;
    }
    s.failure_rate = static_cast<double>(s.replicates - s.successes) / static_cast<double>(s.replicates);
    if (s.successes == 0) {
      s.warning = "no successful replicates";
      out.push_back(std::move(s));
      continue;
    }
    const auto m = static_cast<double>(s.successes);
    s.coverage = cov / m;
    s.mcse = std::sqrt(s.coverage * (1.0 - s.coverage) / m);
    s.coverage_finite = cov_f / m;
    s.mean_width = width / m;
    s.bias = bias / m;
    s.mean_theta = theta / m;
    std::vector<double> pc;
    for (const auto& [pop, c] : per_pop) pc.push_back(static_cast<double>(c.first) / static_cast<double>(c.second));
    for (double q : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      std::vector<double> tmp = pc;
      s.population_coverage_quantiles.push_back(q == 0.0 ? *std::min_element(tmp.begin(), tmp.end())
                                                         : nearest_rank_quantile(tmp, q));
    }
    out.push_back(std::move(s));
  }
  return out;
}

const SummaryRow* find_cell(const std::vector<SummaryRow>& summary, double param, SamplingMode sampling,
                            LabelMode arm, Method method) {
  for (const auto& s : summary)
    if (s.param == param && s.sampling == sampling && s.arm == arm && s.method == method) return &s;
  return nullptr;
}

// -- reports -----------------------------------------------------------------

namespace {

const std::vector<std::string> kRecordColumns = {
    "design",        "population",      "draw",         "param",          "sampling",     "arm",
    "method",        "status",          "error",        "theta_hat",      "variance",     "lo",
    "hi",            "width",           "mu_true",      "finite_target",  "covered_superpop",
    "covered_finite", "v_within",       "v_diag",       "v_off",          "v_between",    "v_jk",
    "h_n",           "floor_applied",   "critical_branch", "critical_value", "gate_statistic",
    "gate_p_value",  "gate_spatial",    "fallback_folds", "n_labeled",    "elapsed_ms"};

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return out + "\"";
}

std::string b(bool v) { return v ? "true" : "false"; }

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

void close_checked(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

double cell_double(const std::string& s, std::size_t row, const std::string& col) {
  return is_missing_token(s) ? kNaN : parse_double_cell(s, row, col);
}

}  // namespace

void write_records_csv(const std::vector<ReplicateRecord>& records, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (std::size_t c = 0; c < kRecordColumns.size(); ++c) out << (c ? "," : "") << kRecordColumns[c];
  out << '\n';
  for (const auto& r : records) {
    out << to_string(r.design) << ',' << r.population << ',' << r.draw << ',' << format_double(r.param) << ','
        << to_string(r.sampling) << ',' << to_string(r.arm) << ',' << to_string(r.method) << ','
        << (r.ok ? "ok" : "failed") << ',' << csv_quote(r.error) << ',' << format_double(r.theta_hat) << ','
        << format_double(r.variance) << ',' << format_double(r.lo) << ',' << format_double(r.hi) << ','
        << format_double(r.width) << ',' << format_double(r.mu_true) << ',' << format_double(r.finite_target) << ','
        << b(r.covered_superpop) << ',' << b(r.covered_finite) << ',' << format_double(r.v_within) << ','
        << format_double(r.v_diag) << ',' << format_double(r.v_off) << ',' << format_double(r.v_between) << ','
        << format_double(r.v_jk) << ',' << format_double(r.h_n) << ',' << b(r.floor_applied) << ','
        << r.critical_branch << ',' << format_double(r.critical_value) << ',' << format_double(r.gate_statistic)
        << ',' << format_double(r.gate_p_value) << ',' << (r.gate_spatial ? b(*r.gate_spatial) : "NA") << ','
        << r.fallback_folds << ',' << r.n_labeled << ',' << format_double(r.elapsed_ms) << '\n';
  }
  close_checked(out, path);
}

std::vector<ReplicateRecord> read_records_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  std::vector<std::size_t> col;
  for (const auto& name : kRecordColumns) col.push_back(t.column(name));
  std::vector<ReplicateRecord> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    auto at = [&](std::size_t c) -> const std::string& { return row[col[c]]; };
    auto num = [&](std::size_t c) { return cell_double(at(c), i, kRecordColumns[c]); };
    auto flag = [&](std::size_t c) { return parse_bool_cell(at(c), i, kRecordColumns[c]); };
    ReplicateRecord r;
    r.design = parse_design(at(0));
    r.population = static_cast<int>(num(1));
    r.draw = static_cast<int>(num(2));
    r.param = num(3);
    r.sampling = parse_sampling_mode(at(4));
    r.arm = parse_label_mode(at(5));
    r.method = parse_method(at(6));
    r.ok = at(7) == "ok";
    r.error = at(8);
    r.theta_hat = num(9);
    r.variance = num(10);
    r.lo = num(11);
    r.hi = num(12);
    r.width = num(13);
    r.mu_true = num(14);
    r.finite_target = num(15);
    r.covered_superpop = flag(16);
    r.covered_finite = flag(17);
    r.v_within = num(18);
    r.v_diag = num(19);
    r.v_off = num(20);
    r.v_between = num(21);
    r.v_jk = num(22);
    r.h_n = num(23);
    r.floor_applied = flag(24);
    r.critical_branch = at(25);
    r.critical_value = num(26);
    r.gate_statistic = num(27);
    r.gate_p_value = num(28);
    if (!is_missing_token(at(29))) r.gate_spatial = flag(29);
    r.fallback_folds = static_cast<int>(num(30));
    r.n_labeled = static_cast<Index>(num(31));
    r.elapsed_ms = num(32);
    out.push_back(std::move(r));
  }
  return out;
}

void write_summary_csv(const std::vector<SummaryRow>& summary, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "design,param,sampling,arm,method,replicates,successes,failure_rate,coverage,mcse,coverage_finite,"
         "mean_width,bias,mean_theta,warning\n";
  for (const auto& s : summary)
    out << to_string(s.design) << ',' << format_double(s.param) << ',' << to_string(s.sampling) << ','
        << to_string(s.arm) << ',' << to_string(s.method) << ',' << s.replicates << ',' << s.successes << ','
        << format_double(s.failure_rate) << ',' << format_double(s.coverage) << ',' << format_double(s.mcse) << ','
        << format_double(s.coverage_finite) << ',' << format_double(s.mean_width) << ',' << format_double(s.bias)
        << ',' << format_double(s.mean_theta) << ',' << csv_quote(s.warning) << '\n';
  close_checked(out, path);
}

std::string summary_json(const std::vector<SummaryRow>& summary) {
  using nlohmann::ordered_json;
  auto num = [](double v) -> ordered_json { return std::isnan(v) ? ordered_json(nullptr) : ordered_json(v); };
  ordered_json cells = ordered_json::object();
  for (const auto& s : summary) {
    ordered_json cell;
    cell["replicates"] = s.replicates;
    cell["successes"] = s.successes;
    cell["failure_rate"] = s.failure_rate;
    cell["coverage"] = num(s.coverage);
    cell["mcse"] = num(s.mcse);
    cell["coverage_finite"] = num(s.coverage_finite);
    cell["mean_width"] = num(s.mean_width);
    cell["bias"] = num(s.bias);
    cell["mean_theta"] = num(s.mean_theta);
    ordered_json q = ordered_json::array();
    for (double v : s.population_coverage_quantiles) q.push_back(v);
    cell["population_coverage_quantiles"] = q;
    if (!s.warning.empty()) cell["warning"] = s.warning;
    cells[to_string(s.design)][format_double(s.param)][to_string(s.sampling)][to_string(s.arm)]
         [to_string(s.method)] = cell;
  }
  ordered_json root;
  root["schema"] = "sdr-summary/1";
  root["cells"] = cells;
  return root.dump(2);
}

void write_coverage_by_param_csv(const std::vector<SummaryRow>& summary, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "design,param,arm,sampling,method,coverage,cov_min,cov_q25,cov_median,cov_q75,cov_max,mean_width\n";
  for (const auto& s : summary) {
    out << to_string(s.design) << ',' << format_double(s.param) << ',' << to_string(s.arm) << ','
        << to_string(s.sampling) << ',' << to_string(s.method) << ',' << format_double(s.coverage);
    for (std::size_t q = 0; q < 5; ++q)
      out << ',' << format_double(q < s.population_coverage_quantiles.size() ? s.population_coverage_quantiles[q] : kNaN);
    out << ',' << format_double(s.mean_width) << '\n';
  }
  close_checked(out, path);
}

void emit_reports(const std::vector<SummaryRow>& summary, const std::vector<ReplicateRecord>& records,
                  const ReportPaths& paths) {
  write_records_csv(records, paths.records());
  write_summary_csv(summary, paths.summary_csv());
  auto out = open_out(paths.summary_json());
  out << summary_json(summary) << '\n';
  close_checked(out, paths.summary_json());
  write_coverage_by_param_csv(summary, paths.coverage_by_param());
}

}  // namespace sdr
