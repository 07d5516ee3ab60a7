#include <doctest.h>

#include <json.hpp>
#include <set>
#include <sstream>

#include "sdr/harness.hpp"
#include "support.hpp"

using namespace sdr;

namespace {

ExperimentConfig small_grid() {
  ExperimentConfig c;
  c.side = 40;
  c.params = {0.0};
  c.samplings = {SamplingMode::iid, SamplingMode::soft_block};
  c.arms = {LabelMode::mcar, LabelMode::mar};
  c.populations = 2;
  c.draws = 3;
  c.n = 300;
  c.seed = 123;
  return c;
}

UnitPool toy_pool(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  UnitPool p;
  p.coords.resize(n, 2);
  for (Index i = 0; i < n; ++i) p.coords.row(i) << u(rng), u(rng);
  p.features = test::normal_vector(n, rng);
  p.feature_names = {"x"};
  p.y = (p.features.col(0) + 0.5 * test::normal_vector(n, rng)).array() + 1.0;
  p.pred = 0.9 * p.features.col(0);
  p.candidates.resize(static_cast<std::size_t>(n));
  std::iota(p.candidates.begin(), p.candidates.end(), Index{0});
  p.mu_true = 1.0;
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ReplicateRecord covered_record(int pop, bool covered) {
  ReplicateRecord r;
  r.population = pop;
  r.ok = true;
  r.theta_hat = 0.0;
  r.mu_true = covered ? 0.0 : 5.0;
  r.lo = -1.0;
  r.hi = 1.0;
  r.width = 2.0;
  r.covered_superpop = covered;
  r.covered_finite = covered;
  r.finite_target = 0.0;
  return r;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("method and enum round trips") {
    for (Method m : {Method::crossppi, Method::dr_iid, Method::dr_hac, Method::dr_jk_hac, Method::dr_2way,
                     Method::dr_jk_2way})
      CHECK(parse_method(to_string(m)) == m);
    CHECK(parse_method_list("crossppi,dr-jk-hac").size() == 2);
    CHECK_THROWS_AS(parse_method("dr-magic"), ParameterError);
    CHECK(parse_design("external-csv") == Design::external_csv);
    CHECK(parse_pi_mode("oracle") == PiMode::oracle);
  }

  TEST_CASE("config validation") {
    ExperimentConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.effective_pi_mode() == PiMode::oracle);
    CHECK(c.effective_m_learner() == "ridge");
    c.methods = {Method::dr_2way};
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = ExperimentConfig{};
    c.populations = 0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = ExperimentConfig{};
    c.label_rate = 0.05;
    c.arms = {LabelMode::mar};
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = ExperimentConfig{};
    c.design = Design::twoway;
    CHECK(c.effective_m_learner() == "yhat");
    CHECK(c.effective_pi_mode() == PiMode::estimated);
  }

  TEST_CASE("fully labeled toy reduces to the sample mean") {
    const auto pool = toy_pool(200, 4);
    ExperimentConfig c;
    c.methods = {Method::dr_jk_hac};
    c.label_rate = 1.0;
    c.pi_min = 1e-9;
    c.pi_mode = PiMode::oracle;
    const auto recs = run_replicate(c, pool, pool.candidates, ReplicateKey{}, 5);
    REQUIRE(recs.size() == 1);
    const auto& r = recs[0];
    REQUIRE(r.ok);
    CHECK(r.n_labeled == 200);
    CHECK(r.theta_hat == doctest::Approx(pool.y.mean()).epsilon(1e-7));
    CHECK((r.lo <= r.finite_target && r.finite_target <= r.hi));
    CHECK(r.covered_finite);
  }

  TEST_CASE("one sample shared by every method") {
    const auto pool = toy_pool(400, 8);
    ExperimentConfig c;
    c.methods = {Method::crossppi, Method::dr_iid, Method::dr_hac, Method::dr_jk_hac};
    std::vector<Index> sample(pool.candidates.begin(), pool.candidates.begin() + 300);
    const auto recs = run_replicate(c, pool, sample, ReplicateKey{}, 9);
    REQUIRE(recs.size() == 4);
    for (const auto& r : recs) {
      CHECK(r.ok);
      CHECK(r.n_labeled == recs[0].n_labeled);
      CHECK(r.finite_target == recs[0].finite_target);
    }
    // the DR methods share one score vector
    CHECK(recs[1].theta_hat == recs[2].theta_hat);
    CHECK(recs[2].theta_hat == recs[3].theta_hat);
    CHECK(recs[0].critical_branch == "z");
  }

  TEST_CASE("hardest-cell replicate records the jackknife components") {
    const auto pop = generate_population(60, 20.0, 3);
    const auto bp = fit_base_predictor(pop, 0.35, 4);
    const auto pool = make_grid_pool(pop, bp);
    ExperimentConfig c;
    c.side = 60;
    const auto sample = draw_sample(pool.candidates, pool.coords, 600, SamplingMode::soft_block, 0.05, 7);
    ReplicateKey key;
    key.param = 20.0;
    key.sampling = SamplingMode::soft_block;
    key.arm = LabelMode::mar;
    const auto recs = run_replicate(c, pool, sample, key, 11);
    const auto& jk = recs[3];
    REQUIRE(jk.method == Method::dr_jk_hac);
    REQUIRE(jk.ok);
    CHECK(std::isfinite(jk.v_off));
    CHECK(std::isfinite(jk.v_between));
    CHECK(std::isfinite(jk.v_within));
    CHECK(std::isfinite(jk.h_n));
    CHECK(test::rel_err(jk.v_jk, jk.v_off + jk.v_between) <= 1e-12);
    CHECK(jk.variance == (jk.floor_applied ? c.epsilon : jk.v_jk));
  }

  TEST_CASE("a failing method leaves the others intact") {
    const auto pool = toy_pool(300, 2);
    ExperimentConfig c;
    c.methods = {Method::crossppi, Method::dr_2way, Method::dr_jk_hac};
    const auto recs = run_replicate(c, pool, pool.candidates, ReplicateKey{}, 3);
    CHECK(recs[0].ok);
    CHECK_FALSE(recs[1].ok);
    CHECK(recs[1].error.find("cluster") != std::string::npos);
    CHECK(recs[2].ok);
  }

  TEST_CASE("experiment cardinality, order and determinism") {
    auto c = small_grid();
    const auto recs = run_experiment(c);
    CHECK(recs.size() == 96);
    std::set<std::tuple<int, int, int, int, int>> keys;
    for (const auto& r : recs)
      keys.insert({r.population, r.draw, int(r.sampling), int(r.arm), int(r.method)});
    CHECK(keys.size() == 96);

    const auto dir = test::scratch_dir("harness_det");
    write_records_csv(recs, dir / "a.csv");
    c.threads = 3;
    write_records_csv(run_experiment(c), dir / "b.csv");
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));

    for (const auto& r : recs) {
      if (!r.ok) continue;
      CHECK(r.covered_superpop == (r.lo <= r.mu_true && r.mu_true <= r.hi));
      CHECK(r.width == doctest::Approx(r.hi - r.lo));
      CHECK(r.width >= 0.0);
    }
  }

  TEST_CASE("record round trip reproduces the summary") {
    const auto recs = run_experiment(small_grid());
    const auto dir = test::scratch_dir("harness_rt");
    write_records_csv(recs, dir / "records.csv");
    const auto back = read_records_csv(dir / "records.csv");
    REQUIRE(back.size() == recs.size());
    const auto s1 = aggregate(recs), s2 = aggregate(back);
    REQUIRE(s1.size() == s2.size());
    CHECK(summary_json(s1) == summary_json(s2));
    // coverage identity from the stored interval endpoints
    for (const auto& r : back)
      if (r.ok) CHECK(r.covered_superpop == (r.lo <= r.mu_true && r.mu_true <= r.hi));
  }

  TEST_CASE("aggregate arithmetic") {
    std::vector<ReplicateRecord> all;
    for (int i = 0; i < 10; ++i) all.push_back(covered_record(i % 2, true));
    auto s = aggregate(all);
    REQUIRE(s.size() == 1);
    CHECK(s[0].coverage == 1.0);
    CHECK(s[0].mcse == 0.0);
    CHECK(s[0].mean_width == 2.0);

    std::vector<ReplicateRecord> mix;
    for (int i = 0; i < 50; ++i) mix.push_back(covered_record(0, i >= 5));
    ReplicateRecord failed = covered_record(0, false);
    failed.ok = false;
    mix.push_back(failed);
    s = aggregate(mix);
    CHECK(s[0].coverage == doctest::Approx(0.90));
    CHECK(s[0].mcse == doctest::Approx(0.042).epsilon(0.01));
    CHECK(s[0].replicates == 51);
    CHECK(s[0].successes == 50);
    CHECK(s[0].failure_rate == doctest::Approx(1.0 / 51.0));

    std::vector<ReplicateRecord> none{failed};
    s = aggregate(none);
    CHECK(s[0].successes == 0);
    CHECK_FALSE(s[0].warning.empty());
    CHECK(find_cell(s, 0.0, SamplingMode::iid, LabelMode::mcar, Method::crossppi) != nullptr);
    CHECK(find_cell(s, 1.0, SamplingMode::iid, LabelMode::mcar, Method::crossppi) == nullptr);
  }

  TEST_CASE("empty reports are headers only") {
    const auto dir = test::scratch_dir("harness_empty");
    emit_reports({}, {}, ReportPaths{dir});
    for (const char* f : {"records.csv", "summary.csv", "coverage_by_sigma.csv"}) {
      const auto text = slurp(dir / f);
      CHECK(std::count(text.begin(), text.end(), '\n') == 1);
    }
    CHECK(std::filesystem::exists(dir / "summary.json"));
  }

  TEST_CASE("summary JSON schema") {
    const auto s = aggregate(run_experiment(small_grid()));
    const auto j = nlohmann::json::parse(summary_json(s));
    CHECK(j.at("schema") == "sdr-summary/1");
    const auto& cells = j.at("cells");
    REQUIRE(cells.is_object());
    std::size_t leaves = 0;
    for (const auto& [design, by_param] : cells.items()) {
      CHECK(design == "grid");
      for (const auto& [param, by_sampling] : by_param.items())
        for (const auto& [sampling, by_arm] : by_sampling.items()) {
          CHECK((sampling == "iid" || sampling == "soft_block"));
          for (const auto& [arm, by_method] : by_arm.items()) {
            CHECK((arm == "mcar" || arm == "mar"));
            for (const auto& [method, cell] : by_method.items()) {
              CHECK_NOTHROW(parse_method(method));
              for (const char* key : {"replicates", "successes", "failure_rate"}) CHECK(cell.at(key).is_number());
              for (const char* key : {"coverage", "mcse", "coverage_finite", "mean_width", "bias", "mean_theta"})
                CHECK((cell.at(key).is_number() || cell.at(key).is_null()));
              CHECK(cell.at("population_coverage_quantiles").size() == 5);
              ++leaves;
            }
          }
        }
    }
    CHECK(leaves == s.size());

    const auto dir = test::scratch_dir("harness_cov");
    write_coverage_by_param_csv(s, dir / "c.csv");
    const auto text = slurp(dir / "c.csv");
    CHECK(text.find("q25") != std::string::npos);
  }

  TEST_CASE("external pool CSV") {
    const auto dir = test::scratch_dir("harness_pool");
    std::ostringstream csv;
    csv << "sx,sy,f1,yhat,y\n";
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 400; ++i) {
      const double x = u(rng);
      csv << u(rng) << ',' << u(rng) << ',' << x << ',' << 0.8 * x << ',' << x + u(rng) << '\n';
    }
    test::write_text(dir / "pool.csv", csv.str());
    ColumnMap cols;
    cols.features = {"f1"};
    const auto pool = load_pool_csv(dir / "pool.csv", cols);
    CHECK(pool.candidates.size() == 400);
    CHECK(pool.mu_true == doctest::Approx(pool.y.mean()));

    ExperimentConfig c;
    c.design = Design::external_csv;
    c.pool_csv = dir / "pool.csv";
    c.columns = cols;
    c.n = 200;
    c.populations = 1;
    c.draws = 4;
    const auto recs = run_experiment(c);
    CHECK(recs.size() == 16);
    for (const auto& r : recs) CHECK(r.ok);
  }

  TEST_CASE("two-way experiment") {
    ExperimentConfig c;
    c.design = Design::twoway;
    c.params = {0.0, 0.5};
    c.arms = {LabelMode::mar};
    c.methods = {Method::crossppi, Method::dr_2way, Method::dr_jk_2way};
    c.populations = 2;
    c.draws = 2;
    const auto recs = run_experiment(c);
    CHECK(recs.size() == 2 * 2 * 2 * 3);
    for (const auto& r : recs) {
      CHECK(r.ok);
      CHECK(r.fallback_folds == 5);
    }
  }
}
