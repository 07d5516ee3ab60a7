#include "sdr/nuisance.hpp"

#include "sdr/rng.hpp"

namespace sdr {

std::string to_string(PiSource s) {
  switch (s) {
    case PiSource::estimated: return "estimated";
    case PiSource::oracle_mar: return "oracle_mar";
    case PiSource::oracle_mcar_constant: return "oracle_mcar_constant";
  }
  return "unknown";
}

Eigen::VectorXd clip(const Eigen::VectorXd& v, double lo, double hi) { return v.cwiseMax(lo).cwiseMin(hi); }

Eigen::MatrixXd nuisance_design(const SpatialDataset& ds) {
  const Index n = ds.size(), p = ds.feature_count();
  Eigen::MatrixXd d(n, p + 3);
  d.leftCols(p) = ds.features();
  d.col(p) = ds.pred();
  d.rightCols(2) = ds.coords();
  return d;
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& design, const std::vector<Index>& rows) {
  const Index q = design.cols();
  Standardizer s;
  s.mean = Eigen::RowVectorXd::Zero(q);
  s.sd = Eigen::RowVectorXd::Ones(q);
  if (rows.empty()) return s;
  const auto m = static_cast<double>(rows.size());
  for (Index i : rows) s.mean += design.row(i);
  s.mean /= m;
  Eigen::RowVectorXd ss = Eigen::RowVectorXd::Zero(q);
  for (Index i : rows) ss += (design.row(i) - s.mean).cwiseAbs2();
  for (Index j = 0; j < q; ++j) {
    const double sd = std::sqrt(ss(j) / m);
    s.sd(j) = sd > 1e-12 * (1.0 + std::abs(s.mean(j))) ? sd : 1.0;
  }
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& design) const {
  return (design.rowwise() - mean).array().rowwise() / sd.array();
}

CrossfitResult crossfit_nuisances(const SpatialDataset& ds, const FoldPlan& plan, const NuisanceLearner& m_learner,
                                  const NuisanceLearner& pi_learner, const CrossfitOptions& opt) {
  const Index n = ds.size();
  if (!(opt.pi_min > 0.0 && opt.pi_min < 0.5)) throw ParameterError("pi_min must lie in (0, 0.5)");
  if (plan.size() != n) throw ParameterError("fold plan does not match dataset size");
  if (opt.pi_override && opt.pi_override->size() != n) throw ParameterError("pi_override must have length n");
  if (opt.m_override && opt.m_override->size() != n) throw ParameterError("m_override must have length n");

  CrossfitResult out;
  out.fold_plan = plan;
  out.pi_min = opt.pi_min;
  out.m_hat = Eigen::VectorXd::Zero(n);
  out.pi_raw = Eigen::VectorXd::Zero(n);

  const Eigen::MatrixXd design = nuisance_design(ds);
  const Eigen::VectorXd y = ds.outcome_or(0.0);
  const Eigen::VectorXd r = ds.labeled().cast<double>().matrix();
  const Eigen::VectorXd no_weights;

  if (opt.m_override) {
    out.m_hat = *opt.m_override;
    out.m_supplied = true;
  }
  if (opt.pi_override) {
    out.pi_raw = *opt.pi_override;
    const double first = out.pi_raw(0);
    const bool constant = (out.pi_raw.array() == first).all();
    out.pi_source = constant ? PiSource::oracle_mcar_constant : PiSource::oracle_mar;
  } else {
    out.pi_source = PiSource::estimated;
  }

  if (!opt.m_override || !opt.pi_override) {
    for (int k = 0; k < plan.folds; ++k) {
      const auto& train = plan.train_sets[static_cast<std::size_t>(k)];
      const auto& held = plan.held_out[static_cast<std::size_t>(k)];
      const Standardizer st = Standardizer::fit(design, train);
      Eigen::MatrixXd eval(static_cast<Index>(held.size()), design.cols());
      for (std::size_t a = 0; a < held.size(); ++a) eval.row(static_cast<Index>(a)) = design.row(held[a]);
      eval = st.apply(eval);

      if (!opt.m_override) {
        std::vector<Index> lab;
        for (Index i : train)
          if (ds.labeled()(i)) lab.push_back(i);
        if (lab.empty())
          throw StarvationError("fold " + std::to_string(k) + ": training set has no labeled units", k);
        Eigen::MatrixXd xm(static_cast<Index>(lab.size()), design.cols());
        Eigen::VectorXd ym(static_cast<Index>(lab.size()));
        for (std::size_t a = 0; a < lab.size(); ++a) {
          xm.row(static_cast<Index>(a)) = design.row(lab[a]);
          ym(static_cast<Index>(a)) = y(lab[a]);
        }
        auto fit = m_learner.fit(st.apply(xm), ym, no_weights,
                                 derive_seed(opt.seed, {stream::learner, static_cast<std::uint64_t>(k), 0}));
        const Eigen::VectorXd pred = fit->predict(eval);
        for (std::size_t a = 0; a < held.size(); ++a) out.m_hat(held[a]) = pred(static_cast<Index>(a));
      }
      if (!opt.pi_override) {
        Eigen::MatrixXd xp(static_cast<Index>(train.size()), design.cols());
        Eigen::VectorXd rp(static_cast<Index>(train.size()));
        for (std::size_t a = 0; a < train.size(); ++a) {
          xp.row(static_cast<Index>(a)) = design.row(train[a]);
          rp(static_cast<Index>(a)) = r(train[a]);
        }
        auto fit = pi_learner.fit(st.apply(xp), rp, no_weights,
                                  derive_seed(opt.seed, {stream::learner, static_cast<std::uint64_t>(k), 1}));
        const Eigen::VectorXd pred = fit->predict(eval);
        for (std::size_t a = 0; a < held.size(); ++a) out.pi_raw(held[a]) = pred(static_cast<Index>(a));
      }
    }
  }
  if (!out.m_hat.allFinite() || !out.pi_raw.allFinite()) throw DomainError("non-finite nuisance prediction");
  out.pi_hat = clip(out.pi_raw, opt.pi_min, 1.0 - opt.pi_min);
  return out;
}

}  // namespace sdr
