#pragma once

/**
 * @file fitting.hpp
 * @brief Weighted least-squares fit of IRF-convolved g2 panels.
 *
 * The objective is sum over panels and in-window bins of
 * ((g2_data - g2_model) / sigma)^2. It is minimised by Nelder-Mead in
 * coordinates scaled to the parameter bounds, restarted from jittered points,
 * then polished by damped Gauss-Newton. Uncertainties come from
 * 2 H^{-1} with H the finite-difference Hessian of chi2.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qdcascade/cascade.hpp"
#include "qdcascade/config.hpp"
#include "qdcascade/correlation.hpp"
#include "qdcascade/error.hpp"
#include "qdcascade/parallel.hpp"
#include "qdcascade/rng.hpp"
#include "qdcascade/timetag.hpp"

namespace qdcascade {

struct PanelData {
  PolarizationLabel p1;
  PolarizationLabel p2;
  Histogram histogram;
};

/// Parameters that may be freed: g_rate, dtheta, dphi, delta_uev, tau_h_ps, tau_v_ps.
struct FreeParameter {
  std::string name;
  double initial;
  double lower;
  double upper;
};

inline const std::vector<std::string>& fit_parameter_names() {
  static const std::vector<std::string> names{"g_rate", "dtheta", "dphi", "delta_uev", "tau_h_ps", "tau_v_ps"};
  return names;
}

/// Default bounds for a named parameter, with `initial` taken from the config.
inline FreeParameter default_free_parameter(const std::string& name, const ModelConfig& c) {
  constexpr double pi = constants::kPi;
  if (name == "g_rate") return {name, c.params.g_rate, 1.0 / 100000.0, 1.0 / 500.0};
  if (name == "dtheta") return {name, c.offsets.dtheta, -pi / 2, pi / 2};
  if (name == "dphi") return {name, c.offsets.dphi, -pi, pi};
  if (name == "delta_uev") return {name, c.params.delta_uev, 0.0, 200.0};
  if (name == "tau_h_ps") return {name, c.params.tau_h_ps, 100.0, 5000.0};
  if (name == "tau_v_ps") return {name, c.params.tau_v_ps, 100.0, 5000.0};
  throw ConfigError("unknown fit parameter " + name);
}

struct FitProblem {
  std::vector<PanelData> data;
  ModelConfig fixed;  ///< model, frame offsets and IRF FWHM; free entries are overwritten
  std::vector<FreeParameter> free;
  double tau_lo_ps = -std::numeric_limits<double>::infinity();
  double tau_hi_ps = std::numeric_limits<double>::infinity();
  std::size_t multistarts = 5;
  std::size_t max_evaluations = 5000;  ///< per simplex run
  std::uint64_t seed = 1;

  void validate() const {
    if (data.empty()) throw ConfigError("fit needs at least one data panel");
    if (free.empty()) throw ConfigError("fit needs at least one free parameter");
    if (!(fixed.irf_fwhm_ps > 0.0)) throw ConfigError("fit needs irf_fwhm_ps > 0");
    for (std::size_t i = 0; i < free.size(); ++i) {
      const auto& f = free[i];
      if (std::find(fit_parameter_names().begin(), fit_parameter_names().end(), f.name) ==
          fit_parameter_names().end()) {
        throw ConfigError("unknown fit parameter " + f.name);
      }
      for (std::size_t j = 0; j < i; ++j)
        if (free[j].name == f.name) throw ConfigError("parameter " + f.name + " freed twice");
      if (!(f.lower < f.upper) || f.initial < f.lower || f.initial > f.upper) {
        throw ConfigError("parameter " + f.name + " needs lower < upper and an initial value inside");
      }
      if (f.name == "g_rate" && !(f.lower > 0.0)) throw ConfigError("g_rate bounds must be > 0");
      if (f.name == "dtheta" && (f.lower < -constants::kPi / 2 || f.upper > constants::kPi / 2)) {
        throw ConfigError("dtheta bounds must lie within [-pi/2, pi/2]");
      }
      if (f.name == "dphi" && (f.lower < -constants::kPi || f.upper > constants::kPi)) {
        throw ConfigError("dphi bounds must lie within [-pi, pi]");
      }
    }
    if (!(tau_lo_ps < tau_hi_ps)) throw ConfigError("fit window needs tau_lo < tau_hi");
    for (const auto& p : data) {
      if (p.histogram.g2.size() != p.histogram.grid.size() || p.histogram.sigma.size() != p.histogram.grid.size()) {
        throw ConfigError("panel " + pair_name(p.p1, p.p2) + " has inconsistent histogram arrays");
      }
    }
  }
};

struct PanelResidual {
  PolarizationLabel p1;
  PolarizationLabel p2;
  std::vector<double> tau_ps;
  std::vector<double> model;
  std::vector<double> residual;  ///< (data - model) / sigma
  double chi2 = 0.0;
};

struct FitResult {
  std::vector<std::string> names;
  std::vector<double> values;
  std::vector<double> uncertainties;
  bool uncertainties_reliable = false;
  double chi2 = 0.0;
  std::size_t dof = 0;
  bool converged = false;
  std::size_t evaluations = 0;
  std::vector<PanelResidual> panels;
};

/// Config with the named parameters replaced by `values`.
inline ModelConfig apply_parameters(const ModelConfig& base, const std::vector<FreeParameter>& free,
                                    const std::vector<double>& values) {
  ModelConfig c = base;
  for (std::size_t i = 0; i < free.size(); ++i) {
    const std::string& n = free[i].name;
    const double v = values[i];
    if (n == "g_rate") c.params.g_rate = v;
    else if (n == "dtheta") c.offsets.dtheta = v;
    else if (n == "dphi") c.offsets.dphi = v;
    else if (n == "delta_uev") c.params.delta_uev = v;
    else if (n == "tau_h_ps") c.params.tau_h_ps = v;
    else if (n == "tau_v_ps") c.params.tau_v_ps = v;
    else throw ConfigError("unknown fit parameter " + n);
  }
  return c;
}

/// Convolved model panels for every data panel under config `c`.
inline std::vector<std::vector<double>> model_panels(const ModelConfig& c, const std::vector<PanelData>& data) {
  const CascadeModel model = build_model(c.params);
  const CorrelationEngine engine(model);
  std::vector<std::optional<CurveBasis>> bases;
  std::vector<DelayGrid> grids;
  std::vector<std::vector<double>> out;
  out.reserve(data.size());
  for (const auto& p : data) {
    std::size_t g = 0;
    while (g < grids.size() && !(grids[g] == p.histogram.grid)) ++g;
    if (g == grids.size()) {
      grids.push_back(p.histogram.grid);
      bases.emplace_back(std::in_place, engine, p.histogram.grid, c.irf_fwhm_ps);
    }
    out.push_back(bases[g]->panel(
        engine.panel_weights(canonical_polarization(p.p1), canonical_polarization(p.p2), c.offsets)));
  }
  return out;
}

namespace detail {

inline bool in_window(const FitProblem& p, double tau) { return tau >= p.tau_lo_ps && tau <= p.tau_hi_ps; }

inline std::size_t fitted_bins(const FitProblem& p) {
  std::size_t n = 0;
  for (const auto& d : p.data)
    for (std::size_t k = 0; k < d.histogram.grid.size(); ++k) n += in_window(p, d.histogram.grid.center(k));
  return n;
}

inline Eigen::VectorXd residual_vector(const FitProblem& p, const std::vector<double>& values) {
  const auto models = model_panels(apply_parameters(p.fixed, p.free, values), p.data);
  Eigen::VectorXd r(static_cast<Eigen::Index>(fitted_bins(p)));
  Eigen::Index i = 0;
  for (std::size_t j = 0; j < p.data.size(); ++j) {
    const auto& h = p.data[j].histogram;
    for (std::size_t k = 0; k < h.grid.size(); ++k) {
      if (!in_window(p, h.grid.center(k))) continue;
      r(i++) = (h.g2[k] - models[j][k]) / h.sigma[k];
    }
  }
  return r;
}

}  // namespace detail

inline double chi_squared(const FitProblem& problem, const std::vector<double>& values) {
  if (values.size() != problem.free.size()) throw InvalidParameter("one value per free parameter required");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] >= problem.free[i].lower && values[i] <= problem.free[i].upper)) {
      throw InvalidParameter("parameter " + problem.free[i].name + " outside its bounds");
    }
  }
  const std::size_t bins = detail::fitted_bins(problem);
  if (bins <= problem.free.size()) throw ConfigError("fit has no degrees of freedom");
  return detail::residual_vector(problem, values).squaredNorm();
}

namespace detail {

struct SimplexOutcome {
  Eigen::VectorXd x;
  double f;
  std::size_t evaluations;
  bool converged;
};

// Nelder-Mead on the unit box; points are clamped to [0, 1].
inline SimplexOutcome nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x0,
                                  double step, double rel_tol, std::size_t budget) {
  const Eigen::Index n = x0.size();
  auto clamp = [](Eigen::VectorXd v) { return v.cwiseMax(0.0).cwiseMin(1.0).eval(); };
  std::vector<Eigen::VectorXd> pts;
  std::vector<double> vals;
  std::size_t evals = 0;
  auto eval = [&](const Eigen::VectorXd& v) {
    ++evals;
    return f(v);
  };
  pts.push_back(clamp(x0));
  vals.push_back(eval(pts[0]));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd v = pts[0];
    v(i) += v(i) + step <= 1.0 ? step : -step;
    pts.push_back(clamp(v));
    vals.push_back(eval(pts.back()));
  }
  std::vector<std::size_t> order(static_cast<std::size_t>(n) + 1);
  for (;;) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];
    const double spread = vals[worst] - vals[best];
    // chi2 differences below rel_tol are immaterial even when chi2 itself is near zero
    if (spread <= rel_tol * std::max(std::abs(vals[best]), 1.0)) {
      return {pts[best], vals[best], evals, true};
    }
    if (evals >= budget) return {pts[best], vals[best], evals, false};

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t i : order)
      if (i != worst) centroid += pts[i];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd xr = clamp(centroid + (centroid - pts[worst]));
    const double fr = eval(xr);
    if (fr < vals[best]) {
      const Eigen::VectorXd xe = clamp(centroid + 2.0 * (centroid - pts[worst]));
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    const Eigen::VectorXd xc =
        outside ? clamp(centroid + 0.5 * (xr - centroid)) : clamp(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = eval(xc);
    if (fc < (outside ? fr : vals[worst])) {
      pts[worst] = xc;
      vals[worst] = fc;
      continue;
    }
    for (std::size_t i : order) {
      if (i == best) continue;
      pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
      vals[i] = eval(pts[i]);
    }
  }
}

}  // namespace detail

inline FitResult fit(const FitProblem& problem) {
  problem.validate();
  const std::size_t bins = detail::fitted_bins(problem);
  if (bins <= problem.free.size()) throw ConfigError("fit has no degrees of freedom");
  const auto n = static_cast<Eigen::Index>(problem.free.size());

  auto to_physical = [&](const Eigen::VectorXd& u) {
    std::vector<double> v(problem.free.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto& f = problem.free[i];
      v[i] = f.lower + std::clamp(u(static_cast<Eigen::Index>(i)), 0.0, 1.0) * (f.upper - f.lower);
    }
    return v;
  };
  auto objective = [&](const Eigen::VectorXd& u) {
    try {
      return detail::residual_vector(problem, to_physical(u)).squaredNorm();
    } catch (const DegenerateSteadyState&) {
      return std::numeric_limits<double>::max();
    }
  };

  Eigen::VectorXd u0(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& f = problem.free[static_cast<std::size_t>(i)];
    u0(i) = (f.initial - f.lower) / (f.upper - f.lower);
  }
  const std::size_t starts = std::max<std::size_t>(problem.multistarts, 1);
  std::vector<Eigen::VectorXd> seeds{u0};
  Xoshiro256 rng(problem.seed);
  for (std::size_t s = 1; s < starts; ++s) {
    Eigen::VectorXd u = u0;
    for (Eigen::Index i = 0; i < n; ++i) u(i) = std::clamp(u(i) + 0.2 * (rng.uniform() - 0.5), 0.0, 1.0);
    seeds.push_back(u);
  }
  std::vector<detail::SimplexOutcome> runs(starts);
  parallel_for(starts, [&](std::size_t s) {
    runs[s] = detail::nelder_mead(objective, seeds[s], 0.05, 1e-8, problem.max_evaluations);
  });
  std::size_t evaluations = 0;
  std::size_t best = 0;
  for (std::size_t s = 0; s < starts; ++s) {
    evaluations += runs[s].evaluations;
    if (runs[s].f < runs[best].f) best = s;
  }
  Eigen::VectorXd u = runs[best].x;
  double chi2 = runs[best].f;

  // Damped Gauss-Newton polish with a central-difference Jacobian.
  auto residual_u = [&](const Eigen::VectorXd& v) { return detail::residual_vector(problem, to_physical(v)); };
  double lambda = 1e-3;
  for (int iter = 0; iter < 20; ++iter) {
    const Eigen::VectorXd r = residual_u(u);
    Eigen::MatrixXd jac(r.size(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = 1e-6;
      Eigen::VectorXd up = u, dn = u;
      up(i) = std::min(1.0, u(i) + h);
      dn(i) = std::max(0.0, u(i) - h);
      jac.col(i) = (residual_u(up) - residual_u(dn)) / (up(i) - dn(i));
      evaluations += 2;
    }
    ++evaluations;
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd jtr = jac.transpose() * r;
    bool improved = false;
    bool stalled = false;
    for (int tries = 0; tries < 8; ++tries) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
      const Eigen::VectorXd step = a.ldlt().solve(-jtr);
      const Eigen::VectorXd trial = (u + step).cwiseMax(0.0).cwiseMin(1.0);
      const double ft = objective(trial);
      ++evaluations;
      if (ft < chi2) {
        stalled = (chi2 - ft) <= 1e-10 * chi2;
        u = trial;
        chi2 = ft;
        lambda = std::max(lambda / 10.0, 1e-9);
        improved = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved || stalled) break;
  }

  FitResult res;
  res.values = to_physical(u);
  for (const auto& f : problem.free) res.names.push_back(f.name);
  res.chi2 = chi2;
  res.dof = bins - problem.free.size();
  res.converged = runs[best].converged;

  // Hessian of chi2 in physical units by central differences.
  std::vector<double> h(problem.free.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    h[i] = 1e-4 * (problem.free[i].upper - problem.free[i].lower);
  }
  auto chi2_at = [&](std::vector<double> v) {
    ++evaluations;
    return detail::residual_vector(problem, v).squaredNorm();
  };
  Eigen::MatrixXd hess(n, n);
  const double f0 = chi2_at(res.values);
  for (std::size_t i = 0; i < h.size(); ++i) {
    auto vp = res.values, vm = res.values;
    vp[i] += h[i];
    vm[i] -= h[i];
    hess(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) =
        (chi2_at(vp) - 2.0 * f0 + chi2_at(vm)) / (h[i] * h[i]);
    for (std::size_t j = 0; j < i; ++j) {
      auto pp = res.values, pm = res.values, mp = res.values, mm = res.values;
      pp[i] += h[i], pp[j] += h[j];
      pm[i] += h[i], pm[j] -= h[j];
      mp[i] -= h[i], mp[j] += h[j];
      mm[i] -= h[i], mm[j] -= h[j];
      const double v = (chi2_at(pp) - chi2_at(pm) - chi2_at(mp) + chi2_at(mm)) / (4.0 * h[i] * h[j]);
      hess(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      hess(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(hess);
  res.uncertainties.assign(problem.free.size(), std::numeric_limits<double>::quiet_NaN());
  if (llt.info() == Eigen::Success) {
    const Eigen::MatrixXd cov = 2.0 * llt.solve(Eigen::MatrixXd::Identity(n, n));
    res.uncertainties_reliable = true;
    for (Eigen::Index i = 0; i < n; ++i) res.uncertainties[static_cast<std::size_t>(i)] = std::sqrt(cov(i, i));
  }
  res.evaluations = evaluations;

  const auto models = model_panels(apply_parameters(problem.fixed, problem.free, res.values), problem.data);
  for (std::size_t j = 0; j < problem.data.size(); ++j) {
    const auto& d = problem.data[j];
    PanelResidual pr{d.p1, d.p2, {}, {}, {}, 0.0};
    for (std::size_t k = 0; k < d.histogram.grid.size(); ++k) {
      const double tau = d.histogram.grid.center(k);
      if (!detail::in_window(problem, tau)) continue;
      const double r = (d.histogram.g2[k] - models[j][k]) / d.histogram.sigma[k];
      pr.tau_ps.push_back(tau);
      pr.model.push_back(models[j][k]);
      pr.residual.push_back(r);
      pr.chi2 += r * r;
    }
    res.panels.push_back(std::move(pr));
  }
  return res;
}

/// Poisson-noised histograms of the convolved model, `plateau_counts` expected
/// counts per bin where g2 = 1. Panels are returned P1-major.
inline std::vector<PanelData> synthetic_panels(const ModelConfig& c, const DelayGrid& grid,
                                               const std::vector<std::pair<PolarizationLabel, PolarizationLabel>>& pairs,
                                               double plateau_counts, std::uint64_t seed) {
  if (!(plateau_counts > 0.0)) throw InvalidParameter("plateau counts must be > 0");
  std::vector<PanelData> empty;
  for (const auto& [a, b] : pairs) empty.push_back({a, b, Histogram{grid, {}, {}, {}, 0, 0, 0, 0}});
  const auto models = model_panels(c, empty);
  Xoshiro256 rng(seed);
  for (std::size_t j = 0; j < empty.size(); ++j) {
    auto& h = empty[j].histogram;
    h.counts.resize(grid.size());
    h.g2.resize(grid.size());
    h.sigma.resize(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const std::uint64_t n = rng.poisson(plateau_counts * std::max(0.0, models[j][k]));
      h.counts[k] = n;
      h.g2[k] = static_cast<double>(n) / plateau_counts;
      h.sigma[k] = std::sqrt(std::max(static_cast<double>(n), 1.0)) / plateau_counts;
    }
  }
  return empty;
}

inline std::vector<std::pair<PolarizationLabel, PolarizationLabel>> all_pairs() {
  std::vector<std::pair<PolarizationLabel, PolarizationLabel>> out;
  for (PolarizationLabel a : kAllPolarizations)
    for (PolarizationLabel b : kAllPolarizations) out.emplace_back(a, b);
  return out;
}

/// Loads every `<P1><P2>.csv` histogram found in `dir`.
inline std::vector<PanelData> load_panels(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
  std::vector<PanelData> out;
  for (const auto& [a, b] : all_pairs()) {
    const fs::path p = fs::path(dir) / (pair_name(a, b) + ".csv");
    if (fs::exists(p)) out.push_back({a, b, read_histogram_csv(p.string())});
  }
  if (out.empty()) throw DataError("no <P1><P2>.csv histograms in " + dir);
  return out;
}

inline nlohmann::ordered_json fit_report(const FitProblem& problem, const FitResult& r,
                                         const std::map<std::string, std::string>& residual_files = {}) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    nlohmann::ordered_json p;
    p["value"] = r.values[i];
    p["uncertainty"] = r.uncertainties_reliable ? nlohmann::ordered_json(r.uncertainties[i]) : nlohmann::ordered_json();
    if (r.names[i] == "g_rate") {
      p["inverse_ns"] = 1e-3 / r.values[i];
      if (r.uncertainties_reliable) p["inverse_uncertainty_ns"] = 1e-3 * r.uncertainties[i] / (r.values[i] * r.values[i]);
    } else if (r.names[i] == "dtheta" || r.names[i] == "dphi") {
      p["value_pi"] = r.values[i] / constants::kPi;
      if (r.uncertainties_reliable) p["uncertainty_pi"] = r.uncertainties[i] / constants::kPi;
    }
    params[r.names[i]] = p;
  }
  j["parameters"] = params;
  j["uncertainties_reliable"] = r.uncertainties_reliable;
  j["chi2"] = r.chi2;
  j["dof"] = r.dof;
  j["reduced_chi2"] = r.chi2 / static_cast<double>(r.dof);
  j["converged"] = r.converged;
  j["evaluations"] = r.evaluations;
  nlohmann::ordered_json fixed;
  fixed["delta_uev"] = problem.fixed.params.delta_uev;
  fixed["tau_h_ps"] = problem.fixed.params.tau_h_ps;
  fixed["tau_v_ps"] = problem.fixed.params.tau_v_ps;
  fixed["n_max"] = problem.fixed.params.n_max;
  fixed["irf_fwhm_ps"] = problem.fixed.irf_fwhm_ps;
  fixed["herald_conjugate"] = problem.fixed.offsets.herald_conjugate;
  j["fixed"] = fixed;
  j["window_ps"] = {std::isfinite(problem.tau_lo_ps) ? nlohmann::ordered_json(problem.tau_lo_ps) : nlohmann::ordered_json(),
                    std::isfinite(problem.tau_hi_ps) ? nlohmann::ordered_json(problem.tau_hi_ps) : nlohmann::ordered_json()};
  j["panel_weighting"] = "equal";
  nlohmann::ordered_json panels = nlohmann::ordered_json::object();
  for (const auto& p : r.panels) {
    nlohmann::ordered_json e;
    e["chi2"] = p.chi2;
    e["bins"] = p.residual.size();
    const auto name = pair_name(p.p1, p.p2);
    if (auto it = residual_files.find(name); it != residual_files.end()) e["residuals"] = it->second;
    panels[name] = e;
  }
  j["panels"] = panels;
  return j;
}

/// CSV `tau_ps,model,residual` of one panel's fit residuals.
inline void write_residual_csv(std::ostream& os, const PanelResidual& p) {
  os << "tau_ps,model,residual\n";
  for (std::size_t k = 0; k < p.tau_ps.size(); ++k) {
    os << format_double(p.tau_ps[k]) << ',' << format_double(p.model[k]) << ',' << format_double(p.residual[k])
       << '\n';
  }
}

}  // namespace qdcascade
