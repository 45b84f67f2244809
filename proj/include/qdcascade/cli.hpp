#pragma once

// Command-line front end. Exit codes: 0 success, 1 usage or invalid
// parameter, 2 unreadable or malformed data/configuration, 3 numerical failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qdcascade/cascade.hpp"
#include "qdcascade/config.hpp"
#include "qdcascade/correlation.hpp"
#include "qdcascade/error.hpp"
#include "qdcascade/fitting.hpp"
#include "qdcascade/montecarlo.hpp"
#include "qdcascade/svg.hpp"
#include "qdcascade/timetag.hpp"

namespace qdcascade::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

namespace detail {

inline ModelConfig config_or_default(const std::string& path) {
  return path.empty() ? ModelConfig{} : load_config(path);
}

// A malformed --pol value is a usage error, not a data error.
inline std::pair<PolarizationLabel, PolarizationLabel> pol_arg(const std::string& s) {
  try {
    return parse_polarization_pair(s);
  } catch (const ParseError& e) {
    throw InvalidParameter(std::string("--pol: ") + e.what());
  }
}

inline DelayGrid grid_from(double lo, double hi, double bin) {
  if (!(lo < hi)) throw InvalidParameter("--tau-min must be smaller than --tau-max");
  return DelayGrid(lo, hi, bin);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os << text;
  if (!os) throw DataError("write failed: " + path);
}

// IRF FWHM: the flag when given, else the config value; 0 disables convolution.
inline CorrelationCurve curve_for(const CorrelationEngine& engine, const ModelConfig& c, PolarizationLabel a,
                                  PolarizationLabel b, const DelayGrid& grid, double fwhm) {
  const auto p1 = canonical_polarization(a), p2 = canonical_polarization(b);
  if (fwhm > 0.0) return convolved_curve(engine, p1, p2, c.offsets, grid, fwhm);
  return g2_curve(engine, p1, p2, c.offsets, grid);
}

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Biexciton-exciton cascade correlations: model, synthetic data and fitting", "qdcascade"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  std::string config_path;
  std::string pol = "HH";
  double tau_min = -5000.0, tau_max = 5000.0, bin = 10.0;
  std::optional<double> irf;
  std::string out_path, out_dir;
  bool svg = false;

  auto* sim = app.add_subcommand("simulate", "One g2 curve as CSV");
  sim->add_option("--config", config_path, "Model configuration file");
  sim->add_option("--pol", pol, "Polarizer pair, e.g. HH, DA, RL")->required();
  sim->add_option("--tau-min", tau_min, "First bin edge (ps)");
  sim->add_option("--tau-max", tau_max, "Last bin edge (ps)");
  sim->add_option("--bin", bin, "Bin width (ps)");
  sim->add_option("--irf", irf, "IRF FWHM (ps); 0 disables convolution. Default: config irf_fwhm_ps");
  sim->add_option("--out", out_path, "Output CSV, '-' for standard output")->required();

  auto* tomo = app.add_subcommand("tomography", "All 36 panels as <P1><P2>.csv");
  tomo->add_option("--config", config_path, "Model configuration file");
  tomo->add_option("--out-dir", out_dir, "Output directory")->required();
  tomo->add_option("--tau-min", tau_min, "First bin edge (ps)");
  tomo->add_option("--tau-max", tau_max, "Last bin edge (ps)");
  tomo->add_option("--bin", bin, "Bin width (ps)");
  tomo->add_option("--irf", irf, "IRF FWHM (ps); 0 disables convolution. Default: config irf_fwhm_ps");
  tomo->add_flag("--svg", svg, "Also write tomography.svg");

  auto* ss = app.add_subcommand("steady-state", "Steady-state occupations");
  ss->add_option("--config", config_path, "Model configuration file");

  LifetimeInputs life;
  double lambda_m = 0.0;
  auto* lt = app.add_subcommand("lifetimes", "Radiative lifetime estimates");
  lt->add_option("--exciton-energy-ev", life.e_ex_ev, "Exciton energy (eV)");
  lt->add_option("--index", life.n_m, "Refractive index of the medium");
  lt->add_option("--oscillator-strength", life.f, "Oscillator strength");
  lt->add_option("--wire-diameter-nm", life.d_w_nm, "Nanowire diameter (nm)");
  lt->add_option("--lambda-m-nm", lambda_m, "Wavelength in the medium (nm); derived when omitted");

  double duration = 1e13, eff = 0.02;
  std::optional<double> eff1, eff2, jitter;
  std::uint64_t seed = 42;
  std::size_t chunks = 1;
  auto* mc = app.add_subcommand("mc", "Synthetic time-tag stream");
  mc->add_option("--config", config_path, "Model configuration file");
  mc->add_option("--pol", pol, "Polarizer pair, e.g. HH")->required();
  mc->add_option("--duration-ps", duration, "Acquisition time (ps)");
  mc->add_option("--seed", seed, "Random seed");
  mc->add_option("--eff", eff, "Detection efficiency of both arms");
  mc->add_option("--eff1", eff1, "Arm-1 (biexciton) efficiency, overrides --eff");
  mc->add_option("--eff2", eff2, "Arm-2 (exciton) efficiency, overrides --eff");
  mc->add_option("--jitter-fwhm", jitter, "Per-photon jitter FWHM (ps). Default: irf_fwhm_ps / sqrt(2)");
  mc->add_option("--chunks", chunks, "Independent trajectory chunks");
  mc->add_option("--out", out_path, "Output file (.qdtt binary or .csv)")->required();

  std::string tags;
  std::uint64_t ibin = 10, window = 50000;
  std::optional<std::uint64_t> tag_duration;
  bool plateau = false;
  int ch_start = 1, ch_stop = 2;
  auto* cor = app.add_subcommand("correlate", "Start-stop histogram of a time-tag file");
  cor->add_option("--tags", tags, "Time-tag file (.qdtt binary or .csv)")->required();
  cor->add_option("--bin", ibin, "Bin width (ps)");
  cor->add_option("--window-ps", window, "Half width of the delay window (ps)");
  cor->add_option("--start", ch_start, "Start channel")->check(CLI::Range(1, 2));
  cor->add_option("--stop", ch_stop, "Stop channel")->check(CLI::Range(1, 2));
  cor->add_option("--duration-ps", tag_duration, "Acquisition time for normalization. Default: tag span");
  cor->add_flag("--renormalize-plateau", plateau, "Rescale so mean g2 over |tau| in [40, 50] ns is 1");
  cor->add_option("--out", out_path, "Output histogram CSV")->required();

  std::string data_dir, free_list = "g_rate,dtheta,dphi";
  double fit_lo = -std::numeric_limits<double>::infinity(), fit_hi = std::numeric_limits<double>::infinity();
  std::size_t starts = 5;
  auto* ft = app.add_subcommand("fit", "Fit the model to <P1><P2>.csv histograms");
  ft->add_option("--data-dir", data_dir, "Directory of histogram CSVs")->required();
  ft->add_option("--config", config_path, "Model configuration (fixed values and initial guesses)");
  ft->add_option("--free", free_list, "Comma-separated free parameters");
  ft->add_option("--tau-lo", fit_lo, "Fit window start (ps)");
  ft->add_option("--tau-hi", fit_hi, "Fit window end (ps)");
  ft->add_option("--multistarts", starts, "Simplex restarts");
  ft->add_option("--seed", seed, "Multistart seed");
  ft->add_option("--out", out_path, "Report JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "qdcascade: " << e.what() << " (see --help)\n";
    return kUsage;
  }

  try {
    if (sim->parsed()) {
      const ModelConfig c = detail::config_or_default(config_path);
      const auto [a, b] = detail::pol_arg(pol);
      const DelayGrid grid = detail::grid_from(tau_min, tau_max, bin);
      const CascadeModel model = build_model(c.params);
      const CorrelationEngine engine(model);
      const auto curve = detail::curve_for(engine, c, a, b, grid, irf.value_or(c.irf_fwhm_ps));
      if (out_path == "-") {
        write_curve_csv(out, curve);
      } else {
        write_curve_csv(out_path, curve);
      }
    } else if (tomo->parsed()) {
      const ModelConfig c = detail::config_or_default(config_path);
      const DelayGrid grid = detail::grid_from(tau_min, tau_max, bin);
      const CascadeModel model = build_model(c.params);
      const CorrelationEngine engine(model);
      const double fwhm = irf.value_or(c.irf_fwhm_ps);
      const std::optional<double> conv = fwhm > 0.0 ? std::optional<double>(fwhm) : std::nullopt;
      const auto panels = tomography_grid(engine, c.offsets, grid, conv);
      std::filesystem::create_directories(out_dir);
      for (const auto& p : panels) {
        write_curve_csv((std::filesystem::path(out_dir) / (pair_name(*p.meta.p1, *p.meta.p2) + ".csv")).string(),
                        p);
      }
      if (svg) write_tomography_svg((std::filesystem::path(out_dir) / "tomography.svg").string(), panels);
    } else if (ss->parsed()) {
      const ModelConfig c = detail::config_or_default(config_path);
      const CascadeModel model = build_model(c.params);
      const auto pop = steady_state(model.hamiltonian(), model.rates()).populations();
      out << "state,population\n";
      for (std::size_t k = 0; k < model.dim(); ++k) {
        out << model.basis().label(k) << ',' << format_double(pop(static_cast<Eigen::Index>(k))) << '\n';
      }
      out << "# XX/X line intensity ratio " << format_double(line_intensity_ratio(c.params, pop)) << '\n';
      const double top = pop(static_cast<Eigen::Index>(model.dim() - 1));
      if (top > 1e-6) {
        err << "qdcascade: warning: top rung occupation " << format_double(top)
            << " exceeds 1e-6; consider raising n_max\n";
      }
    } else if (lt->parsed()) {
      if (lambda_m > 0.0) life.lambda_m_nm = lambda_m;
      const double tau_r = spherical_dot_lifetime(life);
      const double lm = life.lambda_m_nm.value_or(matter_wavelength_nm(life.e_ex_ev, life.n_m));
      const double tau_x = nanowire_lifetime(tau_r, life.d_w_nm, lm);
      out << "tau_r_ns," << format_double(tau_r) << '\n'
          << "lambda_m_nm," << format_double(lm) << '\n'
          << "tau_x_ns," << format_double(tau_x) << '\n';
    } else if (mc->parsed()) {
      const ModelConfig c = detail::config_or_default(config_path);
      const auto [a, b] = detail::pol_arg(pol);
      DetectorConfig d;
      d.p1 = canonical_polarization(a);
      d.p2 = canonical_polarization(b);
      d.efficiency1 = eff1.value_or(eff);
      d.efficiency2 = eff2.value_or(eff);
      d.irf_fwhm_ps = jitter.value_or(c.irf_fwhm_ps / std::sqrt(2.0));
      d.seed = seed;
      d.offsets = c.offsets;
      const auto stream = simulate_stream(build_model(c.params), d, duration, chunks);
      write_timetags(out_path, stream, format_for_path(out_path));
      err << "qdcascade: wrote " << stream.count(1) << " + " << stream.count(2) << " events to " << out_path
          << '\n';
    } else if (cor->parsed()) {
      auto stream = parse_timetags(tags);
      if (tag_duration) stream.duration_ps = *tag_duration;
      auto h = correlate(stream, static_cast<std::uint8_t>(ch_start), static_cast<std::uint8_t>(ch_stop), ibin,
                         window);
      if (plateau) renormalize_plateau(h);
      write_histogram_csv(out_path, h);
    } else if (ft->parsed()) {
      FitProblem problem;
      problem.fixed = detail::config_or_default(config_path);
      problem.data = load_panels(data_dir);
      std::stringstream names(free_list);
      for (std::string n; std::getline(names, n, ',');) {
        if (!n.empty()) problem.free.push_back(default_free_parameter(n, problem.fixed));
      }
      problem.tau_lo_ps = fit_lo;
      problem.tau_hi_ps = fit_hi;
      problem.multistarts = starts;
      problem.seed = seed;
      const FitResult r = fit(problem);
      namespace fs = std::filesystem;
      const fs::path report(out_path);
      const fs::path rdir = report.parent_path() / (report.stem().string() + "_residuals");
      fs::create_directories(rdir);
      std::map<std::string, std::string> files;
      for (const auto& p : r.panels) {
        const auto name = pair_name(p.p1, p.p2);
        const fs::path f = rdir / (name + ".csv");
        std::ofstream os(f, std::ios::binary);
        if (!os) throw DataError("cannot open " + f.string() + " for writing");
        write_residual_csv(os, p);
        files[name] = f.string();
      }
      detail::write_text(out_path, fit_report(problem, r, files).dump(2) + "\n");
      if (!r.converged) err << "qdcascade: warning: simplex stopped at the evaluation budget\n";
      if (!r.uncertainties_reliable) err << "qdcascade: warning: Hessian not positive definite\n";
    }
  } catch (const InvalidParameter& e) {
    err << "qdcascade: invalid parameter: " << e.what() << " (see --help)\n";
    return kUsage;
  } catch (const DomainError& e) {
    err << "qdcascade: invalid parameter: " << e.what() << " (see --help)\n";
    return kUsage;
  } catch (const ParseError& e) {
    err << "qdcascade: parse error: " << e.what() << '\n';
    return kData;
  } catch (const DataError& e) {
    err << "qdcascade: data error: " << e.what() << '\n';
    return kData;
  } catch (const ConfigError& e) {
    err << "qdcascade: configuration error: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "qdcascade: data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "qdcascade: numerical failure: " << e.what() << '\n';
    return kNumerical;
  }
  return kOk;
}

}  // namespace qdcascade::cli
