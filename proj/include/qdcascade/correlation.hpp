#pragma once

/**
 * @file correlation.hpp
 * @brief Polarization-resolved biexciton-exciton intensity correlations.
 *
 * For tau > 0 a biexciton photon detected at P1 heralds the exciton in
 * Pi_1 = |X(theta_1, phi_1)><X(theta_1, phi_1)|, which then evolves under the
 * Lindbladian until the exciton photon reads it out at P2:
 *
 *   g2(tau > 0) = Tr[Pi_2 e^{L tau}(Pi_1)] / Tr[Pi_2 rho_ss].
 *
 * For tau < 0 the exciton photon comes first and leaves the dot empty:
 *
 *   g2(tau < 0) = Tr[Pi_XX e^{L |tau|}(Pi_0)] / Tr[Pi_XX rho_ss],
 *
 * which does not depend on either polarizer.
 *
 * Because e^{L tau} is linear and acts on the exciton block through four
 * population transfers and one coherence factor, every panel is a fixed linear
 * combination of seven shared delay functions. CurveBasis evaluates (and, when
 * requested, convolves) those once so that the 36 tomography panels and the
 * fit objective only recombine them.
 */

#include <Eigen/Dense>

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "qdcascade/cascade.hpp"
#include "qdcascade/error.hpp"
#include "qdcascade/lindblad.hpp"

namespace qdcascade {

/// Uniform delay grid of bins [tau_min + k b, tau_min + (k+1) b). tau = 0 is a bin edge.
class DelayGrid {
 public:
  DelayGrid(double tau_min_ps, double tau_max_ps, double bin_ps) : tau_min_(tau_min_ps), bin_(bin_ps) {
    if (!std::isfinite(tau_min_ps) || !std::isfinite(tau_max_ps) || !std::isfinite(bin_ps) ||
        !(bin_ps > 0.0)) {
      throw InvalidParameter("delay grid needs finite bounds and a positive bin width");
    }
    if (!(tau_min_ps < 0.0 && tau_max_ps > 0.0)) {
      throw InvalidParameter("delay grid must satisfy tau_min < 0 < tau_max");
    }
    const double neg = -tau_min_ps / bin_ps;
    const double total = (tau_max_ps - tau_min_ps) / bin_ps;
    if (std::abs(neg - std::round(neg)) > 1e-9 * std::max(1.0, neg) ||
        std::abs(total - std::round(total)) > 1e-9 * std::max(1.0, total)) {
      throw InvalidParameter("delay grid must place tau = 0 and both ends on bin edges");
    }
    negative_bins_ = static_cast<std::size_t>(std::llround(neg));
    size_ = static_cast<std::size_t>(std::llround(total));
  }

  std::size_t size() const noexcept { return size_; }
  std::size_t negative_bins() const noexcept { return negative_bins_; }
  double bin() const noexcept { return bin_; }
  double tau_min() const noexcept { return tau_min_; }
  double tau_max() const noexcept { return tau_min_ + static_cast<double>(size_) * bin_; }

  /// Bin centre. Computed from the integer index relative to tau = 0 so that
  /// mirrored bins are exactly symmetric.
  double center(std::size_t k) const {
    const auto rel = static_cast<double>(static_cast<long long>(k) -
                                         static_cast<long long>(negative_bins_));
    return (rel + 0.5) * bin_;
  }

  std::vector<double> centers() const {
    std::vector<double> out(size_);
    for (std::size_t k = 0; k < size_; ++k) out[k] = center(k);
    return out;
  }

  /// Same range subdivided by an integer factor.
  DelayGrid refined(std::size_t factor) const {
    if (factor == 0) throw InvalidParameter("refinement factor must be >= 1");
    return DelayGrid(tau_min_, tau_max(), bin_ / static_cast<double>(factor));
  }

  /// Same bin width with `bins` extra bins on each side.
  DelayGrid widened(std::size_t bins) const {
    const double pad = static_cast<double>(bins) * bin_;
    return DelayGrid(tau_min_ - pad, tau_max() + pad, bin_);
  }

  friend bool operator==(const DelayGrid& a, const DelayGrid& b) {
    return a.size_ == b.size_ && a.negative_bins_ == b.negative_bins_ && a.bin_ == b.bin_;
  }

 private:
  double tau_min_;
  double bin_;
  std::size_t negative_bins_ = 0;
  std::size_t size_ = 0;
};

struct CurveMeta {
  std::optional<PolarizationLabel> p1;
  std::optional<PolarizationLabel> p2;
  std::uint64_t model_hash = 0;
  bool convolved = false;
  double irf_fwhm_ps = 0.0;
};

/// g2 sampled per bin of a DelayGrid.
struct CorrelationCurve {
  DelayGrid grid;
  std::vector<double> values;
  CurveMeta meta;
};

/// Shared, read-only state for evaluating correlation curves of one model.
class CorrelationEngine {
 public:
  explicit CorrelationEngine(const CascadeModel& model)
      : model_(model),
        propagator_(model.hamiltonian(), model.rates()),
        steady_(steady_state(model.hamiltonian(), model.rates())),
        pop_ss_(steady_.populations()) {
    coherence_exponent_ = propagator_.coherence_exponent(StateBasis::kXH, StateBasis::kXV);
    if (!(pop_ss_(StateBasis::kBiexciton) > 0.0)) {
      throw DegenerateSteadyState("steady state has no biexciton population");
    }
  }

  const CascadeModel& model() const noexcept { return model_; }
  const Propagator& propagator() const noexcept { return propagator_; }
  const DensityMatrix& steady() const noexcept { return steady_; }
  const Eigen::VectorXd& steady_populations() const noexcept { return pop_ss_; }

  /// Delay functions shared by every panel at a positive delay.
  struct PositiveTerms {
    double hh, hv, vh, vv;  ///< exp(M tau)(to, from) within the bright-exciton block
    Complex coherence;      ///< rho_HV(tau) / rho_HV(0)
  };

  PositiveTerms positive_terms(double tau_ps) const {
    constexpr std::size_t h = StateBasis::kXH;
    constexpr std::size_t v = StateBasis::kXV;
    PositiveTerms t{};
    if (propagator_.uses_eigendecomposition()) {
      t.hh = propagator_.transfer(h, h, tau_ps);
      t.hv = propagator_.transfer(h, v, tau_ps);
      t.vh = propagator_.transfer(v, h, tau_ps);
      t.vv = propagator_.transfer(v, v, tau_ps);
    } else {
      const Eigen::MatrixXd p = propagator_.population_transfer(tau_ps);
      t.hh = p(h, h);
      t.hv = p(h, v);
      t.vh = p(v, h);
      t.vv = p(v, v);
    }
    t.coherence = std::exp(coherence_exponent_ * tau_ps);
    return t;
  }

  /// g2 at a negative delay, evaluated at |tau|.
  double negative_value(double abs_tau_ps) const {
    return propagator_.transfer(StateBasis::kBiexciton, StateBasis::kEmpty, abs_tau_ps) /
           pop_ss_(StateBasis::kBiexciton);
  }

  /// Weights that turn PositiveTerms into the g2 of one polarization pair.
  struct PanelWeights {
    std::array<double, 6> w{};  ///< for hh, hv, vh, vv, Re C, Im C (already divided by the denominator)
  };

  PanelWeights panel_weights(const PolarizationSetting& p1, const PolarizationSetting& p2,
                             const FrameOffsets& o) const {
    const auto [th, ph] = herald_angles(p1, o);
    const auto [tr, pr] = readout_angles(p2, o);
    const Eigen::Vector2cd herald = exciton_amplitude(th, ph);
    const Eigen::Vector2cd read = exciton_amplitude(tr, pr);
    const double p_h = std::norm(herald(0));
    const double p_v = std::norm(herald(1));
    const Complex rho_hv = herald(0) * std::conj(herald(1));
    const double r_h = std::norm(read(0));
    const double r_v = std::norm(read(1));
    const Complex z = std::conj(read(0)) * read(1) * rho_hv;
    const double denom = readout_denominator(p2, o);
    PanelWeights out;
    out.w = {r_h * p_h / denom, r_h * p_v / denom, r_v * p_h / denom,
             r_v * p_v / denom, 2.0 * z.real() / denom, -2.0 * z.imag() / denom};
    return out;
  }

  /// Tr[Pi_2 rho_ss] for the readout setting.
  double readout_denominator(const PolarizationSetting& p2, const FrameOffsets& o) const {
    const auto [tr, pr] = readout_angles(p2, o);
    const Eigen::Vector2cd read = exciton_amplitude(tr, pr);
    const double d = std::norm(read(0)) * pop_ss_(StateBasis::kXH) +
                     std::norm(read(1)) * pop_ss_(StateBasis::kXV);
    if (!(d > 0.0)) throw DegenerateSteadyState("steady-state exciton occupation is zero");
    return d;
  }

  static double combine(const PanelWeights& pw, const PositiveTerms& t) {
    const auto& w = pw.w;
    return w[0] * t.hh + w[1] * t.hv + w[2] * t.vh + w[3] * t.vv + w[4] * t.coherence.real() +
           w[5] * t.coherence.imag();
  }

  double g2_positive(const PolarizationSetting& p1, const PolarizationSetting& p2,
                     const FrameOffsets& o, double tau_ps) const {
    if (!(tau_ps > 0.0)) throw DomainError("g2_positive needs tau > 0; use g2_negative for tau < 0");
    return combine(panel_weights(p1, p2, o), positive_terms(tau_ps));
  }

  double g2_negative(double tau_ps) const {
    if (!(tau_ps < 0.0)) throw DomainError("g2_negative needs tau < 0; use g2_positive for tau > 0");
    return negative_value(-tau_ps);
  }

 private:
  CascadeModel model_;
  Propagator propagator_;
  DensityMatrix steady_;
  Eigen::VectorXd pop_ss_;
  Complex coherence_exponent_;
};

/// g2 for tau > 0 straight from the definition: full density-matrix propagation
/// of the heralded state and a trace against the readout projector.
inline double g2_positive(const CascadeModel& model, const PolarizationSetting& p1,
                          const PolarizationSetting& p2, const FrameOffsets& o, double tau_ps) {
  if (!(tau_ps > 0.0)) throw DomainError("g2_positive needs tau > 0; use g2_negative for tau < 0");
  const auto& h = model.hamiltonian();
  const auto& g = model.rates();
  const DensityMatrix rho_ss = steady_state(h, g);
  const DensityMatrix herald = herald_state(p1, o, model.basis());
  const DensityMatrix read = readout_projector(p2, o, model.basis());
  const DensityMatrix evolved = analytic_propagate(herald, tau_ps, h, g);
  return evolved.expectation(read).real() / rho_ss.expectation(read).real();
}

/// g2 for tau < 0 from the definition; independent of both polarizers.
inline double g2_negative(const CascadeModel& model, double tau_ps) {
  if (!(tau_ps < 0.0)) throw DomainError("g2_negative needs tau < 0; use g2_positive for tau > 0");
  const auto& h = model.hamiltonian();
  const auto& g = model.rates();
  const std::size_t dim = model.dim();
  const DensityMatrix rho_ss = steady_state(h, g);
  const DensityMatrix empty = DensityMatrix::basis_state(dim, StateBasis::kEmpty);
  const DensityMatrix pi_xx = DensityMatrix::basis_state(dim, StateBasis::kBiexciton);
  const DensityMatrix evolved = analytic_propagate(empty, -tau_ps, h, g);
  return evolved.expectation(pi_xx).real() / rho_ss.expectation(pi_xx).real();
}

// ---------------------------------------------------------------------------
// Detector response

inline constexpr double kFwhmToSigma = 0.42466090014400953;  // 1 / (2 sqrt(2 ln 2))

/// Gaussian response integrated over pairs of `step`-wide cells: weight m is
/// the mean over cell m of the Gaussian blur of a unit box on cell 0. Applied to
/// cell averages it yields exact cell averages for piecewise-constant input, so
/// a step on a cell edge costs no discretisation error. Truncated at +-5 sigma
/// and renormalised to unit sum.
inline std::vector<double> gaussian_kernel(double fwhm_ps, double step_ps) {
  const double sigma = fwhm_ps * kFwhmToSigma;
  // F(u) = integral of the Gaussian CDF up to u
  auto F = [sigma](double u) {
    const double z = u / sigma;
    return u * 0.5 * std::erfc(-z / std::sqrt(2.0)) + sigma * std::exp(-0.5 * z * z) / std::sqrt(2.0 * constants::kPi);
  };
  const auto half = static_cast<std::size_t>(std::floor(5.0 * sigma / step_ps));
  std::vector<double> w(2 * half + 1);
  double sum = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    const double m = static_cast<double>(j) - static_cast<double>(half);
    const double u = m * step_ps;
    // symmetric second difference; evaluate on |u| to avoid cancellation in the tail
    const double a = std::abs(u);
    w[j] = (F(a + step_ps) - 2.0 * F(a) + F(a - step_ps)) / step_ps;
    sum += w[j];
  }
  for (double& x : w) x /= sum;
  return w;
}

/// Discrete convolution; near the ends the kernel is renormalised over the
/// samples that exist, so constant input stays constant.
inline std::vector<double> convolve_samples(const std::vector<double>& v, const std::vector<double>& kernel) {
  const auto n = static_cast<long long>(v.size());
  const auto half = static_cast<long long>(kernel.size() / 2);
  std::vector<double> out(v.size());
  for (long long i = 0; i < n; ++i) {
    double acc = 0.0;
    double weight = 0.0;
    const long long lo = std::max(0LL, i - half);
    const long long hi = std::min(n - 1, i + half);
    for (long long j = lo; j <= hi; ++j) {
      const double w = kernel[static_cast<std::size_t>(j - i + half)];
      acc += w * v[static_cast<std::size_t>(j)];
      weight += w;
    }
    out[static_cast<std::size_t>(i)] = acc / weight;
  }
  return out;
}

/// Convolution with a Gaussian detector response on the curve's own grid.
/// The grid must resolve the response (bin <= fwhm / 8).
inline CorrelationCurve convolve_irf(const CorrelationCurve& curve, double fwhm_ps) {
  if (curve.meta.convolved) throw StateError("curve is already convolved with a detector response");
  if (!std::isfinite(fwhm_ps) || !(fwhm_ps > 0.0)) throw InvalidParameter("IRF FWHM must be > 0");
  if (curve.grid.bin() > fwhm_ps / 8.0 * (1.0 + 1e-12)) {
    throw InvalidParameter("bin width exceeds FWHM/8; sample the curve on a finer grid");
  }
  CorrelationCurve out = curve;
  out.values = convolve_samples(curve.values, gaussian_kernel(fwhm_ps, curve.grid.bin()));
  out.meta.convolved = true;
  out.meta.irf_fwhm_ps = fwhm_ps;
  return out;
}

/**
 * The seven delay functions of a model on one output grid.
 *
 * Unconvolved: point samples at bin centres. Convolved: sampled on a grid
 * oversampled so the sub-bin is <= fwhm/32 and padded by 5 sigma on both sides,
 * convolved there, then averaged back onto the output bins.
 */
class CurveBasis {
 public:
  // Treating samples as cell averages costs O(h^2); at fwhm/32 the result is
  // within ~1e-5 of the converged curve relative to its peak.
  static constexpr double kSubBinsPerFwhm = 32.0;

  CurveBasis(const CorrelationEngine& engine, const DelayGrid& grid,
             std::optional<double> irf_fwhm_ps = std::nullopt, std::size_t oversample = 0)
      : grid_(grid), fwhm_(irf_fwhm_ps.value_or(0.0)), model_hash_(engine.model().hash()) {
    if (!irf_fwhm_ps) {
      fill(engine, grid_, functions_);
      return;
    }
    if (!std::isfinite(*irf_fwhm_ps) || !(*irf_fwhm_ps > 0.0)) {
      throw InvalidParameter("IRF FWHM must be > 0");
    }
    if (oversample == 0) {
      oversample = static_cast<std::size_t>(std::ceil(kSubBinsPerFwhm * grid.bin() / *irf_fwhm_ps - 1e-9));
      oversample = std::max<std::size_t>(oversample, 1);
    }
    const DelayGrid fine = grid.refined(oversample);
    const double sigma = *irf_fwhm_ps * kFwhmToSigma;
    const auto pad_coarse = static_cast<std::size_t>(std::ceil(5.0 * sigma / grid.bin()));
    const DelayGrid padded = fine.widened(pad_coarse * oversample);
    std::array<std::vector<double>, 7> raw;
    fill(engine, padded, raw);
    const auto kernel = gaussian_kernel(*irf_fwhm_ps, fine.bin());
    const std::size_t offset = pad_coarse * oversample;
    for (std::size_t f = 0; f < raw.size(); ++f) {
      const std::vector<double> conv = convolve_samples(raw[f], kernel);
      functions_[f].assign(grid.size(), 0.0);
      for (std::size_t k = 0; k < grid.size(); ++k) {
        double acc = 0.0;
        for (std::size_t s = 0; s < oversample; ++s) acc += conv[offset + k * oversample + s];
        functions_[f][k] = acc / static_cast<double>(oversample);
      }
    }
  }

  const DelayGrid& grid() const noexcept { return grid_; }
  bool convolved() const noexcept { return fwhm_ > 0.0; }

  std::vector<double> panel(const CorrelationEngine::PanelWeights& pw) const {
    std::vector<double> v = functions_[0];
    for (std::size_t f = 0; f < 6; ++f) {
      const double w = pw.w[f];
      if (w == 0.0) continue;
      const auto& src = functions_[f + 1];
      for (std::size_t k = 0; k < v.size(); ++k) v[k] += w * src[k];
    }
    return v;
  }

  CorrelationCurve curve(const CorrelationEngine& engine, PolarizationLabel l1, PolarizationLabel l2,
                         const FrameOffsets& o) const {
    CorrelationCurve c{grid_, panel(engine.panel_weights(canonical_polarization(l1),
                                                         canonical_polarization(l2), o)),
                       {}};
    c.meta = {l1, l2, model_hash_, convolved(), fwhm_};
    return c;
  }

 private:
  // functions[0] is g2 for tau < 0 (zero for tau > 0); functions[1..6] are the
  // PositiveTerms components for tau > 0 (zero for tau < 0).
  static void fill(const CorrelationEngine& engine, const DelayGrid& grid,
                   std::array<std::vector<double>, 7>& out) {
    for (auto& f : out) f.assign(grid.size(), 0.0);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const double tau = grid.center(k);
      if (tau < 0.0) {
        out[0][k] = engine.negative_value(-tau);
      } else {
        const auto t = engine.positive_terms(tau);
        out[1][k] = t.hh;
        out[2][k] = t.hv;
        out[3][k] = t.vh;
        out[4][k] = t.vv;
        out[5][k] = t.coherence.real();
        out[6][k] = t.coherence.imag();
      }
    }
  }

  DelayGrid grid_;
  double fwhm_;
  std::uint64_t model_hash_;
  std::array<std::vector<double>, 7> functions_;
};

/// Unconvolved g2 sampled at the bin centres of the grid.
inline CorrelationCurve g2_curve(const CorrelationEngine& engine, const PolarizationSetting& p1,
                                 const PolarizationSetting& p2, const FrameOffsets& o,
                                 const DelayGrid& grid) {
  CurveBasis basis(engine, grid);
  CorrelationCurve c{grid, basis.panel(engine.panel_weights(p1, p2, o)), {}};
  c.meta = {p1.label, p2.label, engine.model().hash(), false, 0.0};
  return c;
}

inline CorrelationCurve g2_curve(const CascadeModel& model, const PolarizationSetting& p1,
                                 const PolarizationSetting& p2, const FrameOffsets& o,
                                 double tau_min_ps, double tau_max_ps, double bin_ps) {
  return g2_curve(CorrelationEngine(model), p1, p2, o, DelayGrid(tau_min_ps, tau_max_ps, bin_ps));
}

/// Bin-averaged g2 convolved with a Gaussian response of the given FWHM.
inline CorrelationCurve convolved_curve(const CorrelationEngine& engine, const PolarizationSetting& p1,
                                        const PolarizationSetting& p2, const FrameOffsets& o,
                                        const DelayGrid& grid, double fwhm_ps,
                                        std::size_t oversample = 0) {
  CurveBasis basis(engine, grid, fwhm_ps, oversample);
  CorrelationCurve c{grid, basis.panel(engine.panel_weights(p1, p2, o)), {}};
  c.meta = {p1.label, p2.label, engine.model().hash(), true, fwhm_ps};
  return c;
}

/// All 36 (P1, P2) panels, P1-major in the order H, V, D, A, R, L. The
/// negative-delay half is computed once and shared by every panel.
inline std::vector<CorrelationCurve> tomography_grid(const CorrelationEngine& engine,
                                                     const FrameOffsets& o, const DelayGrid& grid,
                                                     std::optional<double> irf_fwhm_ps = std::nullopt) {
  CurveBasis basis(engine, grid, irf_fwhm_ps);
  std::vector<CorrelationCurve> out;
  out.reserve(36);
  for (PolarizationLabel l1 : kAllPolarizations) {
    for (PolarizationLabel l2 : kAllPolarizations) out.push_back(basis.curve(engine, l1, l2, o));
  }
  return out;
}

inline std::vector<CorrelationCurve> tomography_grid(const CascadeModel& model, const FrameOffsets& o,
                                                     const DelayGrid& grid,
                                                     std::optional<double> irf_fwhm_ps = std::nullopt) {
  return tomography_grid(CorrelationEngine(model), o, grid, irf_fwhm_ps);
}

// ---------------------------------------------------------------------------
// Output

/// Shortest decimal string that round-trips to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

/// Curve CSV: header `tau_ps,g2`, one row per bin centre, LF line endings.
inline void write_curve_csv(std::ostream& os, const CorrelationCurve& c) {
  os << "tau_ps,g2\n";
  for (std::size_t k = 0; k < c.values.size(); ++k) {
    os << format_double(c.grid.center(k)) << ',' << format_double(c.values[k]) << '\n';
  }
}

inline void write_curve_csv(const std::string& path, const CorrelationCurve& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_curve_csv(os, c);
}

}  // namespace qdcascade
