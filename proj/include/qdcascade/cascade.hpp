#pragma once

/**
 * @file cascade.hpp
 * @brief Concrete biexciton-exciton cascade: multiexciton ladder, rate matrix,
 * lifetime estimates, polarization conventions and the exciton projectors.
 */

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "qdcascade/constants.hpp"
#include "qdcascade/error.hpp"
#include "qdcascade/lindblad.hpp"

namespace qdcascade {

/// Radiative lifetime of the multiexciton of order i >= 3, from the number of
/// recombination channels: tau_x / (i - 1/2) for odd i, tau_x / i for even i.
inline double multiexciton_lifetime(int order, double tau_x_ps) {
  if (order < 3) {
    throw InvalidParameter("ladder lifetimes are defined for order >= 3; orders 1 and 2 use "
                           "tau_H and tau_V");
  }
  if (!(tau_x_ps > 0.0)) throw InvalidParameter("exciton lifetime must be > 0");
  return (order % 2 != 0) ? tau_x_ps / (order - 0.5) : tau_x_ps / order;
}

/// 1/tau_x = (1/tau_H + 1/tau_V) / 2.
inline double mean_exciton_lifetime(double tau_h_ps, double tau_v_ps) {
  return 1.0 / (0.5 * (1.0 / tau_h_ps + 1.0 / tau_v_ps));
}

struct CascadeParams {
  double delta_uev = 29.0;
  double tau_h_ps = 1180.0;
  double tau_v_ps = 990.0;
  double g_rate = 1.0 / 8000.0;  // 1/ps
  int n_max = 5;
  /// Lifetimes (ps) that replace the ladder rule for the given orders (>= 3).
  std::map<int, double> explicit_tau_ps;

  void validate() const {
    if (!std::isfinite(delta_uev) || delta_uev < 0.0) {
      throw InvalidParameter("delta_uev must be finite and >= 0");
    }
    if (!(tau_h_ps > 0.0) || !(tau_v_ps > 0.0) || !std::isfinite(tau_h_ps) ||
        !std::isfinite(tau_v_ps)) {
      throw InvalidParameter("exciton lifetimes must be finite and > 0");
    }
    if (!std::isfinite(g_rate) || g_rate < 0.0) {
      throw InvalidParameter("generation rate must be finite and >= 0");
    }
    if (n_max < 2) throw InvalidParameter("n_max must be >= 2");
    for (const auto& [order, tau] : explicit_tau_ps) {
      if (order < 3 || order > n_max) {
        throw InvalidParameter("explicit lifetime given for order " + std::to_string(order) +
                               " outside [3, n_max]");
      }
      if (!(tau > 0.0) || !std::isfinite(tau)) {
        throw InvalidParameter("explicit lifetimes must be finite and > 0");
      }
    }
  }
};

/// Immutable cascade model: basis, Hamiltonian and rate matrix built from CascadeParams.
class CascadeModel {
 public:
  const CascadeParams& params() const noexcept { return params_; }
  const StateBasis& basis() const noexcept { return basis_; }
  const Hamiltonian& hamiltonian() const noexcept { return h_; }
  const RateMatrix& rates() const noexcept { return g_; }
  double tau_x_ps() const noexcept { return tau_x_ps_; }
  std::size_t dim() const noexcept { return basis_.dim(); }

  /// Lifetime used for the decay order -> order-1 (order >= 3).
  double ladder_lifetime(int order) const {
    if (auto it = params_.explicit_tau_ps.find(order); it != params_.explicit_tau_ps.end()) {
      return it->second;
    }
    return multiexciton_lifetime(order, tau_x_ps_);
  }

  /// FNV-1a over the defining parameters; tags curves with the model they came from.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* bytes = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
      }
    };
    mix(&params_.delta_uev, sizeof(double));
    mix(&params_.tau_h_ps, sizeof(double));
    mix(&params_.tau_v_ps, sizeof(double));
    mix(&params_.g_rate, sizeof(double));
    mix(&params_.n_max, sizeof(int));
    for (const auto& [order, tau] : params_.explicit_tau_ps) {
      mix(&order, sizeof(int));
      mix(&tau, sizeof(double));
    }
    return h;
  }

 private:
  friend CascadeModel build_model(const CascadeParams& p);
  CascadeModel(CascadeParams p, StateBasis basis, Hamiltonian h, RateMatrix g, double tau_x)
      : params_(std::move(p)), basis_(basis), h_(std::move(h)), g_(std::move(g)), tau_x_ps_(tau_x) {}

  CascadeParams params_;
  StateBasis basis_;
  Hamiltonian h_;
  RateMatrix g_;
  double tau_x_ps_;
};

/// Builds the ladder rate matrix: |0> feeds X_H, X_V, DE at G/4, G/4, G/2; every
/// exciton feeds XX at G and each multiexciton the next rung at G. XX decays to
/// X_H / X_V at 1/tau_H, 1/tau_V, the bright excitons to |0>, rung i to i-1 at
/// 1/tau_i. The dark exciton does not decay radiatively.
inline CascadeModel build_model(const CascadeParams& p) {
  p.validate();
  StateBasis basis(p.n_max);
  const auto n = static_cast<Eigen::Index>(basis.dim());
  const double tau_x = mean_exciton_lifetime(p.tau_h_ps, p.tau_v_ps);
  const double G = p.g_rate;

  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
  constexpr auto k0 = static_cast<Eigen::Index>(StateBasis::kEmpty);
  constexpr auto kH = static_cast<Eigen::Index>(StateBasis::kXH);
  constexpr auto kV = static_cast<Eigen::Index>(StateBasis::kXV);
  constexpr auto kD = static_cast<Eigen::Index>(StateBasis::kDark);
  constexpr auto kXX = static_cast<Eigen::Index>(StateBasis::kBiexciton);

  g(kH, k0) = G / 4.0;
  g(kV, k0) = G / 4.0;
  g(kD, k0) = G / 2.0;
  g(k0, kH) = 1.0 / p.tau_h_ps;
  g(k0, kV) = 1.0 / p.tau_v_ps;
  g(kXX, kH) = G;
  g(kXX, kV) = G;
  g(kXX, kD) = G;
  g(kH, kXX) = 1.0 / p.tau_h_ps;
  g(kV, kXX) = 1.0 / p.tau_v_ps;

  for (int order = 3; order <= p.n_max; ++order) {
    const auto upper = static_cast<Eigen::Index>(basis.index_of_order(order));
    const auto lower = upper - 1;
    double tau = multiexciton_lifetime(order, tau_x);
    if (auto it = p.explicit_tau_ps.find(order); it != p.explicit_tau_ps.end()) tau = it->second;
    g(upper, lower) = G;
    g(lower, upper) = 1.0 / tau;
  }

  Hamiltonian h = build_hamiltonian(p.delta_uev, basis);
  return CascadeModel(p, basis, std::move(h), RateMatrix(std::move(g)), tau_x);
}

/// Inputs of the spherical-dot radiative lifetime estimate.
struct LifetimeInputs {
  double e_ex_ev = 1.283;
  double n_m = 3.12;
  double f = 1.0;
  double d_w_nm = 200.0;
  std::optional<double> lambda_m_nm;  ///< derived from e_ex_ev and n_m when absent
};

/// Photon wavelength inside the medium, 2 pi hbar c / (E n).
inline double matter_wavelength_nm(double e_ex_ev, double n_m) {
  if (!(e_ex_ev > 0.0) || !(n_m > 0.0)) throw InvalidParameter("energy and index must be > 0");
  return constants::kHcEvNm / (e_ex_ev * n_m);
}

/// 1/tau_r = 4 e^2 k0^2 f / (n_m m0 c) with k0 = n_m E / (hbar c); result in ns.
/// In SI the Gaussian e^2 becomes e^2 / (4 pi eps0).
inline double spherical_dot_lifetime(const LifetimeInputs& in) {
  if (!(in.e_ex_ev > 0.0) || !(in.n_m > 0.0)) {
    throw InvalidParameter("exciton energy and refractive index must be > 0");
  }
  if (!(in.f > 0.0) || !std::isfinite(in.f)) {
    throw InvalidParameter("oscillator strength must be finite and > 0");
  }
  namespace si = constants::si;
  const double energy_j = in.e_ex_ev * si::kElectronCharge;
  const double k0 = in.n_m * energy_j / (si::kHbar * si::kSpeedOfLight);
  const double e2 = si::kElectronCharge * si::kElectronCharge /
                    (4.0 * constants::kPi * si::kVacuumPermittivity);
  const double rate = 4.0 * e2 * k0 * k0 * in.f /
                      (in.n_m * si::kElectronMass * si::kSpeedOfLight);
  return 1e9 / rate;
}

/// Mode-volume shortened lifetime tau_r (d_w / lambda_m)^2, same unit as tau_r.
inline double nanowire_lifetime(double tau_r_ns, double d_w_nm, double lambda_m_nm) {
  if (!(tau_r_ns > 0.0) || !(d_w_nm > 0.0) || !(lambda_m_nm > 0.0)) {
    throw InvalidParameter("lifetime, wire diameter and wavelength must be > 0");
  }
  const double ratio = d_w_nm / lambda_m_nm;
  return tau_r_ns * ratio * ratio;
}

// ---------------------------------------------------------------------------
// Polarization

enum class PolarizationLabel { H, V, D, Dbar, R, L };

inline constexpr PolarizationLabel kAllPolarizations[] = {
    PolarizationLabel::H, PolarizationLabel::V,    PolarizationLabel::D,
    PolarizationLabel::Dbar, PolarizationLabel::R, PolarizationLabel::L};

/// Bloch angles of a polarizer setting: theta from the H pole, phi the phase of V.
struct PolarizationSetting {
  double theta = 0.0;
  double phi = 0.0;
  std::optional<PolarizationLabel> label;
};

/// ASCII letter used in file names and flags; D-bar is spelled A.
inline char polarization_letter(PolarizationLabel l) {
  switch (l) {
    case PolarizationLabel::H: return 'H';
    case PolarizationLabel::V: return 'V';
    case PolarizationLabel::D: return 'D';
    case PolarizationLabel::Dbar: return 'A';
    case PolarizationLabel::R: return 'R';
    case PolarizationLabel::L: return 'L';
  }
  return '?';
}

inline PolarizationLabel parse_polarization_label(char c) {
  switch (c) {
    case 'H': case 'h': return PolarizationLabel::H;
    case 'V': case 'v': return PolarizationLabel::V;
    case 'D': case 'd': return PolarizationLabel::D;
    case 'A': case 'a': return PolarizationLabel::Dbar;
    case 'R': case 'r': return PolarizationLabel::R;
    case 'L': case 'l': return PolarizationLabel::L;
    default: break;
  }
  throw ParseError(std::string("unknown polarization label '") + c + "'", 0);
}

inline PolarizationSetting canonical_polarization(PolarizationLabel l) {
  constexpr double pi = constants::kPi;
  switch (l) {
    case PolarizationLabel::H: return {0.0, 0.0, l};
    case PolarizationLabel::V: return {pi, 0.0, l};
    case PolarizationLabel::D: return {pi / 2, 0.0, l};
    case PolarizationLabel::Dbar: return {pi / 2, pi, l};
    case PolarizationLabel::R: return {pi / 2, pi / 2, l};
    case PolarizationLabel::L: return {pi / 2, 3 * pi / 2, l};
  }
  throw InvalidParameter("unknown polarization label");
}

inline PolarizationSetting canonical_polarization(char c) {
  return canonical_polarization(parse_polarization_label(c));
}

/// Two-letter pair such as "HV" or "RA" -> (biexciton setting, exciton setting).
inline std::pair<PolarizationLabel, PolarizationLabel> parse_polarization_pair(std::string_view s) {
  if (s.size() != 2) {
    throw ParseError("polarization pair must have two letters, got '" + std::string(s) + "'", 0);
  }
  return {parse_polarization_label(s[0]), parse_polarization_label(s[1])};
}

inline std::string pair_name(PolarizationLabel p1, PolarizationLabel p2) {
  return {polarization_letter(p1), polarization_letter(p2)};
}

/// Systematic polarizer-frame offsets, identical for both detection arms.
struct FrameOffsets {
  double dtheta = 0.0;
  double dphi = 0.0;
  /// Detecting the biexciton photon at (theta, phi) heralds the exciton at (theta, -phi).
  bool herald_conjugate = true;
};

/// Exciton amplitude cos(theta/2)|X_H> + e^{i phi} sin(theta/2)|X_V>.
inline Eigen::Vector2cd exciton_amplitude(double theta, double phi) {
  return {Complex(std::cos(0.5 * theta), 0.0), std::polar(std::sin(0.5 * theta), phi)};
}

/// Rank-one projector on |X(theta, phi)>, zero outside the bright-exciton block.
inline DensityMatrix exciton_projector(double theta, double phi, const StateBasis& basis) {
  if (basis.dim() < 5) throw ShapeError("basis must contain at least five states");
  const Eigen::Vector2cd a = exciton_amplitude(theta, phi);
  auto m = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(basis.dim()),
                                  static_cast<Eigen::Index>(basis.dim())).eval();
  m.block<2, 2>(StateBasis::kXH, StateBasis::kXH) = a * a.adjoint();
  return DensityMatrix(std::move(m));
}

/// Bloch angles of the exciton heralded by a biexciton photon detected at p1.
inline std::pair<double, double> herald_angles(const PolarizationSetting& p1, const FrameOffsets& o) {
  const double theta = p1.theta + o.dtheta;
  const double phi = p1.phi + o.dphi;
  return {theta, o.herald_conjugate ? -phi : phi};
}

/// Bloch angles of the exciton state read out by an exciton photon detected at p2.
inline std::pair<double, double> readout_angles(const PolarizationSetting& p2, const FrameOffsets& o) {
  return {p2.theta + o.dtheta, p2.phi + o.dphi};
}

inline DensityMatrix herald_state(const PolarizationSetting& p1, const FrameOffsets& o,
                                  const StateBasis& basis) {
  const auto [theta, phi] = herald_angles(p1, o);
  return exciton_projector(theta, phi, basis);
}

inline DensityMatrix readout_projector(const PolarizationSetting& p2, const FrameOffsets& o,
                                       const StateBasis& basis) {
  const auto [theta, phi] = readout_angles(p2, o);
  return exciton_projector(theta, phi, basis);
}

/// Steady-state biexciton-to-exciton line intensity ratio,
/// rho_XX (1/tau_H + 1/tau_V) / (rho_XH / tau_H + rho_XV / tau_V).
inline double line_intensity_ratio(const CascadeParams& p, const Eigen::VectorXd& populations) {
  const double gh = 1.0 / p.tau_h_ps;
  const double gv = 1.0 / p.tau_v_ps;
  return populations(StateBasis::kBiexciton) * (gh + gv) /
         (populations(StateBasis::kXH) * gh + populations(StateBasis::kXV) * gv);
}

}  // namespace qdcascade
