#pragma once

// Shared fixtures and independent reference implementations for the tests.

#include <Eigen/Dense>

#include <complex>
#include <random>
#include <vector>

#include "qdcascade/cascade.hpp"
#include "qdcascade/lindblad.hpp"

namespace qdcascade::testing {

inline CascadeParams fitted_params() {
  CascadeParams p;
  p.delta_uev = 29.0;
  p.tau_h_ps = 1180.0;
  p.tau_v_ps = 990.0;
  p.g_rate = 1.0 / 8000.0;
  p.n_max = 5;
  return p;
}

inline FrameOffsets fitted_offsets() {
  return {0.10 * constants::kPi, 0.02 * constants::kPi, true};
}

/// Random Hermitian matrix (not necessarily positive).
inline Eigen::MatrixXcd random_hermitian(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXcd a(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = {n(rng), n(rng)};
  return 0.5 * (a + a.adjoint());
}

/// Random physical density matrix A A^dagger / Tr.
inline DensityMatrix random_state(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXcd a(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = {n(rng), n(rng)};
  Eigen::MatrixXcd rho = a * a.adjoint();
  rho /= rho.trace();
  return DensityMatrix(rho);
}

/// Lindbladian assembled term by term from -i/hbar [H, rho] and the
/// dissipators of the explicit jump operators sqrt(g_ij)|i><j|.
inline Eigen::MatrixXcd brute_force_lindbladian(const Eigen::MatrixXcd& rho, const Hamiltonian& h,
                                                const RateMatrix& g) {
  const auto d = static_cast<Eigen::Index>(h.dim());
  Eigen::MatrixXcd hm = Eigen::MatrixXcd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) hm(i, i) = h.energies()(i);
  const std::complex<double> minus_i_over_hbar(0.0, -1.0 / constants::kHbarUevPs);
  Eigen::MatrixXcd out = minus_i_over_hbar * (hm * rho - rho * hm);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double rate = g.rates()(i, j);
      if (rate == 0.0) continue;
      Eigen::MatrixXcd jump = Eigen::MatrixXcd::Zero(d, d);
      jump(i, j) = std::sqrt(rate);
      const Eigen::MatrixXcd jd = jump.adjoint();
      // D(rho) = 1/2 [J rho, J^+] + 1/2 [J, rho J^+]
      out += 0.5 * ((jump * rho) * jd - jd * (jump * rho)) + 0.5 * (jump * (rho * jd) - (rho * jd) * jump);
    }
  }
  return out;
}

inline double max_abs_diff(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace qdcascade::testing

#include "qdcascade/correlation.hpp"

namespace qdcascade::testing {

/// Amplitude of the exp(-gamma tau) cos(omega tau + phase) component of a
/// positive-delay curve. Linear least squares against the incoherent
/// exponentials exp(lambda_k tau) (eigenvalues of the rate generator) plus the
/// damped cosine/sine pair at the coherence rate and the precession frequency.
inline double damped_cosine_amplitude(const CorrelationEngine& engine, const std::vector<double>& tau,
                                      const std::vector<double>& values) {
  const auto& prop = engine.propagator();
  const Complex kappa = prop.coherence_exponent(StateBasis::kXH, StateBasis::kXV);
  const Eigen::VectorXcd& lambda = prop.eigenvalues();
  const auto n = static_cast<Eigen::Index>(tau.size());
  const Eigen::Index cols = lambda.size() + 2;
  Eigen::MatrixXd a(n, cols);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = tau[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < lambda.size(); ++k) a(i, k) = std::exp(lambda(k).real() * t);
    const double env = std::exp(kappa.real() * t);
    a(i, lambda.size()) = env * std::cos(kappa.imag() * t);
    a(i, lambda.size() + 1) = env * std::sin(kappa.imag() * t);
    b(i) = values[static_cast<std::size_t>(i)];
  }
  Eigen::VectorXd x = a.colPivHouseholderQr().solve(b);
  return std::hypot(x(lambda.size()), x(lambda.size() + 1));
}

/// Local maxima of g2(tau > 0) in (0, tau_end], refined by a parabola through
/// three samples spaced `step` apart.
template <class F>
std::vector<double> local_maxima(F&& g2, double tau_end, double step) {
  std::vector<double> out;
  double prev2 = g2(step), prev1 = g2(2 * step);
  for (double t = 3 * step; t <= tau_end; t += step) {
    const double cur = g2(t);
    if (prev1 > prev2 && prev1 >= cur) {
      const double denom = prev2 - 2 * prev1 + cur;
      const double shift = denom != 0.0 ? 0.5 * (prev2 - cur) / denom : 0.0;
      out.push_back(t - step + shift * step);
    }
    prev2 = prev1;
    prev1 = cur;
  }
  return out;
}

}  // namespace qdcascade::testing
