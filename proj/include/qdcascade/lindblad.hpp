#pragma once

/**
 * @file lindblad.hpp
 * @brief Density matrices, the rotating-frame Hamiltonian and rate matrix of the
 * cascade, and the propagators of the Lindblad equation.
 *
 * The Lindbladian built from jump operators sqrt(g_ij)|i><j| acts element-wise:
 *
 *   d rho_ab / dt = (i/hbar)(E_b - E_a) rho_ab
 *                 + delta_ab sum_i g_ai rho_ii - 1/2 (out_a + out_b) rho_ab,
 *
 * with out_j = sum_i g_ij. Populations therefore obey the classical rate
 * equation dp/dt = M p (M = g - diag(out)) and every coherence decays
 * independently. analytic_propagate uses that closed form; numeric_propagate is
 * a plain RK4 integrator kept as an independent check.
 */

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "qdcascade/constants.hpp"
#include "qdcascade/error.hpp"

namespace qdcascade {

using Complex = std::complex<double>;

/// Ordered cascade basis: |0>, |X_H>, |X_V>, dark exciton, |XX>, then multiexcitons 3..n.
class StateBasis {
 public:
  static constexpr std::size_t kEmpty = 0;
  static constexpr std::size_t kXH = 1;
  static constexpr std::size_t kXV = 2;
  static constexpr std::size_t kDark = 3;
  static constexpr std::size_t kBiexciton = 4;

  explicit StateBasis(int max_order) : max_order_(max_order) {
    if (max_order < 2) {
      throw InvalidParameter("highest multiexciton order must be >= 2, got " +
                             std::to_string(max_order));
    }
  }

  int max_order() const noexcept { return max_order_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(max_order_) + 3; }

  /// Index of the multiexciton of the given order (2 is the biexciton).
  std::size_t index_of_order(int order) const {
    if (order < 2 || order > max_order_) {
      throw InvalidParameter("multiexciton order " + std::to_string(order) + " outside [2, " +
                             std::to_string(max_order_) + "]");
    }
    return static_cast<std::size_t>(order) + 2;
  }

  std::string label(std::size_t index) const {
    static const char* fixed[] = {"G0", "XH", "XV", "DE", "XX"};
    if (index < 5) return fixed[index];
    if (index >= dim()) throw InvalidParameter("basis index out of range");
    return "M" + std::to_string(index - 2);
  }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    out.reserve(dim());
    for (std::size_t i = 0; i < dim(); ++i) out.push_back(label(i));
    return out;
  }

  friend bool operator==(const StateBasis&, const StateBasis&) = default;

 private:
  int max_order_;
};

/// Complex matrix over the cascade basis. Hermiticity and positivity are checked
/// on demand, not enforced: projector-seeded intermediates may have trace < 1.
class DensityMatrix {
 public:
  DensityMatrix() = default;
  explicit DensityMatrix(Eigen::MatrixXcd m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols()) throw ShapeError("density matrix must be square");
  }

  static DensityMatrix zero(std::size_t dim) {
    return DensityMatrix(Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(dim),
                                                static_cast<Eigen::Index>(dim)));
  }

  /// Diagonal state |k><k|.
  static DensityMatrix basis_state(std::size_t dim, std::size_t k) {
    auto rho = zero(dim);
    rho.m_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) = 1.0;
    return rho;
  }

  static DensityMatrix from_populations(const Eigen::VectorXd& p) {
    Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(p.size(), p.size());
    m.diagonal() = p.cast<Complex>();
    return DensityMatrix(std::move(m));
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(m_.rows()); }
  const Eigen::MatrixXcd& matrix() const noexcept { return m_; }
  Complex operator()(std::size_t a, std::size_t b) const {
    return m_(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
  }

  Complex trace() const { return m_.trace(); }
  Eigen::VectorXd populations() const { return m_.diagonal().real(); }

  double hermiticity_error() const { return (m_ - m_.adjoint()).cwiseAbs().maxCoeff(); }
  bool is_hermitian(double tol = 1e-12) const { return hermiticity_error() <= tol; }

  /// Smallest eigenvalue of the Hermitian part.
  double min_eigenvalue() const {
    Eigen::MatrixXcd herm = 0.5 * (m_ + m_.adjoint());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(herm, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }

  /// Tr(P rho) for a projector (or any operator) P.
  Complex expectation(const DensityMatrix& op) const {
    if (op.dim() != dim()) throw ShapeError("operator and state dimensions differ");
    return (op.m_ * m_).trace();
  }

 private:
  Eigen::MatrixXcd m_;
};

/// Diagonal rotating-frame Hamiltonian, energies in ueV.
class Hamiltonian {
 public:
  explicit Hamiltonian(Eigen::VectorXd energies_uev) : e_(std::move(energies_uev)) {}
  std::size_t dim() const noexcept { return static_cast<std::size_t>(e_.size()); }
  const Eigen::VectorXd& energies() const noexcept { return e_; }
  double energy(std::size_t i) const { return e_(static_cast<Eigen::Index>(i)); }

 private:
  Eigen::VectorXd e_;
};

/// Transition rates in 1/ps; entry (i, j) is the rate from state j to state i.
class RateMatrix {
 public:
  explicit RateMatrix(Eigen::MatrixXd g) : g_(std::move(g)) {
    if (g_.rows() != g_.cols()) throw ShapeError("rate matrix must be square");
    for (Eigen::Index j = 0; j < g_.cols(); ++j) {
      if (g_(j, j) != 0.0) throw InvalidParameter("rate matrix diagonal must be zero");
      for (Eigen::Index i = 0; i < g_.rows(); ++i) {
        if (!std::isfinite(g_(i, j)) || g_(i, j) < 0.0) {
          throw InvalidParameter("rates must be finite and non-negative");
        }
      }
    }
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(g_.rows()); }
  const Eigen::MatrixXd& rates() const noexcept { return g_; }
  double operator()(std::size_t to, std::size_t from) const {
    return g_(static_cast<Eigen::Index>(to), static_cast<Eigen::Index>(from));
  }

  /// Total rate out of every state (column sums).
  Eigen::VectorXd outflow() const { return g_.colwise().sum().transpose(); }

  /// Rate-equation generator M with M_aa = -out_a and M_ai = g_ai; columns sum to zero.
  Eigen::MatrixXd generator() const {
    Eigen::MatrixXd m = g_;
    m.diagonal() = -outflow();
    return m;
  }

 private:
  Eigen::MatrixXd g_;
};

/// H = -Delta/2 |X_H><X_H| + Delta/2 |X_V><X_V|.
inline Hamiltonian build_hamiltonian(double delta_uev, const StateBasis& basis) {
  if (!std::isfinite(delta_uev) || delta_uev < 0.0) {
    throw InvalidParameter("fine structure splitting must be finite and >= 0");
  }
  Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis.dim()));
  e(StateBasis::kXH) = -0.5 * delta_uev;
  e(StateBasis::kXV) = 0.5 * delta_uev;
  return Hamiltonian(std::move(e));
}

namespace detail {

inline void check_shapes(std::size_t rho_dim, const Hamiltonian& h, const RateMatrix& g) {
  if (h.dim() != g.dim() || rho_dim != g.dim()) {
    throw ShapeError("state, Hamiltonian and rate matrix dimensions differ (" +
                     std::to_string(rho_dim) + ", " + std::to_string(h.dim()) + ", " +
                     std::to_string(g.dim()) + ")");
  }
}

// Shared by lindblad_derivative and the RK4 loop.
inline void derivative_into(const Eigen::MatrixXcd& rho, const Eigen::VectorXd& energy,
                            const Eigen::MatrixXd& g, const Eigen::VectorXd& out,
                            Eigen::MatrixXcd& d) {
  const Eigen::Index n = rho.rows();
  const Complex i_over_hbar(0.0, 1.0 / constants::kHbarUevPs);
  for (Eigen::Index b = 0; b < n; ++b) {
    for (Eigen::Index a = 0; a < n; ++a) {
      d(a, b) = (i_over_hbar * (energy(b) - energy(a)) - 0.5 * (out(a) + out(b))) * rho(a, b);
    }
  }
  Eigen::VectorXd p = rho.diagonal().real();
  Eigen::VectorXd gain = g * p;
  for (Eigen::Index a = 0; a < n; ++a) d(a, a) += gain(a);
}

}  // namespace detail

/// Right-hand side of the Lindblad equation.
inline DensityMatrix lindblad_derivative(const DensityMatrix& rho, const Hamiltonian& h,
                                         const RateMatrix& g) {
  detail::check_shapes(rho.dim(), h, g);
  Eigen::MatrixXcd d(rho.matrix().rows(), rho.matrix().cols());
  detail::derivative_into(rho.matrix(), h.energies(), g.rates(), g.outflow(), d);
  return DensityMatrix(std::move(d));
}

/**
 * Closed-form propagator e^{Lt}.
 *
 * Populations evolve with exp(M t), computed from the eigendecomposition of M
 * once at construction so many delays can share it. When the eigenvector
 * matrix is ill conditioned (cond > 1e8) each exp(M t) is instead evaluated by
 * scaling and squaring with a degree-13 Pade approximant.
 */
class Propagator {
 public:
  static constexpr double kMaxEigenvectorCondition = 1e8;

  Propagator(Hamiltonian h, RateMatrix g)
      : h_(std::move(h)), g_(std::move(g)), m_(g_.generator()), out_(g_.outflow()) {
    detail::check_shapes(g_.dim(), h_, g_);
    Eigen::EigenSolver<Eigen::MatrixXd> es(m_);
    if (es.info() == Eigen::Success) {
      vecs_ = es.eigenvectors();
      vals_ = es.eigenvalues();
      Eigen::JacobiSVD<Eigen::MatrixXcd> svd(vecs_);
      const auto& s = svd.singularValues();
      condition_ = s(0) / s(s.size() - 1);
      if (std::isfinite(condition_) && condition_ <= kMaxEigenvectorCondition) {
        inv_vecs_ = vecs_.inverse();
        use_eigen_ = true;
      }
    }
  }

  const Hamiltonian& hamiltonian() const noexcept { return h_; }
  const RateMatrix& rates() const noexcept { return g_; }
  const Eigen::MatrixXd& generator() const noexcept { return m_; }
  std::size_t dim() const noexcept { return g_.dim(); }

  bool uses_eigendecomposition() const noexcept { return use_eigen_; }
  double eigenvector_condition() const noexcept { return condition_; }
  const Eigen::VectorXcd& eigenvalues() const noexcept { return vals_; }

  /// exp(M t): column j holds the populations at t starting from |j><j|.
  Eigen::MatrixXd population_transfer(double t_ps) const {
    check_time(t_ps);
    if (use_eigen_) {
      Eigen::VectorXcd e = (vals_ * t_ps).array().exp().matrix();
      return (vecs_ * e.asDiagonal() * inv_vecs_).real();
    }
    Eigen::MatrixXd mt = m_ * t_ps;
    return mt.exp();
  }

  /// Single element exp(M t)(to, from), cheaper than the full matrix.
  double transfer(std::size_t to, std::size_t from, double t_ps) const {
    check_time(t_ps);
    if (!use_eigen_) return population_transfer(t_ps)(static_cast<Eigen::Index>(to),
                                                       static_cast<Eigen::Index>(from));
    Complex acc = 0.0;
    const auto r = static_cast<Eigen::Index>(to);
    const auto c = static_cast<Eigen::Index>(from);
    for (Eigen::Index k = 0; k < vals_.size(); ++k) {
      acc += vecs_(r, k) * std::exp(vals_(k) * t_ps) * inv_vecs_(k, c);
    }
    return acc.real();
  }

  /// Complex exponent of the coherence rho_ab: i(E_b - E_a)/hbar - (out_a + out_b)/2.
  Complex coherence_exponent(std::size_t a, std::size_t b) const {
    return Complex(-0.5 * (out_(static_cast<Eigen::Index>(a)) + out_(static_cast<Eigen::Index>(b))),
                   (h_.energy(b) - h_.energy(a)) / constants::kHbarUevPs);
  }

  DensityMatrix propagate(const DensityMatrix& rho0, double t_ps) const {
    detail::check_shapes(rho0.dim(), h_, g_);
    check_time(t_ps);
    const Eigen::MatrixXcd& r0 = rho0.matrix();
    const Eigen::Index n = r0.rows();
    Eigen::MatrixXcd r(n, n);
    for (Eigen::Index b = 0; b < n; ++b) {
      for (Eigen::Index a = 0; a < n; ++a) {
        if (a == b) continue;
        r(a, b) = r0(a, b) * std::exp(coherence_exponent(static_cast<std::size_t>(a),
                                                         static_cast<std::size_t>(b)) * t_ps);
      }
    }
    // Real and imaginary parts of the diagonal are transported separately so that
    // non-Hermitian inputs still follow the linear map.
    Eigen::MatrixXd p = population_transfer(t_ps);
    Eigen::VectorXcd diag = p.cast<Complex>() * r0.diagonal();
    for (Eigen::Index a = 0; a < n; ++a) r(a, a) = diag(a);
    return DensityMatrix(std::move(r));
  }

 private:
  static void check_time(double t_ps) {
    if (!std::isfinite(t_ps) || t_ps < 0.0) {
      throw InvalidParameter("propagation time must be finite and >= 0");
    }
  }

  Hamiltonian h_;
  RateMatrix g_;
  Eigen::MatrixXd m_;
  Eigen::VectorXd out_;
  Eigen::MatrixXcd vecs_;
  Eigen::MatrixXcd inv_vecs_;
  Eigen::VectorXcd vals_;
  double condition_ = std::numeric_limits<double>::infinity();
  bool use_eigen_ = false;
};

inline DensityMatrix analytic_propagate(const DensityMatrix& rho0, double t_ps,
                                        const Hamiltonian& h, const RateMatrix& g) {
  return Propagator(h, g).propagate(rho0, t_ps);
}

// RK4 error at 0.1 ps is ~1e-14 at a 29 ueV splitting (precession 0.044/ps).
inline constexpr double kDefaultOdeStepPs = 0.1;

/// Fixed-step classical RK4 integration of lindblad_derivative. The step is
/// shrunk so that an integer number of steps lands exactly on t_ps.
inline DensityMatrix numeric_propagate(const DensityMatrix& rho0, double t_ps, const Hamiltonian& h,
                                       const RateMatrix& g, double step_ps = kDefaultOdeStepPs) {
  detail::check_shapes(rho0.dim(), h, g);
  if (!std::isfinite(t_ps) || t_ps < 0.0) throw InvalidParameter("t must be finite and >= 0");
  if (!std::isfinite(step_ps) || step_ps <= 0.0) throw InvalidParameter("step must be > 0");
  if (!rho0.matrix().allFinite()) throw InvalidParameter("initial state has non-finite entries");
  if (t_ps == 0.0) return rho0;

  const auto steps = static_cast<long long>(std::ceil(t_ps / step_ps));
  const double dt = t_ps / static_cast<double>(steps);
  const Eigen::VectorXd& e = h.energies();
  const Eigen::MatrixXd& rates = g.rates();
  const Eigen::VectorXd out = g.outflow();

  const Eigen::Index n = rho0.matrix().rows();
  // Same right-hand side as derivative_into with the coherence factors hoisted.
  Eigen::MatrixXcd coeff(n, n);
  const Complex i_over_hbar(0.0, 1.0 / constants::kHbarUevPs);
  for (Eigen::Index b = 0; b < n; ++b)
    for (Eigen::Index a = 0; a < n; ++a) coeff(a, b) = i_over_hbar * (e(b) - e(a)) - 0.5 * (out(a) + out(b));
  Eigen::VectorXd pop(n), gain(n);
  auto rhs = [&](const Eigen::MatrixXcd& rho, Eigen::MatrixXcd& d) {
    d = coeff.cwiseProduct(rho);
    pop = rho.diagonal().real();
    gain.noalias() = rates * pop;
    d.diagonal().real() += gain;
  };
  Eigen::MatrixXcd y = rho0.matrix();
  Eigen::MatrixXcd k1(n, n), k2(n, n), k3(n, n), k4(n, n), tmp(n, n);
  for (long long s = 0; s < steps; ++s) {
    rhs(y, k1);
    tmp = y + (0.5 * dt) * k1;
    rhs(tmp, k2);
    tmp = y + (0.5 * dt) * k2;
    rhs(tmp, k3);
    tmp = y + dt * k3;
    rhs(tmp, k4);
    y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return DensityMatrix(std::move(y));
}

/**
 * Stationary state of the driven cascade.
 *
 * The populations are the trace-normalised null vector of M; all coherences
 * decay, so the result is diagonal. A null space of dimension other than one
 * (e.g. G = 0 with two absorbing states) raises DegenerateSteadyState.
 */
inline DensityMatrix steady_state(const Hamiltonian& h, const RateMatrix& g) {
  detail::check_shapes(g.dim(), h, g);
  const Eigen::MatrixXd m = g.generator();
  const Eigen::Index n = m.rows();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const Eigen::VectorXd& s = svd.singularValues();
  const double tol = 1e-13 * s(0);
  Eigen::Index nullity = 0;
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    if (s(k) <= tol) ++nullity;
  }
  if (s(0) == 0.0) nullity = n;
  if (nullity != 1) {
    throw DegenerateSteadyState("rate-equation generator has a null space of dimension " +
                                std::to_string(nullity) + "; expected 1");
  }

  // Replace one (redundant) balance equation by the normalisation condition.
  Eigen::MatrixXd a = m;
  a.row(n - 1).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs(n - 1) = 1.0;
  Eigen::VectorXd p = a.fullPivLu().solve(rhs);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (p(k) < 0.0 && p(k) > -1e-15) p(k) = 0.0;
  }
  return DensityMatrix::from_populations(p);
}

}  // namespace qdcascade
