#pragma once

/**
 * @file montecarlo.hpp
 * @brief Quantum-jump generator of polarization-filtered detection streams.
 *
 * Outside the bright-exciton manifold the dot performs classical jumps with
 * the model's rates. Inside it the exciton is a pure two-component amplitude
 * evolving under the non-Hermitian generator
 *
 *   a_H(t) = a_H e^{+i Delta t / 2 hbar} e^{-(1/tau_H + G) t / 2},
 *   a_V(t) = a_V e^{-i Delta t / 2 hbar} e^{-(1/tau_V + G) t / 2},
 *
 * whose norm decay |a_H|^2 e^{-(1/tau_H + G) t} + |a_V|^2 e^{-(1/tau_V + G) t}
 * is a mixture of two exponentials and is sampled exactly.
 *
 * A biexciton decay emits sqrt(1/tau_H)|H>|X_H> + sqrt(1/tau_V)|V>|X_V>. Arm 1
 * projects the photon on its polarizer with probability efficiency1; a
 * detection leaves the exciton in the projected state. Without a detection the
 * exciton is left in the conditional mixture, which is sampled through its
 * eigenvectors (an exact unravelling of that mixture).
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "qdcascade/cascade.hpp"
#include "qdcascade/correlation.hpp"
#include "qdcascade/error.hpp"
#include "qdcascade/parallel.hpp"
#include "qdcascade/rng.hpp"
#include "qdcascade/timetag.hpp"

namespace qdcascade {

struct DetectorConfig {
  PolarizationSetting p1 = canonical_polarization(PolarizationLabel::H);  ///< arm 1, biexciton line
  PolarizationSetting p2 = canonical_polarization(PolarizationLabel::H);  ///< arm 2, exciton line
  double efficiency1 = 1.0;
  double efficiency2 = 1.0;
  /// Per-photon Gaussian jitter. The start-stop response is sqrt(2) wider.
  double irf_fwhm_ps = 0.0;
  std::uint64_t seed = 0;
  /// Lab-to-dot polarization frame offsets applied to both polarizers.
  FrameOffsets offsets{};

  void validate() const {
    auto eff_ok = [](double e) { return std::isfinite(e) && e >= 0.0 && e <= 1.0; };
    if (!eff_ok(efficiency1) || !eff_ok(efficiency2)) throw InvalidParameter("efficiencies must lie in [0, 1]");
    if (!std::isfinite(irf_fwhm_ps) || irf_fwhm_ps < 0.0) throw InvalidParameter("jitter FWHM must be >= 0");
  }
};

namespace detail {

// Exciton amplitude stored as populations and the relative phase of a_V to a_H.
struct ExcitonAmplitude {
  double p_h;
  double p_v;
  double phase;
};

inline ExcitonAmplitude to_amplitude(const Eigen::Vector2cd& a) {
  const double n = a.squaredNorm();
  return {std::norm(a(0)) / n, std::norm(a(1)) / n, std::arg(a(1)) - std::arg(a(0))};
}

class Trajectory {
 public:
  Trajectory(const CascadeModel& model, const DetectorConfig& cfg)
      : g_(model.params().g_rate),
        gh_(1.0 / model.params().tau_h_ps),
        gv_(1.0 / model.params().tau_v_ps),
        omega_(model.params().delta_uev / constants::kHbarUevPs),
        eff1_(cfg.efficiency1),
        eff2_(cfg.efficiency2),
        top_(model.dim() - 1) {
    const auto& rates = model.rates();
    down_.assign(model.dim(), 0.0);
    for (std::size_t k = StateBasis::kBiexciton + 1; k < model.dim(); ++k) down_[k] = rates(k - 1, k);

    // arm-1 polarizer in the dot frame; projecting the photon conjugates the phase
    const auto [t1, f1] = readout_angles(cfg.p1, cfg.offsets);
    const double herald_phase = cfg.offsets.herald_conjugate ? -f1 : f1;
    const Eigen::Vector2cd herald(std::cos(0.5 * t1) * std::sqrt(gh_),
                                  std::polar(std::sin(0.5 * t1) * std::sqrt(gv_), herald_phase));
    const double total = gh_ + gv_;
    p_detect1_ = eff1_ * herald.squaredNorm() / total;
    herald_ = to_amplitude(herald);

    Eigen::Matrix2cd rest = Eigen::Matrix2cd::Zero();
    rest(0, 0) = gh_ / total;
    rest(1, 1) = gv_ / total;
    rest -= eff1_ * herald * herald.adjoint() / total;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2cd> es(rest);
    const double l0 = std::max(0.0, es.eigenvalues()(0)), l1 = std::max(0.0, es.eigenvalues()(1));
    undetected_first_ = (l0 + l1) > 0.0 ? l0 / (l0 + l1) : 0.0;
    undetected_[0] = to_amplitude(es.eigenvectors().col(0));
    undetected_[1] = to_amplitude(es.eigenvectors().col(1));

    const auto [t2, f2] = readout_angles(cfg.p2, cfg.offsets);
    c2_ = std::cos(0.5 * t2);
    s2_ = std::sin(0.5 * t2);
    phi2_ = f2;

    populations_ = steady_state(model.hamiltonian(), model.rates()).populations();
  }

  /// Runs over [0, duration) from a steady-state initial state.
  void run(double duration, Xoshiro256& rng, std::vector<TimeTag>& out, std::vector<double>& times) {
    std::size_t state = sample_initial(rng);
    ExcitonAmplitude x{1.0, 0.0, 0.0};
    if (state == StateBasis::kXV) x = {0.0, 1.0, 0.0};
    if (state == StateBasis::kXV) state = StateBasis::kXH;
    double t = 0.0;
    for (;;) {
      switch (state) {
        case StateBasis::kEmpty: {
          t += rng.exponential(g_);
          if (t >= duration) return;
          const double u = rng.uniform();
          if (u < 0.25) {
            x = {1.0, 0.0, 0.0};
            state = StateBasis::kXH;
          } else if (u < 0.5) {
            x = {0.0, 1.0, 0.0};
            state = StateBasis::kXH;
          } else {
            state = StateBasis::kDark;
          }
          break;
        }
        case StateBasis::kDark:
          t += rng.exponential(g_);
          if (t >= duration) return;
          state = StateBasis::kBiexciton;
          break;
        case StateBasis::kXH: {  // whole bright-exciton manifold
          // Picking the component first and then racing its decay against G
          // reproduces the joint density of (jump time, jump type) of the mixture.
          const double rate = rng.uniform() < x.p_h ? gh_ + g_ : gv_ + g_;
          const double dt = rng.exponential(rate);
          t += dt;
          if (t >= duration) return;
          if (rng.uniform() * rate < g_) {
            state = StateBasis::kBiexciton;
            break;
          }
          state = StateBasis::kEmpty;
          // Detection probability eff2 * |<p2|a(t)>|^2 <= eff2: test the bound first.
          const double u = rng.uniform();
          if (u < eff2_) {
            const double nh = x.p_h * std::exp(-(gh_ + g_) * dt);
            const double nv = x.p_v * std::exp(-(gv_ + g_) * dt);
            const double n = nh + nv;
            const std::complex<double> overlap =
                c2_ * std::sqrt(nh / n) + s2_ * std::sqrt(nv / n) * std::polar(1.0, x.phase - omega_ * dt - phi2_);
            if (u < eff2_ * std::norm(overlap)) {
              out.push_back({2, 0});
              times.push_back(t);
            }
          }
          break;
        }
        case StateBasis::kBiexciton: {
          const double up = top_ > StateBasis::kBiexciton ? g_ : 0.0;
          const double total = up + gh_ + gv_;
          t += rng.exponential(total);
          if (t >= duration) return;
          if (rng.uniform() * total < up) {
            state = StateBasis::kBiexciton + 1;
            break;
          }
          state = StateBasis::kXH;
          if (rng.uniform() < p_detect1_) {
            out.push_back({1, 0});
            times.push_back(t);
            x = herald_;
          } else {
            x = undetected_[rng.uniform() < undetected_first_ ? 0 : 1];
          }
          break;
        }
        default: {
          const double up = state < top_ ? g_ : 0.0;
          const double total = up + down_[state];
          t += rng.exponential(total);
          if (t >= duration) return;
          state = rng.uniform() * total < up ? state + 1 : state - 1;
          break;
        }
      }
    }
  }

 private:
  std::size_t sample_initial(Xoshiro256& rng) const {
    double u = rng.uniform();
    for (Eigen::Index k = 0; k < populations_.size(); ++k) {
      u -= populations_(k);
      if (u < 0.0) return static_cast<std::size_t>(k);
    }
    return StateBasis::kEmpty;
  }

  double g_, gh_, gv_, omega_, eff1_, eff2_;
  std::size_t top_;
  std::vector<double> down_;
  double p_detect1_ = 0.0;
  ExcitonAmplitude herald_{};
  double undetected_first_ = 0.0;
  ExcitonAmplitude undetected_[2]{};
  double c2_ = 1.0, s2_ = 0.0, phi2_ = 0.0;
  Eigen::VectorXd populations_;
};

}  // namespace detail

/**
 * Synthetic detection stream over [0, duration_ps). The run is split into
 * `chunks` independent trajectories of equal length (the last takes the
 * remainder), each seeded with derive_seed(seed, k), started from the steady
 * state and shifted by its offset. The output depends only on (inputs, seed,
 * chunks), not on the number of worker threads.
 */
inline TimeTagStream simulate_stream(const CascadeModel& model, const DetectorConfig& cfg, double duration_ps,
                                     std::size_t chunks = 1, unsigned threads = 0) {
  cfg.validate();
  if (!std::isfinite(duration_ps) || !(duration_ps >= 1.0)) throw InvalidParameter("duration must be >= 1 ps");
  if (chunks == 0) throw InvalidParameter("chunk count must be >= 1");
  if (!(model.params().g_rate > 0.0)) throw InvalidParameter("simulation needs a nonzero generation rate");
  const auto total = static_cast<std::uint64_t>(std::llround(duration_ps));
  const std::uint64_t chunk_len = total / chunks;
  if (chunk_len == 0) throw InvalidParameter("more chunks than picoseconds");
  const double sigma = cfg.irf_fwhm_ps * kFwhmToSigma;

  std::vector<std::vector<TimeTag>> parts(chunks);
  parallel_for(
      chunks,
      [&](std::size_t k) {
        Xoshiro256 rng(derive_seed(cfg.seed, k));
        detail::Trajectory traj(model, cfg);
        const std::uint64_t offset = k * chunk_len;
        const std::uint64_t len = k + 1 == chunks ? total - offset : chunk_len;
        std::vector<TimeTag> ev;
        std::vector<double> t;
        traj.run(static_cast<double>(len), rng, ev, t);
        for (std::size_t i = 0; i < ev.size(); ++i) {
          const double jittered = t[i] + (sigma > 0.0 ? sigma * rng.normal() : 0.0);
          const long long r = static_cast<long long>(offset) + std::llround(jittered);
          ev[i].t_ps = static_cast<std::uint64_t>(std::max(0LL, r));
        }
        parts[k] = std::move(ev);
      },
      threads);

  TimeTagStream s;
  s.duration_ps = total;
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  s.events.reserve(n);
  for (auto& p : parts) {
    s.events.insert(s.events.end(), p.begin(), p.end());
    std::vector<TimeTag>().swap(p);
  }
  std::stable_sort(s.events.begin(), s.events.end(),
                   [](const TimeTag& a, const TimeTag& b) { return a.t_ps < b.t_ps; });
  return s;
}

}  // namespace qdcascade
