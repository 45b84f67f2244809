#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "qdcascade/correlation.hpp"
#include "support.hpp"

using namespace qdcascade;
using qdcascade::testing::damped_cosine_amplitude;
using qdcascade::testing::local_maxima;
using qdcascade::testing::fitted_offsets;
using qdcascade::testing::fitted_params;

namespace {

constexpr double kPi = constants::kPi;
using L = PolarizationLabel;

PolarizationSetting pol(char c) { return canonical_polarization(c); }

std::vector<double> positive_half(const CorrelationCurve& c) {
  return {c.values.begin() + static_cast<long>(c.grid.negative_bins()), c.values.end()};
}

std::vector<double> positive_taus(const DelayGrid& g) {
  std::vector<double> t;
  for (std::size_t k = g.negative_bins(); k < g.size(); ++k) t.push_back(g.center(k));
  return t;
}

L partner(L l) {
  switch (l) {
    case L::H: return L::V;
    case L::V: return L::H;
    case L::D: return L::Dbar;
    case L::Dbar: return L::D;
    case L::R: return L::L;
    case L::L: return L::R;
  }
  return l;
}

}  // namespace

TEST(G2Positive, NormalisedAtLongDelay) {
  // The slowest relaxation mode (dark-exciton recycling, ~5 ns) leaves a
  // residual of order 1e-5 at 50 ns; 1e-6 is reached further out.
  auto model = build_model(fitted_params());
  for (auto o : {FrameOffsets{}, fitted_offsets()}) {
    for (L a : kAllPolarizations) {
      for (L b : kAllPolarizations) {
        const auto pa = canonical_polarization(a), pb = canonical_polarization(b);
        EXPECT_NEAR(g2_positive(model, pa, pb, o, 50000.0), 1.0, 1e-4);
        EXPECT_NEAR(g2_positive(model, pa, pb, o, 120000.0), 1.0, 1e-6);
      }
    }
  }
}

TEST(G2Positive, SlowestModeLimitsTheApproachToOne) {
  auto model = build_model(fitted_params());
  CorrelationEngine engine(model);
  const auto& lambda = engine.propagator().eigenvalues();
  double slowest = -1e300;
  for (Eigen::Index k = 0; k < lambda.size(); ++k)
    if (std::abs(lambda(k)) > 1e-14) slowest = std::max(slowest, lambda(k).real());
  EXPECT_GT(slowest, -model.params().g_rate * 2.0);
  EXPECT_LT(slowest, -model.params().g_rate);
  // residual at 50 ns is too large for 1e-6 by the mode alone
  EXPECT_GT(std::exp(slowest * 50000.0), 1e-6);
}

TEST(G2Positive, CrossRectilinearVanishesAtZeroDelay) {
  auto model = build_model(fitted_params());
  EXPECT_NEAR(g2_positive(model, pol('H'), pol('V'), FrameOffsets{}, 1e-9), 0.0, 1e-12);
  EXPECT_NEAR(g2_positive(model, pol('V'), pol('H'), FrameOffsets{}, 1e-9), 0.0, 1e-12);
}

TEST(G2Positive, RejectsNonPositiveDelay) {
  auto model = build_model(fitted_params());
  EXPECT_THROW(g2_positive(model, pol('H'), pol('H'), FrameOffsets{}, 0.0), DomainError);
  EXPECT_THROW(g2_positive(model, pol('H'), pol('H'), FrameOffsets{}, -5.0), DomainError);
  CorrelationEngine engine(model);
  EXPECT_THROW(engine.g2_positive(pol('H'), pol('H'), FrameOffsets{}, 0.0), DomainError);
}

TEST(G2Positive, CoCircularPrecessionPeriod) {
  auto model = build_model(fitted_params());
  CorrelationEngine engine(model);
  const double period = 2 * kPi * constants::kHbarUevPs / 29.0;
  EXPECT_NEAR(period, 142.6, 0.05);
  for (auto o : {FrameOffsets{}, fitted_offsets()}) {
    auto maxima = local_maxima(
        [&](double t) { return engine.g2_positive(pol('R'), pol('R'), o, t); }, 2000.0, 0.5);
    ASSERT_GE(maxima.size(), 8u);
    for (std::size_t k = 1; k < maxima.size(); ++k) {
      EXPECT_NEAR(maxima[k] - maxima[k - 1], 142.6, 1.0) << "maximum " << k;
    }
  }
}

TEST(G2Positive, EngineMatchesDensityMatrixRoute) {
  auto model = build_model(fitted_params());
  CorrelationEngine engine(model);
  for (auto o : {FrameOffsets{}, fitted_offsets(), FrameOffsets{-0.3, 1.1, false}}) {
    for (L a : kAllPolarizations) {
      for (L b : kAllPolarizations) {
        for (double t : {0.3, 17.0, 140.0, 900.0, 4321.0}) {
          const double ref = g2_positive(model, canonical_polarization(a), canonical_polarization(b), o, t);
          const double fast = engine.g2_positive(canonical_polarization(a), canonical_polarization(b), o, t);
          EXPECT_NEAR(fast, ref, 1e-12) << pair_name(a, b) << " tau " << t;
        }
      }
    }
  }
}

TEST(G2Negative, LimitsAndDomain) {
  auto model = build_model(fitted_params());
  EXPECT_NEAR(g2_negative(model, -1e-9), 0.0, 1e-12);
  EXPECT_NEAR(g2_negative(model, -50000.0), 1.0, 1e-4);
  EXPECT_NEAR(g2_negative(model, -120000.0), 1.0, 1e-6);
  EXPECT_THROW(g2_negative(model, 0.0), DomainError);
  EXPECT_THROW(g2_negative(model, 3.0), DomainError);
}

TEST(G2Negative, RisesFromZeroAndMatchesOdeOracle) {
  auto model = build_model(fitted_params());
  CorrelationEngine engine(model);
  double prev = 0.0;
  for (double t = 10.0; t <= 2000.0; t += 10.0) {
    const double v = engine.g2_negative(-t);
    EXPECT_GT(v, prev);
    prev = v;
  }
  // Numeric propagation of the empty-dot projector, step by step.
  const auto& h = model.hamiltonian();
  const auto& g = model.rates();
  const double xx_ss = steady_state(h, g).populations()(StateBasis::kBiexciton);
  DensityMatrix rho = DensityMatrix::basis_state(model.dim(), StateBasis::kEmpty);
  double t_prev = 0.0;
  for (double t : {50.0, 500.0, 2000.0, 6000.0}) {
    rho = numeric_propagate(rho, t - t_prev, h, g);
    t_prev = t;
    EXPECT_NEAR(engine.g2_negative(-t), rho(StateBasis::kBiexciton, StateBasis::kBiexciton).real() / xx_ss,
                1e-9);
  }
}

TEST(G2Curve, StepAtZeroAndContinuityElsewhere) {
  auto model = build_model(fitted_params());
  auto c = g2_curve(model, pol('H'), pol('H'), FrameOffsets{}, -5000, 5000, 10);
  ASSERT_EQ(c.values.size(), 1000u);
  const std::size_t zero = c.grid.negative_bins();
  double max_jump = 0.0;
  for (std::size_t k = 1; k < c.values.size(); ++k) {
    if (k == zero) continue;
    max_jump = std::max(max_jump, std::abs(c.values[k] - c.values[k - 1]));
  }
  const double step = std::abs(c.values[zero] - c.values[zero - 1]);
  EXPECT_GT(step, 1.0);
  EXPECT_LT(max_jump, 0.05 * step);
}

TEST(G2Curve, SwappingPolarizersOnlyChangesPositiveHalf) {
  auto model = build_model(fitted_params());
  CorrelationEngine engine(model);
  DelayGrid grid(-3000, 3000, 10);
  auto hd = g2_curve(engine, pol('H'), pol('D'), fitted_offsets(), grid);
  auto dh = g2_curve(engine, pol('D'), pol('H'), fitted_offsets(), grid);
  for (std::size_t k = 0; k < grid.negative_bins(); ++k) EXPECT_EQ(hd.values[k], dh.values[k]);
  double diff = 0.0;
  for (std::size_t k = grid.negative_bins(); k < grid.size(); ++k) diff += std::abs(hd.values[k] - dh.values[k]);
  EXPECT_GT(diff, 1.0);
}

TEST(G2Curve, CoLinearBunchingPeak) {
  auto model = build_model(fitted_params());
  auto c = g2_curve(model, pol('H'), pol('H'), FrameOffsets{}, -5000, 5000, 10);
  const std::size_t zero = c.grid.negative_bins();
  EXPECT_GT(c.values[zero], 5.0);
  for (std::size_t k = zero + 1; k < c.values.size(); ++k) EXPECT_LT(c.values[k], c.values[k - 1]);
  EXPECT_LT(c.values[zero + 300], 0.5 * c.values[zero]);  // decays on the ns scale
}

TEST(G2Curve, GridValidation) {
  auto model = build_model(fitted_params());
  EXPECT_THROW(g2_curve(model, pol('H'), pol('H'), FrameOffsets{}, -5005, 5000, 10), InvalidParameter);
  EXPECT_THROW(g2_curve(model, pol('H'), pol('H'), FrameOffsets{}, 10, 5000, 10), InvalidParameter);
  EXPECT_THROW(g2_curve(model, pol('H'), pol('H'), FrameOffsets{}, -100, 100, 0), InvalidParameter);
  EXPECT_THROW(DelayGrid(100, -100, 10), InvalidParameter);
}

TEST(ConvolveIrf, ConstantIsUnchanged) {
  DelayGrid grid(-1000, 1000, 2);
  CorrelationCurve c{grid, std::vector<double>(grid.size(), 1.0), {}};
  auto out = convolve_irf(c, 42.0);
  for (double v : out.values) EXPECT_NEAR(v, 1.0, 1e-9);
  EXPECT_TRUE(out.meta.convolved);
  EXPECT_THROW(convolve_irf(out, 42.0), StateError);
}

TEST(ConvolveIrf, StepIsSmoothedSymmetrically) {
  DelayGrid grid(-1000, 1000, 1);
  CorrelationCurve c{grid, {}, {}};
  for (std::size_t k = 0; k < grid.size(); ++k) c.values.push_back(grid.center(k) < 0 ? 0.2 : 1.4);
  auto out = convolve_irf(c, 42.0);
  const std::size_t zero = grid.negative_bins();
  const double mid = 0.5 * (out.values[zero - 1] + out.values[zero]);
  EXPECT_NEAR(mid, 0.8, 0.008);
  // 10-90 rise of a Gaussian edge is ~1.09 FWHM
  auto crossing = [&](double level) {
    for (std::size_t k = 0; k < out.values.size(); ++k)
      if (out.values[k] >= level) return grid.center(k);
    return 0.0;
  };
  const double rise = crossing(0.2 + 0.9 * 1.2) - crossing(0.2 + 0.1 * 1.2);
  EXPECT_NEAR(rise, 1.09 * 42.0, 2.0);
  EXPECT_NEAR(out.values.front(), 0.2, 1e-9);
  EXPECT_NEAR(out.values.back(), 1.4, 1e-9);
}

TEST(ConvolveIrf, RequiresResolvedResponse) {
  DelayGrid grid(-1000, 1000, 10);
  CorrelationCurve c{grid, std::vector<double>(grid.size(), 1.0), {}};
  EXPECT_THROW(convolve_irf(c, 42.0), InvalidParameter);
  EXPECT_THROW(convolve_irf(c, 0.0), InvalidParameter);
}

TEST(ConvolvedCurve, FiniteRiseReplacesDiscontinuity) {
  auto model = build_model(fitted_params());
  CorrelationEngine engine(model);
  DelayGrid grid(-2000, 2000, 10);
  auto raw = g2_curve(engine, pol('H'), pol('H'), FrameOffsets{}, grid);
  auto conv = convolved_curve(engine, pol('H'), pol('H'), FrameOffsets{}, grid, 42.0);
  const std::size_t zero = grid.negative_bins();
  EXPECT_LT(conv.values[zero], raw.values[zero]);
  EXPECT_GT(conv.values[zero - 1], raw.values[zero - 1]);
  // far from the step the response leaves the curve alone
  for (std::size_t k : {std::size_t{0}, std::size_t{50}, grid.size() - 1}) {
    EXPECT_NEAR(conv.values[k], raw.values[k], 1e-3 * raw.values[k]);
  }
}

TEST(ConvolvedCurve, AgreesWithTenTimesFinerSampling) {
  auto model = build_model(fitted_params());
  CorrelationEngine engine(model);
  DelayGrid grid(-3000, 3000, 10);
  for (auto [a, b] : {std::pair{'H', 'H'}, std::pair{'H', 'V'}, std::pair{'R', 'R'}}) {
    auto coarse = convolved_curve(engine, pol(a), pol(b), fitted_offsets(), grid, 42.0);
    auto fine = convolved_curve(engine, pol(a), pol(b), fitted_offsets(), grid, 42.0, 20);
    const double peak = *std::max_element(fine.values.begin(), fine.values.end());
    for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_NEAR(coarse.values[k], fine.values[k], 1e-4 * peak) << k;
  }
}

TEST(Tomography, SharedNegativeHalves) {
  auto model = build_model(fitted_params());
  DelayGrid grid(-5000, 5000, 10);
  for (std::optional<double> fwhm : {std::optional<double>{}, std::optional<double>{42.0}}) {
    auto panels = tomography_grid(model, fitted_offsets(), grid, fwhm);
    ASSERT_EQ(panels.size(), 36u);
    for (const auto& p : panels) {
      if (!fwhm) {
        for (std::size_t k = 0; k < grid.negative_bins(); ++k) EXPECT_EQ(p.values[k], panels[0].values[k]);
      }
      EXPECT_EQ(p.meta.convolved, fwhm.has_value());
    }
    EXPECT_EQ(panels[1].meta.p1, L::H);
    EXPECT_EQ(panels[1].meta.p2, L::V);
  }
}

TEST(Tomography, NormalisedAtFiftyNanoseconds) {
  auto model = build_model(fitted_params());
  DelayGrid grid(-50000, 50000, 10);
  auto panels = tomography_grid(model, fitted_offsets(), grid);
  for (const auto& p : panels) {
    EXPECT_NEAR(p.values.front(), 1.0, 1e-4);
    EXPECT_NEAR(p.values.back(), 1.0, 1e-4);
    for (double v : p.values) EXPECT_GE(v, -1e-12);
  }
}

TEST(Tomography, CoincidenceRateSumIsBasisIndependent) {
  // Tr[(Pi + Pi_perp) rho(tau)] is the exciton-block trace for any complete
  // basis, so the denominator-weighted sums agree across H/V, D/A and R/L.
  auto model = build_model(fitted_params());
  CorrelationEngine engine(model);
  DelayGrid grid(-3000, 3000, 10);
  const FrameOffsets o{0.0, 0.02 * kPi, true};
  auto panels = tomography_grid(engine, o, grid);
  auto weighted = [&](L a, L b, std::size_t k) {
    const auto idx = static_cast<std::size_t>(a) * 6 + static_cast<std::size_t>(b);
    return panels[idx].values[k] * engine.readout_denominator(canonical_polarization(b), o);
  };
  for (L a : kAllPolarizations) {
    for (std::size_t k = grid.negative_bins(); k < grid.size(); ++k) {
      const double hv = weighted(a, L::H, k) + weighted(a, L::V, k);
      for (L b : {L::D, L::R}) EXPECT_NEAR(weighted(a, b, k) + weighted(a, partner(b), k), hv, 1e-10);
    }
  }
}

TEST(Tomography, NormalisedSumsAgreeForEqualLifetimes) {
  CascadeParams p = fitted_params();
  p.tau_v_ps = p.tau_h_ps;
  auto model = build_model(p);
  DelayGrid grid(-3000, 3000, 10);
  auto panels = tomography_grid(model, FrameOffsets{}, grid);
  auto at = [&](L a, L b) { return panels[static_cast<std::size_t>(a) * 6 + static_cast<std::size_t>(b)].values; };
  for (L a : kAllPolarizations) {
    auto hv_h = at(a, L::H), hv_v = at(a, L::V);
    for (L b : {L::D, L::R}) {
      auto x = at(a, b), y = at(a, partner(b));
      for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_NEAR(x[k] + y[k], hv_h[k] + hv_v[k], 1e-10);
    }
  }
}

TEST(Tomography, RectilinearPanelsIgnoreTheSplittingWithoutOffsets) {
  CascadeParams p = fitted_params();
  auto with = build_model(p);
  p.delta_uev = 0.0;
  auto without = build_model(p);
  DelayGrid grid(-3000, 3000, 10);
  for (char a : {'H', 'V'}) {
    for (char b : {'H', 'V'}) {
      auto x = g2_curve(with, pol(a), pol(b), FrameOffsets{}, -3000, 3000, 10);
      auto y = g2_curve(without, pol(a), pol(b), FrameOffsets{}, -3000, 3000, 10);
      for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_NEAR(x.values[k], y.values[k], 1e-12);
    }
  }
}

TEST(Tomography, OnlyCoherentPanelsOscillate) {
  auto model = build_model(fitted_params());
  CorrelationEngine engine(model);
  DelayGrid grid(-5000, 5000, 10);
  auto amplitudes = [&](const FrameOffsets& o) {
    auto panels = tomography_grid(engine, o, grid);
    std::array<double, 36> out{};
    for (std::size_t i = 0; i < 36; ++i)
      out[i] = damped_cosine_amplitude(engine, positive_taus(grid), positive_half(panels[i]));
    return out;
  };
  auto idx = [](L a, L b) { return static_cast<std::size_t>(a) * 6 + static_cast<std::size_t>(b); };
  auto aligned = amplitudes(FrameOffsets{});
  const double rr = aligned[idx(L::R, L::R)], dd = aligned[idx(L::D, L::D)];
  EXPECT_GT(rr, 0.5);
  EXPECT_GT(dd, 0.5);
  EXPECT_LT(aligned[idx(L::H, L::H)], 1e-9);
  EXPECT_LT(aligned[idx(L::H, L::V)], 1e-9);
  // A tilted frame leaks some of the precession into the rectilinear panels.
  auto tilted = amplitudes(fitted_offsets());
  EXPECT_GT(tilted[idx(L::H, L::H)], 1e-3);
  EXPECT_GT(tilted[idx(L::R, L::R)] / tilted[idx(L::H, L::H)], 5.0);
}

TEST(CurveCsv, HeaderAndFullPrecision) {
  auto model = build_model(fitted_params());
  auto c = g2_curve(model, pol('H'), pol('H'), FrameOffsets{}, -20, 20, 10);
  std::ostringstream os;
  write_curve_csv(os, c);
  const std::string s = os.str();
  EXPECT_EQ(s.rfind("tau_ps,g2\n-15,", 0), 0u);
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 5);
  EXPECT_EQ(s.find('\r'), std::string::npos);
  std::istringstream is(s);
  std::string line;
  std::getline(is, line);
  for (std::size_t k = 0; k < 4; ++k) {
    std::getline(is, line);
    EXPECT_EQ(std::stod(line.substr(line.find(',') + 1)), c.values[k]);
  }
}
