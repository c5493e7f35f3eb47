#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "flobloch/estimation.hpp"

using namespace flobloch;

namespace {

struct Series {
  std::vector<double> t, y;
};

Series sinusoid(double T, double span, double dt, double phase = 0.4, double slope = 0.0) {
  Series s;
  for (double t = 0.0; t < span; t += dt) {
    s.t.push_back(s.t.size() * dt);
    s.y.push_back(std::sin(two_pi * s.t.back() / T + phase) + slope * s.t.back());
  }
  return s;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::Io;
}

}  // namespace

TEST(Estimator, CleanSinusoid) {
  const auto s = sinusoid(2.37, 30.0, 0.01);
  const auto est = estimate_period(s.t, s.y);
  EXPECT_EQ(est.method, EstimateMethod::SinusoidFit);
  // a minimum is located to about sqrt(eps)
  EXPECT_NEAR(est.T_B / 2.37, 1.0, 1e-7);
}

TEST(Estimator, PeriodogramWithinHalfBin) {
  EstimatorOptions o;
  o.refine = false;
  for (double T : {1.1, 2.37, 4.9}) {
    const auto s = sinusoid(T, 30.0, 0.01);
    const auto est = estimate_period(s.t, s.y, o);
    EXPECT_EQ(est.method, EstimateMethod::Periodogram);
    EXPECT_LE(std::abs(est.T_B - T), est.sigma) << T;
  }
}

TEST(Estimator, LinearDriftIgnored) {
  const auto s = sinusoid(2.37, 30.0, 0.01, 1.0, 0.8);
  EXPECT_NEAR(estimate_period(s.t, s.y).T_B / 2.37, 1.0, 1e-7);
}

TEST(Estimator, CarrierRemoval) {
  auto s = sinusoid(5.0, 40.0, 0.01);
  for (std::size_t i = 0; i < s.y.size(); ++i) s.y[i] += 3.0 * std::sin(two_pi * s.t[i] / 0.2);
  EstimatorOptions o;
  o.carrier_period = 0.2;
  EXPECT_NEAR(estimate_period(s.t, s.y, o).T_B / 5.0, 1.0, 1e-3);
}

TEST(Estimator, NoiseBiasBelowHalfPercent) {
  const auto clean = sinusoid(2.37, 12.0, 0.01);
  double bias = 0.0;
  int within = 0;
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 gen(static_cast<std::uint64_t>(seed));
    std::normal_distribution<double> noise(0.0, 0.01 * std::sqrt(0.5));
    auto y = clean.y;
    for (auto& v : y) v += noise(gen);
    const auto est = estimate_period(clean.t, y);
    bias += (est.T_B - 2.37) / 2.37;
    if (std::abs(est.T_B - 2.37) <= 3 * est.sigma) ++within;
  }
  EXPECT_LT(std::abs(bias / 100), 5e-3);
  EXPECT_GE(within, 95);
}

TEST(Estimator, WhiteNoiseIsNotDetected) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> N01;
  int rejected = 0;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> t, y;
    for (int i = 0; i < 4000; ++i) {
      t.push_back(0.01 * i);
      y.push_back(N01(gen));
    }
    try {
      estimate_period(t, y);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Detection) ++rejected;
    }
  }
  EXPECT_GE(rejected, 9);
}

TEST(Estimator, NeedsThreePeriods) {
  const auto s = sinusoid(5.0, 12.0, 0.01);
  EXPECT_EQ(kind_of([&] { estimate_period(s.t, s.y); }), ErrorKind::Coverage);
  const auto ok = sinusoid(3.9, 12.0, 0.01);
  EXPECT_NO_THROW(estimate_period(ok.t, ok.y));
}

TEST(Estimator, BadSeries) {
  auto s = sinusoid(1.0, 10.0, 0.01);
  s.y[17] = std::nan("");
  EXPECT_EQ(kind_of([&] { estimate_period(s.t, s.y); }), ErrorKind::Numeric);
  s = sinusoid(1.0, 10.0, 0.01);
  s.t[40] += 0.003;
  EXPECT_THROW(estimate_period(s.t, s.y), Error);
  s.y.pop_back();
  EXPECT_THROW(estimate_period(s.t, s.y), Error);
}

TEST(InferForce, MagnitudeAndSign) {
  EXPECT_DOUBLE_EQ(infer_force(25 * pi, 100), 4.0 / pi);
  EXPECT_DOUBLE_EQ(infer_force(2.0, 3, 0.5), 0.75);
  EXPECT_THROW(infer_force(0.0, 3), Error);
  EXPECT_LT(infer_signed_force(1.0, 2, 1.0, 1.0, 0.3), 0.0);
  EXPECT_GT(infer_signed_force(1.0, 2, 1.0, -1.0, 0.3), 0.0);
  EXPECT_GT(infer_signed_force(1.0, 2, 1.0, 1.0, -0.3), 0.0);
}

class Inversion : public ::testing::TestWithParam<int> {};

TEST_P(Inversion, RoundTripsTheForwardModel) {
  const WellSpec wells[] = {WellSpec::infinite_square(1, 1), WellSpec::triangular(1, 1),
                            WellSpec::triangular(1, 1), WellSpec::quartic_bottom(1, 1, 10, 1)};
  const double E0s[] = {2.0, 200.0, 200.0, -1e-4};
  const Instrument insts[] = {ForceMeter{0.37, 0.05}, Tachometer{0.37, 1.1, 0.9}, Magnetometer{0.37, 2.0, 1.1, 0.9},
                              SingularAmplitude{0.37, 1.0, 0.3}};
  const int i = GetParam();
  const ActionAngleMap map(wells[i], E0s[i]);
  const ProbeSpec probe = make_probe(insts[i], map);
  const int n = 7;
  const double T_B = n / std::abs(probe_to_force(probe, map));
  const auto r = invert_instrument(probe, map, n, T_B, 0.01 * T_B);
  EXPECT_NEAR(r.value / 0.37, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.relative_uncertainty, 0.01);
  EXPECT_EQ(r.quantity, instrument_quantity(insts[i]));
  EXPECT_EQ(r.unit, "natural");
}

INSTANTIATE_TEST_SUITE_P(Instruments, Inversion, ::testing::Values(0, 1, 2, 3));

namespace {

double si_tachometer_reading(double eta, double y0, double tau) {
  const double hbar = 1.05e-34, m = 1e-27, Omega = 1e8;
  const double E0 = std::pow(pi * eta / Omega, 2) / (2 * m);
  const ActionAngleMap map(WellSpec::triangular(m, eta), E0);
  const auto probe = make_probe(Tachometer{1.0, y0, tau}, map);
  return invert_instrument(probe, map, 100, 1e-6, 0.0, hbar, UnitSystem::SI).value;
}

}  // namespace

TEST(Inversion, SiTachometer) {
  const double w = si_tachometer_reading(1e-17, 1e-9, 1e-9);
  EXPECT_NEAR(w / 3.3e9, 1.0, 1e-2);
  EXPECT_NEAR(w, 1.05e-26 * pi / 1e-35, 1e-12 * w);
}

TEST(Inversion, TachometerGeometryScaling) {
  const double w1 = si_tachometer_reading(1e-17, 1e-9, 1e-9);
  const double w2 = si_tachometer_reading(2e-17, 2e-9, 2e-9);
  EXPECT_NEAR(w2 / w1, 0.125, 1e-12);
}

TEST(Inversion, SiUnits) {
  EXPECT_EQ(instrument_unit(Magnetometer{}, UnitSystem::SI), "T");
  EXPECT_EQ(instrument_unit(ForceMeter{}, UnitSystem::SI), "N");
}

TEST(QuarticDesign, BoundAndCutoff) {
  const auto d = design_quartic_well(pi, 1.0, 1.0, 100.0);
  EXPECT_NEAR(d.E0_bound, 1.0 / (2 * pi * pi), 1e-15);
  EXPECT_NEAR(d.potential(d.b / pi), -d.E0_bound, 1e-15);
  EXPECT_TRUE(d.admits(-0.05 * d.E0_bound));
  EXPECT_FALSE(d.admits(-0.5 * d.E0_bound));
  EXPECT_EQ(kind_of([] { design_quartic_well(pi, 1.0, 1.0, 2.0); }), ErrorKind::Design);
  EXPECT_EQ(kind_of([] { design_quartic_well(-1.0, 1.0, 1.0, 100.0); }), ErrorKind::Design);
}
