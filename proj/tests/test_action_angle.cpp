#include <cmath>
#include <random>

#include <boost/math/tools/roots.hpp>
#include <gtest/gtest.h>

#include "flobloch/action_angle.hpp"

using namespace flobloch;

namespace {

// E(J) by bracketing the inverse of action(); independent of the closed forms
// for M_eff and Ω.
double energy_of_action(const WellSpec& w, double J, double lo, double hi) {
  boost::uintmax_t iters = 200;
  auto f = [&](double E) { return action(w, E) - J; };
  auto r = boost::math::tools::toms748_solve(f, lo, hi, boost::math::tools::eps_tolerance<double>(52), iters);
  return 0.5 * (r.first + r.second);
}

double angle_distance(double a, double b) {
  const double d = std::fmod(std::abs(a - b), two_pi);
  return std::min(d, two_pi - d);
}

const WellSpec kSquare = WellSpec::infinite_square(1.0, 1.0);
const WellSpec kTri = WellSpec::triangular(1.0, 1.0);
const WellSpec kQuartic = WellSpec::quartic_bottom(1.0, 1.0, 10.0, 1.0);

}  // namespace

TEST(AngularFrequency, ClosedForms) {
  EXPECT_NEAR(angular_frequency(kSquare, 0.5), pi, 1e-15);
  EXPECT_NEAR(angular_frequency(kTri, 0.5), pi, 1e-15);
  EXPECT_DOUBLE_EQ(angular_frequency(kQuartic, -1e-4), 1.0);
}

TEST(AngularFrequency, NonPositiveEnergyIsDomainError) {
  try {
    angular_frequency(kSquare, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Domain);
  }
  EXPECT_THROW(action(kTri, -1.0), Error);
}

TEST(AngularFrequency, QuarticOutsideValidityCarriesBound) {
  try {
    ActionAngleMap(kQuartic, -1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Validity);
    EXPECT_NE(std::string(e.what()).find("0.00513"), std::string::npos) << e.what();
  }
}

TEST(WellSpec, QuarticNeedsLongCutoff) {
  EXPECT_THROW(WellSpec::quartic_bottom(1, 1, 3.0, 1).validate(), Error);
  EXPECT_NO_THROW(WellSpec::quartic_bottom(1, 1, 3.3, 1).validate());
}

TEST(Action, ClosedForms) {
  EXPECT_NEAR(action(kSquare, 0.5), 2.0, 1e-15);
  EXPECT_NEAR(action(kTri, 0.5), 2.0 / 3.0, 1e-15);
}

TEST(Action, QuarticQuadratureMatchesMidpointSum) {
  // quartic action by quadrature vs a direct midpoint sum of ∮p dx
  const double E0 = -1e-4;
  const double J = action(kQuartic, E0);
  const int K = 2'000'000;
  double s = 0.0;
  const double lo = 1.0 / pi, hi = 10.0;
  for (int i = 0; i < K; ++i) {
    const double x = lo + (hi - lo) * (i + 0.5) / K;
    s += std::sqrt(2.0 * (E0 - kQuartic.potential(x)));
  }
  EXPECT_NEAR(J, 2.0 * s * (hi - lo) / K, 1e-8 * J);
}

TEST(ToAngle, Endpoints) {
  const ActionAngleMap sq(kSquare, 0.5);
  EXPECT_NEAR(angle_distance(sq.to_angle(1.0, 1.0), 0.0), 0.0, 1e-15);
  EXPECT_NEAR(sq.to_angle(0.0, 1.0), pi, 1e-15);
  const ActionAngleMap tri(kTri, 0.5);
  EXPECT_NEAR(angle_distance(tri.to_angle(0.0, 1.0), 0.0), 0.0, 1e-15);
}

TEST(ToAngle, OffShellIsShellError) {
  const ActionAngleMap sq(kSquare, 0.5);
  try {
    sq.to_angle(0.3, 1.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shell);
    EXPECT_NE(std::string(e.what()).find("mismatch"), std::string::npos);
  }
}

TEST(FromAngle, ReferencePoints) {
  const double E0 = 2.5;
  const ActionAngleMap tri(kTri, E0);
  auto turn = tri.from_angle(pi);
  EXPECT_NEAR(turn.x, E0, 1e-12);
  EXPECT_NEAR(turn.p, 0.0, 1e-12);
  auto wall = tri.from_angle(0.0);
  EXPECT_NEAR(wall.x, 0.0, 1e-15);
  EXPECT_NEAR(wall.p, std::sqrt(2.0 * E0), 1e-12);

  const ActionAngleMap sq(kSquare, E0);
  auto q = sq.from_angle(pi / 2);
  EXPECT_NEAR(q.x, 0.5, 1e-15);
  EXPECT_NEAR(q.p, -sq.Omega() / pi, 1e-12);
}

class RoundTrip : public ::testing::TestWithParam<int> {};

TEST_P(RoundTrip, ThousandAngles) {
  const WellSpec w = GetParam() == 0 ? kSquare : GetParam() == 1 ? kTri : kQuartic;
  const double E0 = GetParam() == 2 ? -1e-4 : 3.7;
  const ActionAngleMap map(w, E0);
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> U(0.0, two_pi);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const double th = U(gen);
    // the quartic map is clamped at x = L inside |Θ - π| < b/L
    if (w.kind == WellKind::QuarticBottom && std::abs(th - pi) < w.b / w.L) continue;
    const auto pt = map.from_angle(th);
    EXPECT_LT(angle_distance(map.to_angle(pt.x, pt.p), th), 1e-10) << th;
    if (w.kind != WellKind::QuarticBottom) {
      const double E = pt.p * pt.p / (2 * w.m) + w.potential(pt.x);
      EXPECT_NEAR(E, E0, 1e-9 * E0);
    }
    ++checked;
  }
  EXPECT_GT(checked, 900);
}

INSTANTIATE_TEST_SUITE_P(Wells, RoundTrip, ::testing::Values(0, 1, 2));

TEST(FrequencyConsistency, ActionDerivativeIsTwoPiOverOmega) {
  for (const auto& [w, E0] : {std::pair{kSquare, 3.0}, std::pair{kTri, 3.0}, std::pair{kQuartic, -1e-4}}) {
    const ActionAngleMap map(w, E0);
    // J ~ 667 for the quartic: a tiny step drowns in quadrature noise
    const double d = (w.kind == WellKind::QuarticBottom ? 1e-2 : 1e-6) * std::abs(E0);
    const double dJdE = (action(w, E0 + d) - action(w, E0 - d)) / (2 * d);
    EXPECT_NEAR(dJdE * map.Omega() / two_pi, 1.0, 1e-6) << to_string(w.kind);
  }
}

TEST(EffectiveMass, SquareIsFourMLSquared) {
  EXPECT_EQ(effective_mass(kSquare, 0.5), 4.0);
  EXPECT_EQ(effective_mass(WellSpec::infinite_square(2.0, 3.0), 7.0), 72.0);
}

TEST(EffectiveMass, TriangularIsNegative) {
  for (double E0 : {0.1, 1.0, 100.0}) EXPECT_LT(ActionAngleMap(kTri, E0).M_eff(), 0.0);
}

TEST(EffectiveMass, MatchesSecondDifferenceOfH0) {
  for (const auto& [w, E0] : {std::pair{kSquare, 3.0}, std::pair{kTri, 3.0}, std::pair{kQuartic, -1e-4}}) {
    const ActionAngleMap map(w, E0);
    const double J0 = map.J0();
    // the quartic shell only exists for |E| well below the bound: small step
    const double h = (w.kind == WellKind::QuarticBottom ? 3e-7 : 1e-3) * J0;
    const double lo = w.kind == WellKind::QuarticBottom ? -4e-4 : 0.5 * E0;
    const double hi = w.kind == WellKind::QuarticBottom ? -1e-6 : 2.0 * E0;
    const double Em = energy_of_action(w, J0 - h, lo, hi), Ep = energy_of_action(w, J0 + h, lo, hi);
    const double d2 = (Ep - 2 * E0 + Em) / (h * h);
    EXPECT_NEAR(1.0 / d2 / map.M_eff(), 1.0, 1e-5) << to_string(w.kind);
  }
}
