#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "oracles.hpp"
#include "riskprobe/agent_sim.hpp"
#include "riskprobe/errors.hpp"
#include "riskprobe/estimator.hpp"
#include "riskprobe/rng.hpp"

using namespace riskprobe;

namespace {

struct Box {
  double s_lo = std::numeric_limits<double>::infinity();
  double s_hi = -std::numeric_limits<double>::infinity();
  double a_lo = std::numeric_limits<double>::infinity();
  double a_hi = -std::numeric_limits<double>::infinity();
  int count = 0;
};

// Direct evaluation of every switch inequality at every grid point.
Box brute_force_region(int s1, int s2, const EstimateConfig& cfg) {
  Box b;
  const auto& series1 = builtin_series(SeriesId::Series1);
  const auto& series2 = builtin_series(SeriesId::Series2);
  for (double s : cfg.sigma_grid.points()) {
    for (double a : cfg.alpha_grid.points()) {
      const BehaviorParams p{s, a, 1.0};
      if (!gain_inequalities(series1, s1, p) || !gain_inequalities(series2, s2, p)) continue;
      b.s_lo = std::min(b.s_lo, s);
      b.s_hi = std::max(b.s_hi, s);
      b.a_lo = std::min(b.a_lo, a);
      b.a_hi = std::max(b.a_hi, a);
      ++b.count;
    }
  }
  return b;
}

}  // namespace

TEST_CASE("grid axis points are snapped and inclusive") {
  const GridAxis axis{-1.0, 0.99, 0.005};
  const auto pts = axis.points();
  CHECK(pts.size() == 399);
  CHECK(pts.front() == -1.0);
  CHECK(pts.back() == 0.99);
  CHECK(std::find(pts.begin(), pts.end(), 0.0) != pts.end());
  CHECK(std::find(pts.begin(), pts.end(), 0.48) != pts.end());
  CHECK(snap(0.1 + 0.2) == snap(0.3));
  CHECK_THROWS(EstimateConfig{GridAxis{0, 1, 0}, GridAxis{}, {}, 1e-12, 1}.validate());
}

TEST_CASE("lambda interval closed form") {
  const auto& s3 = builtin_series(SeriesId::Series3);
  const auto [lo, hi] = lambda_interval(s3, 1, 0.0, 1.0);
  CHECK(std::abs(lo - 0.375) <= 1e-12);
  CHECK(std::abs(hi - 1.625) <= 1e-12);

  for (double sigma : {-0.8, -0.3, 0.0, 0.25, 0.48, 0.7, 0.95}) {
    for (int k = 1; k <= 6; ++k) {
      const auto [l, h] = lambda_interval(s3, k, sigma, 0.69);
      CHECK(l == doctest::Approx(oracles::ratio_oracle(k, sigma)).epsilon(1e-12));
      CHECK(h == doctest::Approx(oracles::ratio_oracle(k + 1, sigma)).epsilon(1e-12));
      // alpha cancels out of the comparison.
      CHECK(lambda_interval(s3, k, sigma, 1.3) == std::make_pair(l, h));
    }
  }
}

TEST_CASE("feasible region matches a brute-force scan") {
  const EstimateConfig cfg;
  const Estimator est(cfg);
  for (auto [s1, s2] : {std::pair{7, 1}, {8, 9}, {13, 10}, {13, 5}, {1, 1}, {13, 13}, {3, 12}}) {
    const SwitchProfile prof{s1, s2, 1, {}};
    const auto region = est.feasible_region(prof);
    const auto box = brute_force_region(s1, s2, cfg);
    INFO("profile " << s1 << "," << s2);
    REQUIRE(box.count > 0);
    CHECK(region.feasible_count == box.count);
    CHECK(region.sigma.lo == box.s_lo);
    CHECK(region.sigma.hi == box.s_hi);
    CHECK(region.alpha.lo == box.a_lo);
    CHECK(region.alpha.hi == box.a_hi);
  }
}

TEST_CASE("risk-neutral profile") {
  const Estimator est;
  const SwitchProfile prof{7, 1, 1, {}};
  const auto r = est.feasible_region(prof);
  CHECK(r.sigma.lo == doctest::Approx(-0.005).epsilon(1e-12));
  CHECK(r.sigma.hi == doctest::Approx(0.12).epsilon(1e-12));
  CHECK(r.alpha.lo == doctest::Approx(0.935).epsilon(1e-12));
  CHECK(r.alpha.hi == doctest::Approx(1.045).epsilon(1e-12));
  CHECK(r.feasible_count == 305);

  const auto e = est.estimate(prof);
  CHECK(e.intervals.sigma.contains(0.0));
  CHECK(e.intervals.alpha.contains(1.0));
  CHECK(e.point.sigma == doctest::Approx(0.0575).epsilon(1e-12));
  // Midpoint propagation evaluates the cut points at the sigma estimate.
  CHECK(e.intervals.lambda.lo == doctest::Approx(oracles::ratio_oracle(1, 0.0575)).epsilon(1e-12));
  CHECK(e.intervals.lambda.hi == doctest::Approx(oracles::ratio_oracle(2, 0.0575)).epsilon(1e-12));
  CHECK(e.warnings.empty());

  EstimateConfig corners;
  corners.lambda_propagation = LambdaPropagation::IntervalCorners;
  const auto ec = Estimator(corners).estimate(prof);
  CHECK(ec.intervals.lambda.contains(1.0));
  CHECK(ec.intervals.lambda.lo <= e.intervals.lambda.lo);
  CHECK(ec.intervals.lambda.hi >= e.intervals.lambda.hi);
}

TEST_CASE("human-sample agent round trip") {
  const BehaviorParams human{0.48, 0.69, 3.47};
  const auto prof = play_profile(human);
  CHECK(prof == SwitchProfile{8, 9, 4, {}});
  const auto e = Estimator().estimate(prof);
  CHECK(e.intervals.sigma.contains(0.48, 1e-9));
  CHECK(e.intervals.alpha.contains(0.69, 1e-9));
  CHECK(e.intervals.lambda.contains(3.47));
  CHECK(e.intervals.sigma.lo == doctest::Approx(0.455).epsilon(1e-12));
  CHECK(e.intervals.sigma.hi == doctest::Approx(0.53).epsilon(1e-12));
  CHECK(e.intervals.alpha.lo == doctest::Approx(0.61).epsilon(1e-12));
  CHECK(e.intervals.alpha.hi == doctest::Approx(0.70).epsilon(1e-12));
}

TEST_CASE("clamped profile estimates with a truncation warning") {
  const BehaviorParams p{0.6031, 1.1819, 1.4786};
  const auto prof = play_profile(p);
  CHECK(prof.s1 == 13);
  CHECK(prof.clamped[0]);
  const auto e = Estimator().estimate(prof);
  REQUIRE(e.warnings.size() == 1);
  CHECK(e.warnings[0] == "truncated:Series1 clamped to the answer range");
}

TEST_CASE("every in-range gain profile is feasible on the default grid") {
  const Estimator est;
  for (int s1 = 1; s1 <= 13; ++s1) {
    for (int s2 = 1; s2 <= 13; ++s2) {
      CHECK_NOTHROW((void)est.feasible_region(SwitchProfile{s1, s2, 1, {}}));
    }
  }
}

TEST_CASE("infeasible profile on a narrowed grid") {
  EstimateConfig cfg;
  cfg.sigma_grid = GridAxis{0.0, 0.0, 0.005};
  cfg.alpha_grid = GridAxis{1.0, 1.0, 0.005};
  const Estimator est(cfg);
  CHECK(est.grid_size() == 1);
  CHECK(est.nearest_miss(SwitchProfile{7, 1, 1, {}}) == 0);
  try {
    (void)est.estimate(SwitchProfile{2, 1, 1, {}});
    FAIL("expected InfeasibleError");
  } catch (const InfeasibleError& e) {
    CHECK(e.min_violations() == 1);
  }
  CHECK_THROWS_AS((void)est.estimate(SwitchProfile{14, 1, 1, {}}), InvariantError);
}

TEST_CASE("random agents are contained by their estimates") {
  EstimateConfig cfg;
  cfg.lambda_propagation = LambdaPropagation::IntervalCorners;
  const Estimator est(cfg);
  Engine rng(2024);
  int checked = 0;
  for (int i = 0; i < 400; ++i) {
    const BehaviorParams p{snap(-0.9 + 1.8 * uniform01(rng)), snap(0.2 + 1.25 * uniform01(rng)),
                           snap(0.3 + 9.0 * uniform01(rng))};
    const auto prof = play_profile(p);
    if (prof.any_clamped()) continue;
    const auto e = est.estimate(prof);
    INFO("sigma=" << p.sigma << " alpha=" << p.alpha << " lambda=" << p.lambda);
    // Off-grid truths may fall between the outermost feasible grid points.
    CHECK(e.intervals.sigma.contains(p.sigma, 0.005));
    CHECK(e.intervals.alpha.contains(p.alpha, 0.005));
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("threaded table build gives identical results") {
  EstimateConfig one;
  EstimateConfig four;
  four.jobs = 4;
  const Estimator a(one);
  const Estimator b(four);
  for (const auto& prof : {SwitchProfile{7, 1, 1, {}}, SwitchProfile{8, 9, 4, {}}, SwitchProfile{2, 12, 6, {}}}) {
    CHECK(a.feasible_region(prof) == b.feasible_region(prof));
  }
}

TEST_CASE("profile and estimate CSV") {
  std::vector<ProfileRecord> profiles{{"t1", {7, 1, 1, {}}}, {"t2", {13, 5, 2, {true, false, false}}}};
  std::stringstream ss;
  write_profiles_csv(ss, profiles);
  CHECK(ss.str() == "trial_id,s1,s2,s3,clamped_flags\nt1,7,1,1,000\nt2,13,5,2,100\n");
  const auto back = read_profiles_csv(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[1].profile == profiles[1].profile);

  std::stringstream bad("trial_id,s1,s2,s3,clamped_flags\nt1,7,x,1,000\n");
  CHECK_THROWS_AS(read_profiles_csv(bad), ParseError);

  EstimateConfig cfg;
  cfg.sigma_grid = GridAxis{-0.2, 0.2, 0.005};
  cfg.alpha_grid = GridAxis{0.8, 1.2, 0.005};
  const Estimator est(cfg);
  std::vector<EstimateRecord> out;
  profiles.push_back({"t3", {1, 13, 3, {}}});
  const auto summary = estimate_batch(est, profiles, out);
  CHECK(summary.estimated == 1);
  CHECK(summary.infeasible == 2);
  REQUIRE(out.size() == 3);
  CHECK(out[0].estimate.has_value());
  CHECK_FALSE(out[2].estimate.has_value());

  std::stringstream csv;
  write_estimates_csv(csv, out);
  const std::string text = csv.str();
  CHECK(text.rfind("trial_id,sigma,alpha,lambda,sigma_lo,sigma_hi,alpha_lo,alpha_hi,lambda_lo,lambda_hi,"
                   "feasible_count,warnings\n",
                   0) == 0);
  CHECK(text.find("t3,,,,,,,,,,0,infeasible:nearest_violations=") != std::string::npos);
  const auto reread = read_estimates_csv(csv);
  REQUIRE(reread.size() == 3);
  CHECK(reread[0].estimate->point.sigma == out[0].estimate->point.sigma);
  CHECK(reread[0].estimate->intervals == out[0].estimate->intervals);
  CHECK(reread[2].warnings == out[2].warnings);
}
