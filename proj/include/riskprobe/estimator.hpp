#pragma once

// Inverts a switching profile into parameter intervals.
//
// Series 1 and 2 pin (sigma, alpha): at switch s the subject weakly prefers A
// on row s and strictly prefers B on row s + 1. The (sigma, alpha) grid is
// scanned for points satisfying all four inequalities; the bounding box of the
// kept points gives the intervals and their midpoints the estimates. Series 3
// then bounds lambda in closed form, since w(0.5) cancels between two 50/50
// mixed lotteries.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "riskprobe/mpl_series.hpp"
#include "riskprobe/tcn_model.hpp"

namespace riskprobe {

struct GridAxis {
  double min = 0.0;
  double max = 0.0;
  double step = 1.0;

  // min + i * step for i = 0.. while <= max, snapped to 1e-9.
  std::vector<double> points() const;
};

// Rounds to the nearest 1e-9 so grid and truth values built by different
// arithmetic land on the same double.
double snap(double x);

enum class LambdaPropagation { Midpoint, IntervalCorners };

struct EstimateConfig {
  GridAxis sigma_grid{kSigmaMin, kSigmaMax, 0.005};
  GridAxis alpha_grid{0.055, kAlphaMax, 0.005};
  LambdaPropagation lambda_propagation = LambdaPropagation::Midpoint;
  double strictness_eps = kTieEpsilon;
  int jobs = 1;

  void validate() const;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double mid() const { return 0.5 * (lo + hi); }
  bool contains(double x, double slack = 0.0) const { return x >= lo - slack && x <= hi + slack; }
  bool operator==(const Interval&) const = default;
};

struct ParamIntervals {
  Interval sigma;
  Interval alpha;
  Interval lambda;
  int feasible_count = 0;
  bool operator==(const ParamIntervals&) const = default;
};

struct Estimate {
  BehaviorParams point;
  ParamIntervals intervals;
  std::vector<std::string> warnings;
};

// Pre-switch row s weakly favors A and post-switch row s + 1 strictly favors B.
bool gain_inequalities(const LotterySeries& series, int s, const BehaviorParams& params,
                       double eps = kTieEpsilon);

// Closed-form lambda bounds [ratio(s3), ratio(s3 + 1)) for a mixed-lottery
// series. alpha cancels and is accepted for interface uniformity.
std::pair<double, double> lambda_interval(const LotterySeries& series3, int s3, double sigma,
                                          double alpha);

// Reusable estimator: the grid's per-row preferences are computed once at
// construction, so each profile costs one pass over a bit table.
class Estimator {
 public:
  explicit Estimator(EstimateConfig cfg = {});

  const EstimateConfig& config() const { return cfg_; }
  std::size_t grid_size() const { return grid_.size(); }

  // sigma/alpha part only; lambda is left empty. Throws InfeasibleError.
  ParamIntervals feasible_region(const SwitchProfile& profile) const;

  // Fewest violated inequalities (out of four) over the grid; 0 if feasible.
  int nearest_miss(const SwitchProfile& profile) const;

  Estimate estimate(const SwitchProfile& profile) const;

 private:
  struct GridPoint {
    double sigma;
    double alpha;
    std::uint16_t prefers_a1;  // bit r-1: A weakly preferred on Series1 row r
    std::uint16_t prefers_a2;
  };

  int violations(const GridPoint& p, const SwitchProfile& profile) const;

  EstimateConfig cfg_;
  std::vector<GridPoint> grid_;
};

ParamIntervals feasible_region(const SwitchProfile& profile, const EstimateConfig& cfg = {});
Estimate estimate(const SwitchProfile& profile, const EstimateConfig& cfg = {});

// Batch mode: profile CSV in, estimate CSV out.
struct ProfileRecord {
  std::string trial_id;
  SwitchProfile profile;
};

std::vector<ProfileRecord> read_profiles_csv(std::istream& in);
void write_profiles_csv(std::ostream& out, const std::vector<ProfileRecord>& records);

struct EstimateRecord {
  std::string trial_id;
  std::optional<Estimate> estimate;  // empty when infeasible
  std::vector<std::string> warnings;
};

struct BatchSummary {
  int estimated = 0;
  int infeasible = 0;
};

BatchSummary estimate_batch(const Estimator& estimator, const std::vector<ProfileRecord>& profiles,
                            std::vector<EstimateRecord>& out);
void write_estimates_csv(std::ostream& out, const std::vector<EstimateRecord>& records);
std::vector<EstimateRecord> read_estimates_csv(std::istream& in);

std::string clamped_flags(const SwitchProfile& profile);

}  // namespace riskprobe
