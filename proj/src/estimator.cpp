#include "riskprobe/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <thread>

#include <fmt/format.h>

#include "riskprobe/csv.hpp"
#include "riskprobe/errors.hpp"

namespace riskprobe {

double snap(double x) { return std::round(x * 1e9) / 1e9; }

std::vector<double> GridAxis::points() const {
  if (!(step > 0.0)) throw InvariantError("grid step must be positive");
  if (max < min) throw InvariantError("grid max below min");
  const auto n = static_cast<long>(std::floor((max - min) / step + 1e-9)) + 1;
  std::vector<double> out;
  out.reserve(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) out.push_back(snap(min + static_cast<double>(i) * step));
  return out;
}

void EstimateConfig::validate() const {
  if (!(sigma_grid.step > 0.0) || !(alpha_grid.step > 0.0)) {
    throw InvariantError("grid steps must be positive");
  }
  if (sigma_grid.min < kSigmaMin || sigma_grid.max > kSigmaMax || sigma_grid.min > sigma_grid.max) {
    throw InvariantError(fmt::format("sigma grid [{}, {}] outside [{}, {}]", sigma_grid.min,
                                     sigma_grid.max, kSigmaMin, kSigmaMax));
  }
  if (alpha_grid.min <= kAlphaMin || alpha_grid.max > kAlphaMax || alpha_grid.min > alpha_grid.max) {
    throw InvariantError(fmt::format("alpha grid [{}, {}] outside ({}, {}]", alpha_grid.min,
                                     alpha_grid.max, kAlphaMin, kAlphaMax));
  }
  if (!(strictness_eps >= 0.0)) throw InvariantError("strictness epsilon must be non-negative");
}

namespace {

void require_gain_series(const LotterySeries& series) {
  if (series.id == SeriesId::Series3) {
    throw InvariantError("gain inequalities apply to Series1 and Series2 only");
  }
}

std::uint16_t preference_bits(const LotterySeries& series, const BehaviorParams& params,
                              double eps) {
  std::uint16_t bits = 0;
  for (const auto& row : series.rows) {
    if (prefers_a(utility(row.option_a, params), utility(row.option_b, params), eps)) {
      bits |= static_cast<std::uint16_t>(1u << (row.index - 1));
    }
  }
  return bits;
}

bool bit(std::uint16_t bits, int row) { return (bits >> (row - 1)) & 1u; }

}  // namespace

bool gain_inequalities(const LotterySeries& series, int s, const BehaviorParams& params,
                       double eps) {
  require_gain_series(series);
  if (s < series.answer_min || s > series.answer_max) {
    throw InvariantError(fmt::format("switch {} outside [{}, {}]", s, series.answer_min,
                                     series.answer_max));
  }
  const auto& pre = series.row(s);
  const auto& post = series.row(s + 1);
  const bool pre_holds = prefers_a(utility(pre.option_a, params), utility(pre.option_b, params), eps);
  const bool post_holds =
      !prefers_a(utility(post.option_a, params), utility(post.option_b, params), eps);
  return pre_holds && post_holds;
}

namespace {

double loss_ratio(const LotteryRow& row, double sigma) {
  const double power = 1.0 - sigma;
  const double gain_gap =
      std::pow(row.option_b.outcomes[0], power) - std::pow(row.option_a.outcomes[0], power);
  const double loss_gap =
      std::pow(-row.option_b.outcomes[1], power) - std::pow(-row.option_a.outcomes[1], power);
  if (!(loss_gap > 0.0)) {
    throw DomainError(fmt::format("row {}: option B does not lose more than option A", row.index));
  }
  return gain_gap / loss_gap;
}

}  // namespace

std::pair<double, double> lambda_interval(const LotterySeries& series3, int s3, double sigma,
                                          double alpha) {
  (void)alpha;
  if (series3.id != SeriesId::Series3) {
    throw InvariantError("lambda bounds need the mixed-lottery series");
  }
  if (s3 < series3.answer_min || s3 > series3.answer_max) {
    throw InvariantError(fmt::format("switch {} outside [{}, {}]", s3, series3.answer_min,
                                     series3.answer_max));
  }
  if (sigma >= 1.0) throw DomainError("sigma must be below 1");
  return {loss_ratio(series3.row(s3), sigma), loss_ratio(series3.row(s3 + 1), sigma)};
}

Estimator::Estimator(EstimateConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto sigmas = cfg_.sigma_grid.points();
  const auto alphas = cfg_.alpha_grid.points();
  grid_.resize(sigmas.size() * alphas.size());

  const auto& s1 = builtin_series(SeriesId::Series1);
  const auto& s2 = builtin_series(SeriesId::Series2);
  auto fill = [&](size_t begin, size_t end) {
    for (size_t k = begin; k < end; ++k) {
      const double sigma = sigmas[k / alphas.size()];
      const double alpha = alphas[k % alphas.size()];
      const BehaviorParams params{sigma, alpha, 1.0};
      grid_[k] = GridPoint{sigma, alpha, preference_bits(s1, params, cfg_.strictness_eps),
                           preference_bits(s2, params, cfg_.strictness_eps)};
    }
  };

  const size_t jobs = static_cast<size_t>(std::max(1, cfg_.jobs));
  if (jobs == 1) {
    fill(0, grid_.size());
    return;
  }
  std::vector<std::thread> workers;
  const size_t chunk = (grid_.size() + jobs - 1) / jobs;
  for (size_t j = 0; j < jobs; ++j) {
    const size_t begin = std::min(grid_.size(), j * chunk);
    const size_t end = std::min(grid_.size(), begin + chunk);
    workers.emplace_back(fill, begin, end);
  }
  for (auto& w : workers) w.join();
}

int Estimator::violations(const GridPoint& p, const SwitchProfile& profile) const {
  return int{!bit(p.prefers_a1, profile.s1)} + int{bit(p.prefers_a1, profile.s1 + 1)} +
         int{!bit(p.prefers_a2, profile.s2)} + int{bit(p.prefers_a2, profile.s2 + 1)};
}

ParamIntervals Estimator::feasible_region(const SwitchProfile& profile) const {
  profile.validate();
  ParamIntervals out;
  out.sigma = {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  out.alpha = out.sigma;
  for (const auto& p : grid_) {
    if (violations(p, profile) != 0) continue;
    ++out.feasible_count;
    out.sigma.lo = std::min(out.sigma.lo, p.sigma);
    out.sigma.hi = std::max(out.sigma.hi, p.sigma);
    out.alpha.lo = std::min(out.alpha.lo, p.alpha);
    out.alpha.hi = std::max(out.alpha.hi, p.alpha);
  }
  if (out.feasible_count == 0) {
    const int miss = nearest_miss(profile);
    throw InfeasibleError(
        fmt::format("no grid point reproduces switches ({}, {}); nearest point violates {} of 4 "
                    "inequalities",
                    profile.s1, profile.s2, miss),
        miss);
  }
  out.lambda = {};
  return out;
}

int Estimator::nearest_miss(const SwitchProfile& profile) const {
  int best = 4;
  for (const auto& p : grid_) best = std::min(best, violations(p, profile));
  return best;
}

Estimate Estimator::estimate(const SwitchProfile& profile) const {
  Estimate result;
  result.intervals = feasible_region(profile);
  const double sigma_hat = result.intervals.sigma.mid();
  const double alpha_hat = result.intervals.alpha.mid();

  const auto& s3 = builtin_series(SeriesId::Series3);
  if (cfg_.lambda_propagation == LambdaPropagation::Midpoint) {
    const auto [lo, hi] = lambda_interval(s3, profile.s3, sigma_hat, alpha_hat);
    result.intervals.lambda = {lo, hi};
  } else {
    Interval lam{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (double sigma : {result.intervals.sigma.lo, result.intervals.sigma.hi}) {
      for (double alpha : {result.intervals.alpha.lo, result.intervals.alpha.hi}) {
        const auto [lo, hi] = lambda_interval(s3, profile.s3, sigma, alpha);
        lam.lo = std::min(lam.lo, lo);
        lam.hi = std::max(lam.hi, hi);
      }
    }
    result.intervals.lambda = lam;
  }
  result.point = {sigma_hat, alpha_hat, result.intervals.lambda.mid()};

  for (SeriesId id : kAllSeries) {
    if (profile.clamped[static_cast<size_t>(id)]) {
      result.warnings.push_back(
          fmt::format("truncated:{} clamped to the answer range", to_string(id)));
    }
  }
  return result;
}

ParamIntervals feasible_region(const SwitchProfile& profile, const EstimateConfig& cfg) {
  return Estimator(cfg).feasible_region(profile);
}

Estimate estimate(const SwitchProfile& profile, const EstimateConfig& cfg) {
  return Estimator(cfg).estimate(profile);
}

std::string clamped_flags(const SwitchProfile& profile) {
  std::string out;
  for (bool c : profile.clamped) out += c ? '1' : '0';
  return out;
}

std::vector<ProfileRecord> read_profiles_csv(std::istream& in) {
  const auto table = csv::Table::read(in);
  std::vector<ProfileRecord> out;
  for (size_t i = 0; i < table.size(); ++i) {
    ProfileRecord rec;
    rec.trial_id = table.get(i, "trial_id");
    rec.profile.s1 = csv::to_int(table.get(i, "s1"), "s1");
    rec.profile.s2 = csv::to_int(table.get(i, "s2"), "s2");
    rec.profile.s3 = csv::to_int(table.get(i, "s3"), "s3");
    const std::string flags =
        table.has_column("clamped_flags") ? table.get(i, "clamped_flags") : std::string("000");
    if (flags.size() != 3 || flags.find_first_not_of("01") != std::string::npos) {
      throw ParseError(fmt::format("trial {}: clamped_flags '{}' must be three 0/1 digits",
                                   rec.trial_id, flags));
    }
    for (size_t k = 0; k < 3; ++k) rec.profile.clamped[k] = flags[k] == '1';
    out.push_back(std::move(rec));
  }
  return out;
}

void write_profiles_csv(std::ostream& out, const std::vector<ProfileRecord>& records) {
  out << "trial_id,s1,s2,s3,clamped_flags\n";
  for (const auto& r : records) {
    out << csv::join({r.trial_id, std::to_string(r.profile.s1), std::to_string(r.profile.s2),
                      std::to_string(r.profile.s3), clamped_flags(r.profile)})
        << '\n';
  }
}

BatchSummary estimate_batch(const Estimator& estimator, const std::vector<ProfileRecord>& profiles,
                            std::vector<EstimateRecord>& out) {
  BatchSummary summary;
  out.clear();
  out.reserve(profiles.size());
  for (const auto& p : profiles) {
    EstimateRecord rec;
    rec.trial_id = p.trial_id;
    try {
      rec.estimate = estimator.estimate(p.profile);
      rec.warnings = rec.estimate->warnings;
      ++summary.estimated;
    } catch (const InfeasibleError& e) {
      rec.warnings.push_back(fmt::format("infeasible:nearest_violations={}", e.min_violations()));
      ++summary.infeasible;
    } catch (const InvariantError& e) {
      rec.warnings.push_back(fmt::format("invalid:{}", e.what()));
      ++summary.infeasible;
    }
    out.push_back(std::move(rec));
  }
  return summary;
}

namespace {

constexpr const char* kEstimateHeader =
    "trial_id,sigma,alpha,lambda,sigma_lo,sigma_hi,alpha_lo,alpha_hi,lambda_lo,lambda_hi,"
    "feasible_count,warnings";

std::string join_warnings(const std::vector<std::string>& warnings) {
  std::string out;
  for (size_t i = 0; i < warnings.size(); ++i) {
    if (i) out += ';';
    out += warnings[i];
  }
  return out;
}

}  // namespace

void write_estimates_csv(std::ostream& out, const std::vector<EstimateRecord>& records) {
  out << kEstimateHeader << '\n';
  for (const auto& r : records) {
    std::vector<std::string> fields{r.trial_id};
    if (r.estimate) {
      const auto& e = *r.estimate;
      for (double x : {e.point.sigma, e.point.alpha, e.point.lambda, e.intervals.sigma.lo,
                       e.intervals.sigma.hi, e.intervals.alpha.lo, e.intervals.alpha.hi,
                       e.intervals.lambda.lo, e.intervals.lambda.hi}) {
        fields.push_back(csv::format_double(x));
      }
      fields.push_back(std::to_string(e.intervals.feasible_count));
    } else {
      fields.resize(11);
      fields[10] = "0";
    }
    fields.push_back(join_warnings(r.warnings));
    out << csv::join(fields) << '\n';
  }
}

std::vector<EstimateRecord> read_estimates_csv(std::istream& in) {
  const auto table = csv::Table::read(in);
  std::vector<EstimateRecord> out;
  for (size_t i = 0; i < table.size(); ++i) {
    EstimateRecord rec;
    rec.trial_id = table.get(i, "trial_id");
    const std::string& warnings = table.get(i, "warnings");
    size_t start = 0;
    while (start < warnings.size()) {
      const size_t end = std::min(warnings.find(';', start), warnings.size());
      rec.warnings.push_back(warnings.substr(start, end - start));
      start = end + 1;
    }
    if (!table.get(i, "sigma").empty()) {
      auto num = [&](std::string_view col) { return csv::to_double(table.get(i, col), col); };
      Estimate e;
      e.point = {num("sigma"), num("alpha"), num("lambda")};
      e.intervals.sigma = {num("sigma_lo"), num("sigma_hi")};
      e.intervals.alpha = {num("alpha_lo"), num("alpha_hi")};
      e.intervals.lambda = {num("lambda_lo"), num("lambda_hi")};
      e.intervals.feasible_count = csv::to_int(table.get(i, "feasible_count"), "feasible_count");
      e.warnings = rec.warnings;
      rec.estimate = std::move(e);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace riskprobe
