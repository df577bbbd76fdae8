#include "riskprobe/tcn_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <fmt/format.h>

#include "riskprobe/errors.hpp"

namespace riskprobe {

void BehaviorParams::validate() const {
  if (!(sigma >= kSigmaMin && sigma <= kSigmaMax)) {
    throw DomainError(fmt::format("sigma {} outside [{}, {}]", sigma, kSigmaMin, kSigmaMax));
  }
  if (!(alpha > kAlphaMin && alpha <= kAlphaMax)) {
    throw DomainError(fmt::format("alpha {} outside ({}, {}]", alpha, kAlphaMin, kAlphaMax));
  }
  if (!(lambda > kLambdaMin && lambda <= kLambdaMax)) {
    throw DomainError(fmt::format("lambda {} outside ({}, {}]", lambda, kLambdaMin, kLambdaMax));
  }
}

void LotteryOption::validate() const {
  for (double x : outcomes) {
    if (!std::isfinite(x)) throw InvariantError("lottery outcome is not finite");
  }
  for (double p : probs) {
    if (!(p > 0.0 && p <= 1.0)) {
      throw InvariantError(fmt::format("probability {} outside (0, 1]", p));
    }
  }
  if (std::abs(probs[0] + probs[1] - 1.0) > 1e-12) {
    throw InvariantError(fmt::format("probabilities sum to {}, expected 1", probs[0] + probs[1]));
  }
}

double LotteryOption::expected_value() const {
  return probs[0] * outcomes[0] + probs[1] * outcomes[1];
}

double value(double x, const BehaviorParams& params) {
  if (params.sigma >= 1.0) {
    throw DomainError(fmt::format("sigma {} >= 1 makes the value function flat", params.sigma));
  }
  if (!std::isfinite(x)) throw DomainError("value() of a non-finite outcome");
  const double power = 1.0 - params.sigma;
  if (x > 0.0) return std::pow(x, power);
  if (x < 0.0) return -params.lambda * std::pow(-x, power);
  return 0.0;
}

double weight(double p, const BehaviorParams& params) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw DomainError(fmt::format("weight() probability {} outside (0, 1]", p));
  }
  if (!(params.alpha > 0.0)) {
    throw DomainError(fmt::format("alpha {} must be positive", params.alpha));
  }
  if (p == 1.0) return 1.0;
  return std::exp(-std::pow(-std::log(p), params.alpha));
}

double utility(const LotteryOption& option, const BehaviorParams& params) {
  option.validate();
  const auto [a, b] = option.outcomes;
  const auto [pa, pb] = option.probs;

  if (a == 0.0 && b == 0.0) {
    throw DomainError("lottery with both outcomes zero has no defined branch");
  }
  if (a == b) return value(a, params);

  // A zero outcome contributes v(0) = 0 under either branch.
  if (a == 0.0) return weight(pb, params) * value(b, params);
  if (b == 0.0) return weight(pa, params) * value(a, params);

  const bool same_sign = (a > 0.0) == (b > 0.0);
  if (!same_sign) {
    return weight(pa, params) * value(a, params) + weight(pb, params) * value(b, params);
  }

  // Same sign: x is the outcome of larger magnitude, y the other.
  const bool a_is_x = std::abs(a) > std::abs(b);
  const double x = a_is_x ? a : b;
  const double y = a_is_x ? b : a;
  const double px = a_is_x ? pa : pb;
  const double vy = value(y, params);
  return vy + weight(px, params) * (value(x, params) - vy);
}

bool prefers_a(double utility_a, double utility_b, double eps) {
  const double scale = std::max({1.0, std::abs(utility_a), std::abs(utility_b)});
  return utility_a >= utility_b - eps * scale;
}

}  // namespace riskprobe
