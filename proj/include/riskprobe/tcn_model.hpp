#pragma once

// Three-parameter prospect-theory model (Tanaka, Camerer & Nguyen):
//
//   v(x) = x^(1-sigma)               x > 0
//        = -lambda * (-x)^(1-sigma)  x < 0
//   w(p) = exp(-(-ln p)^alpha)
//
//   u(x,p; y,q) = v(y) + w(p) (v(x) - v(y))   x > y > 0 or x < y < 0
//               = w(p) v(x) + w(q) v(y)        x < 0 < y
//
// sigma is value-function curvature (> 0 risk averse), alpha the
// probability-weighting exponent (< 1 overweights small probabilities),
// lambda the loss-aversion multiplier. sigma = 0, alpha = lambda = 1 is
// expected value.

#include <array>

namespace riskprobe {

inline constexpr double kSigmaMin = -1.0;
inline constexpr double kSigmaMax = 0.99;
inline constexpr double kAlphaMin = 0.05;  // exclusive
inline constexpr double kAlphaMax = 1.5;
inline constexpr double kLambdaMin = 0.05;  // exclusive
inline constexpr double kLambdaMax = 15.0;

// Relative tolerance under which two utilities count as a tie.
inline constexpr double kTieEpsilon = 1e-12;

struct BehaviorParams {
  double sigma = 0.0;
  double alpha = 1.0;
  double lambda = 1.0;

  // Throws DomainError when any field lies outside the supported domain.
  void validate() const;
  bool operator==(const BehaviorParams&) const = default;
};

struct LotteryOption {
  // outcomes[0] is the favorable ("high") outcome, outcomes[1] the other.
  std::array<double, 2> outcomes{};
  std::array<double, 2> probs{};

  void validate() const;
  double expected_value() const;
  bool operator==(const LotteryOption&) const = default;
};

double value(double x, const BehaviorParams& params);
double weight(double p, const BehaviorParams& params);
double utility(const LotteryOption& option, const BehaviorParams& params);

// True when A is weakly preferred: ties within kTieEpsilon go to A.
bool prefers_a(double utility_a, double utility_b, double eps = kTieEpsilon);

}  // namespace riskprobe
