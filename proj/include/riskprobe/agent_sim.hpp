#pragma once

// Synthetic responder with known parameters. Picks A on a row iff its
// utility is at least B's (same tie rule as the estimator), so estimating
// its profile must recover intervals around the parameters it was given.

#include <array>
#include <vector>

#include "riskprobe/mpl_series.hpp"
#include "riskprobe/rng.hpp"
#include "riskprobe/tcn_model.hpp"

namespace riskprobe {

struct PlayResult {
  int switch_point = 1;  // within the series answer range
  bool clamped = false;  // true switch (0 or all rows) was outside the range
  int raw_switch = 0;    // leading A count before clamping
  std::vector<Choice> choices;
};

PlayResult play(const BehaviorParams& params, const LotterySeries& series);

// Noise on switch points: with probability epsilon per series the switch
// moves one row up or down (equally likely), clamped to the answer range.
struct NoiseSpec {
  double epsilon = 0.0;
  void validate() const;
};

// Profile over the three built-in series without noise.
SwitchProfile play_profile(const BehaviorParams& params);

SwitchProfile play_profile(const BehaviorParams& params, const NoiseSpec& noise, Engine& rng);

// Applies NoiseSpec to an existing profile. Always consumes two draws per
// series; `shifted` (optional) reports which series drew a shift.
SwitchProfile apply_noise(SwitchProfile profile, const NoiseSpec& noise, Engine& rng,
                          std::array<bool, 3>* shifted = nullptr);

}  // namespace riskprobe
