#include "riskprobe/agent_sim.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "riskprobe/errors.hpp"

namespace riskprobe {

PlayResult play(const BehaviorParams& params, const LotterySeries& series) {
  params.validate();
  PlayResult result;
  result.choices.reserve(series.rows.size());
  for (const auto& row : series.rows) {
    const bool a = prefers_a(utility(row.option_a, params), utility(row.option_b, params));
    result.choices.push_back(a ? Choice::A : Choice::B);
  }
  result.raw_switch = raw_switch_point(result.choices);
  result.switch_point = std::clamp(result.raw_switch, series.answer_min, series.answer_max);
  result.clamped = result.switch_point != result.raw_switch;
  return result;
}

void NoiseSpec::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 0.5)) {
    throw InvariantError(fmt::format("noise epsilon {} outside [0, 0.5]", epsilon));
  }
}

SwitchProfile play_profile(const BehaviorParams& params) {
  SwitchProfile profile;
  for (SeriesId id : kAllSeries) {
    const auto r = play(params, builtin_series(id));
    profile.set(id, r.switch_point);
    profile.clamped[static_cast<size_t>(id)] = r.clamped;
  }
  return profile;
}

SwitchProfile apply_noise(SwitchProfile profile, const NoiseSpec& noise, Engine& rng,
                          std::array<bool, 3>* shifted) {
  noise.validate();
  for (SeriesId id : kAllSeries) {
    const bool shift = uniform01(rng) < noise.epsilon;
    const int direction = uniform01(rng) < 0.5 ? -1 : 1;
    if (shifted) (*shifted)[static_cast<size_t>(id)] = shift;
    if (!shift) continue;
    const auto& series = builtin_series(id);
    profile.set(id, std::clamp(profile.at(id) + direction, series.answer_min, series.answer_max));
  }
  return profile;
}

SwitchProfile play_profile(const BehaviorParams& params, const NoiseSpec& noise, Engine& rng) {
  return apply_noise(play_profile(params), noise, rng);
}

}  // namespace riskprobe
