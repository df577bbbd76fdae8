#pragma once

// Multiple-price-list lottery series. Each row offers option A and option B;
// a subject picks A on rows 1..x and B afterwards, and x is the switching
// point reported back.

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "riskprobe/tcn_model.hpp"

namespace riskprobe {

enum class SeriesId { Series1 = 0, Series2 = 1, Series3 = 2 };

inline constexpr std::array<SeriesId, 3> kAllSeries = {SeriesId::Series1, SeriesId::Series2,
                                                       SeriesId::Series3};

std::string_view to_string(SeriesId id);
SeriesId series_id_from_string(std::string_view name);

struct LotteryRow {
  int index = 0;  // 1-based
  LotteryOption option_a;
  LotteryOption option_b;
  bool operator==(const LotteryRow&) const = default;
};

struct LotterySeries {
  SeriesId id = SeriesId::Series1;
  std::vector<LotteryRow> rows;
  int answer_min = 1;
  int answer_max = 1;

  const LotteryRow& row(int index) const { return rows.at(static_cast<size_t>(index - 1)); }
  int size() const { return static_cast<int>(rows.size()); }

  // Throws InvariantError naming the failed check.
  void validate() const;
  bool operator==(const LotterySeries&) const = default;
};

// The three series used for elicitation, in order. Immutable.
const std::array<LotterySeries, 3>& builtin_series();
const LotterySeries& builtin_series(SeriesId id);

nlohmann::json to_json(const LotterySeries& series);
LotterySeries series_from_json(const nlohmann::json& doc);
LotterySeries parse_series(std::string_view text);
LotterySeries load_series(const std::filesystem::path& path);

enum class Choice { A, B };

// Number of leading A choices for a single-switch vector A..A B..B, in
// [0, rows]. Throws MultiSwitchError otherwise.
int raw_switch_point(std::span<const Choice> choices);

// Last row at which A is chosen. A vector with no switch (all A or all B)
// throws AllSameError unless `clamp` is set, in which case the switch is
// forced into [answer_min, answer_max].
int switch_point_from_choices(const LotterySeries& series, std::span<const Choice> choices,
                              bool clamp = false);

// Inverse of switch_point_from_choices: A on rows 1..x, B afterwards.
std::vector<Choice> expand_choices(const LotterySeries& series, int x);

// Plain-text, column-aligned rendering injected into elicitation prompts.
std::string table_text(const LotterySeries& series);

struct SwitchProfile {
  int s1 = 1;
  int s2 = 1;
  int s3 = 1;
  std::array<bool, 3> clamped{};

  int at(SeriesId id) const;
  void set(SeriesId id, int value);
  bool any_clamped() const { return clamped[0] || clamped[1] || clamped[2]; }

  // Throws InvariantError when a switch lies outside its series answer range.
  void validate() const;
  bool operator==(const SwitchProfile&) const = default;
};

}  // namespace riskprobe
