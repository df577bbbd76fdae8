#include "riskprobe/mpl_series.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "riskprobe/errors.hpp"

namespace riskprobe {

using nlohmann::json;

std::string_view to_string(SeriesId id) {
  switch (id) {
    case SeriesId::Series1: return "Series1";
    case SeriesId::Series2: return "Series2";
    case SeriesId::Series3: return "Series3";
  }
  return "?";
}

SeriesId series_id_from_string(std::string_view name) {
  for (SeriesId id : kAllSeries) {
    if (to_string(id) == name) return id;
  }
  throw ParseError(fmt::format("unknown series id '{}'", name));
}

namespace {

LotteryOption option(double hi, double lo, double p_hi, double p_lo) {
  return LotteryOption{{hi, lo}, {p_hi, p_lo}};
}

std::array<LotterySeries, 3> make_builtin() {
  LotterySeries s1{SeriesId::Series1, {}, 1, 13};
  const double s1_b[] = {34.0, 37.0, 41.0, 46.0, 53.0, 62.0, 75.0,
                         92.0, 110.0, 150.0, 200.0, 300.0, 500.0, 850.0};
  for (int i = 0; i < 14; ++i) {
    s1.rows.push_back({i + 1, option(20.0, 5.0, 0.3, 0.7), option(s1_b[i], 2.0, 0.1, 0.9)});
  }

  LotterySeries s2{SeriesId::Series2, {}, 1, 13};
  const double s2_b[] = {27, 28, 29, 30, 31, 32, 34, 36, 38, 41, 45, 50, 55, 65};
  for (int i = 0; i < 14; ++i) {
    s2.rows.push_back({i + 1, option(20.0, 15.0, 0.9, 0.1), option(s2_b[i], 2.0, 0.7, 0.3)});
  }

  LotterySeries s3{SeriesId::Series3, {}, 1, 6};
  struct MixedRow {
    double win_a, lose_a, win_b, lose_b;
  };
  const MixedRow s3_rows[] = {{12, 2, 15, 10},  {2, 2, 15, 10},  {0.5, 2, 15, 10},
                              {0.5, 2, 15, 8},  {0.5, 4, 15, 8}, {0.5, 4, 15, 7},
                              {0.5, 4, 15, 5}};
  for (int i = 0; i < 7; ++i) {
    const auto& r = s3_rows[i];
    s3.rows.push_back({i + 1, option(r.win_a, -r.lose_a, 0.5, 0.5),
                       option(r.win_b, -r.lose_b, 0.5, 0.5)});
  }
  return {s1, s2, s3};
}

bool is_gain_only(const LotteryOption& o) { return o.outcomes[0] > 0.0 && o.outcomes[1] > 0.0; }

bool is_even_mixed(const LotteryOption& o) {
  return o.outcomes[0] > 0.0 && o.outcomes[1] < 0.0 && o.probs[0] == 0.5 && o.probs[1] == 0.5;
}

}  // namespace

void LotterySeries::validate() const {
  if (rows.empty()) throw InvariantError("series has no rows");
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].index != static_cast<int>(i) + 1) {
      throw InvariantError(fmt::format("row indices not contiguous at position {}", i + 1));
    }
    try {
      rows[i].option_a.validate();
      rows[i].option_b.validate();
    } catch (const InvariantError& e) {
      throw InvariantError(fmt::format("row {}: {}", rows[i].index, e.what()));
    }
  }
  if (answer_min < 1 || answer_max < answer_min || answer_max >= size()) {
    throw InvariantError(fmt::format("answer range [{}, {}] invalid for {} rows", answer_min,
                                     answer_max, size()));
  }

  if (id == SeriesId::Series3) {
    if (size() != 7 || answer_min != 1 || answer_max != 6) {
      throw InvariantError("Series3 must have 7 rows and answer range [1, 6]");
    }
    for (const auto& r : rows) {
      if (!is_even_mixed(r.option_a) || !is_even_mixed(r.option_b)) {
        throw InvariantError(
            fmt::format("Series3 row {}: options must mix one gain and one loss at 0.5/0.5",
                        r.index));
      }
    }
    return;
  }

  if (size() != 14 || answer_min != 1 || answer_max != 13) {
    throw InvariantError(
        fmt::format("{} must have 14 rows and answer range [1, 13]", to_string(id)));
  }
  for (const auto& r : rows) {
    if (!is_gain_only(r.option_a) || !is_gain_only(r.option_b)) {
      throw InvariantError(fmt::format("{} row {}: all outcomes must be positive", to_string(id),
                                       r.index));
    }
    if (r.option_a != rows.front().option_a) {
      throw InvariantError(
          fmt::format("{} row {}: option A must be identical on every row", to_string(id), r.index));
    }
    if (r.index > 1 && !(r.option_b.outcomes[0] > row(r.index - 1).option_b.outcomes[0])) {
      throw InvariantError(fmt::format(
          "{} row {}: option B prize must increase strictly with the row", to_string(id), r.index));
    }
  }
}

const std::array<LotterySeries, 3>& builtin_series() {
  static const std::array<LotterySeries, 3> series = make_builtin();
  return series;
}

const LotterySeries& builtin_series(SeriesId id) {
  return builtin_series()[static_cast<size_t>(id)];
}

namespace {

json option_to_json(const LotteryOption& o) {
  return json{{"outcomes", {o.outcomes[0], o.outcomes[1]}}, {"probs", {o.probs[0], o.probs[1]}}};
}

std::array<double, 2> pair_from_json(const json& j, std::string_view what, int row) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ParseError(fmt::format("row {}: '{}' must be an array of two numbers", row, what));
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

LotteryOption option_from_json(const json& j, std::string_view which, int row) {
  if (!j.is_object() || !j.contains("outcomes") || !j.contains("probs")) {
    throw ParseError(fmt::format("row {}: {} needs 'outcomes' and 'probs'", row, which));
  }
  return LotteryOption{pair_from_json(j["outcomes"], "outcomes", row),
                       pair_from_json(j["probs"], "probs", row)};
}

}  // namespace

json to_json(const LotterySeries& series) {
  json rows = json::array();
  for (const auto& r : series.rows) {
    rows.push_back(json{{"index", r.index},
                        {"optionA", option_to_json(r.option_a)},
                        {"optionB", option_to_json(r.option_b)}});
  }
  return json{{"id", std::string(to_string(series.id))},
              {"rows", rows},
              {"answer_min", series.answer_min},
              {"answer_max", series.answer_max}};
}

LotterySeries series_from_json(const json& doc) {
  if (!doc.is_object()) throw ParseError("series document must be a JSON object");
  for (const char* key : {"id", "rows", "answer_min", "answer_max"}) {
    if (!doc.contains(key)) throw ParseError(fmt::format("series document missing '{}'", key));
  }
  if (!doc["id"].is_string()) throw ParseError("'id' must be a string");
  if (!doc["rows"].is_array()) throw ParseError("'rows' must be an array");
  if (!doc["answer_min"].is_number_integer() || !doc["answer_max"].is_number_integer()) {
    throw ParseError("'answer_min' and 'answer_max' must be integers");
  }

  LotterySeries series;
  series.id = series_id_from_string(doc["id"].get<std::string>());
  series.answer_min = doc["answer_min"].get<int>();
  series.answer_max = doc["answer_max"].get<int>();
  int expected = 1;
  for (const auto& r : doc["rows"]) {
    if (!r.is_object() || !r.contains("index") || !r["index"].is_number_integer()) {
      throw ParseError(fmt::format("row {}: missing integer 'index'", expected));
    }
    const int index = r["index"].get<int>();
    if (index != expected) {
      throw ParseError(
          fmt::format("row {}: index {} breaks the contiguous sequence", expected, index));
    }
    if (!r.contains("optionA") || !r.contains("optionB")) {
      throw ParseError(fmt::format("row {}: needs 'optionA' and 'optionB'", index));
    }
    series.rows.push_back({index, option_from_json(r["optionA"], "optionA", index),
                           option_from_json(r["optionB"], "optionB", index)});
    ++expected;
  }
  series.validate();
  return series;
}

LotterySeries parse_series(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    // Translate the byte offset into line/column.
    size_t line = 1, col = 1;
    const size_t end = std::min<size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ParseError(fmt::format("series JSON syntax error at line {}, column {}: {}", line, col,
                                 e.what()));
  }
  return series_from_json(doc);
}

LotterySeries load_series(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open series file '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_series(buf.str());
}

int raw_switch_point(std::span<const Choice> choices) {
  size_t leading_a = 0;
  while (leading_a < choices.size() && choices[leading_a] == Choice::A) ++leading_a;
  for (size_t i = leading_a; i < choices.size(); ++i) {
    if (choices[i] == Choice::A) {
      throw MultiSwitchError(
          fmt::format("choice vector returns to A at row {} after switching to B", i + 1));
    }
  }
  return static_cast<int>(leading_a);
}

int switch_point_from_choices(const LotterySeries& series, std::span<const Choice> choices,
                              bool clamp) {
  if (static_cast<int>(choices.size()) != series.size()) {
    throw InvariantError(fmt::format("{} choices for a {}-row series", choices.size(),
                                     series.size()));
  }
  const int x = raw_switch_point(choices);
  if (x >= series.answer_min && x <= series.answer_max) return x;
  if (x > 0 && x < series.size()) {
    // A real switch the answer range cannot express.
    throw InvariantError(fmt::format("switch {} outside answer range [{}, {}]", x,
                                     series.answer_min, series.answer_max));
  }
  if (!clamp) {
    throw AllSameError(fmt::format("no switch: every choice is {}", x == 0 ? "B" : "A"));
  }
  return x == 0 ? series.answer_min : series.answer_max;
}

std::vector<Choice> expand_choices(const LotterySeries& series, int x) {
  if (x < 0 || x > series.size()) {
    throw InvariantError(fmt::format("switch {} outside [0, {}]", x, series.size()));
  }
  std::vector<Choice> out(static_cast<size_t>(series.size()), Choice::B);
  for (int i = 0; i < x; ++i) out[static_cast<size_t>(i)] = Choice::A;
  return out;
}

namespace {

std::string percent(double p) { return fmt::format("{}%", std::lround(p * 100.0)); }

std::string amount_cell(double x, bool mixed) {
  if (!mixed) return fmt::format("{}", x);
  return x >= 0.0 ? fmt::format("Win {}", x) : fmt::format("Lose {}", -x);
}

std::string caption(SeriesId id) {
  switch (id) {
    case SeriesId::Series1: return "Table 8: Multiple Choice List: Series 1";
    case SeriesId::Series2: return "Table 9: Multiple Choice List: Series 2";
    case SeriesId::Series3: return "Table 10: Multiple Choice List: Series 3";
  }
  return {};
}

std::string trim_right(std::string s) {
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace

std::string table_text(const LotterySeries& series) {
  constexpr int kWidth = 10;
  const bool mixed = series.id == SeriesId::Series3;
  const auto& first = series.rows.front();
  std::string out = caption(series.id) + "\n";
  out += trim_right(fmt::format("{:<{}}{:<{}}{:<{}}", "Lottery", kWidth, "Option A", 2 * kWidth,
                                "Option B", 2 * kWidth)) + "\n";
  out += trim_right(fmt::format("{:<{}}{:<{}}{:<{}}{:<{}}{:<{}}", "", kWidth,
                                percent(first.option_a.probs[0]), kWidth,
                                percent(first.option_a.probs[1]), kWidth,
                                percent(first.option_b.probs[0]), kWidth,
                                percent(first.option_b.probs[1]), kWidth)) + "\n";
  for (const auto& r : series.rows) {
    out += trim_right(fmt::format(
               "{:<{}}{:<{}}{:<{}}{:<{}}{:<{}}", r.index, kWidth,
               amount_cell(r.option_a.outcomes[0], mixed), kWidth,
               amount_cell(r.option_a.outcomes[1], mixed), kWidth,
               amount_cell(r.option_b.outcomes[0], mixed), kWidth,
               amount_cell(r.option_b.outcomes[1], mixed), kWidth)) + "\n";
  }
  return out;
}

int SwitchProfile::at(SeriesId id) const {
  switch (id) {
    case SeriesId::Series1: return s1;
    case SeriesId::Series2: return s2;
    case SeriesId::Series3: return s3;
  }
  return 0;
}

void SwitchProfile::set(SeriesId id, int value) {
  switch (id) {
    case SeriesId::Series1: s1 = value; break;
    case SeriesId::Series2: s2 = value; break;
    case SeriesId::Series3: s3 = value; break;
  }
}

void SwitchProfile::validate() const {
  for (SeriesId id : kAllSeries) {
    const auto& series = builtin_series(id);
    const int s = at(id);
    if (s < series.answer_min || s > series.answer_max) {
      throw InvariantError(fmt::format("{} switch {} outside [{}, {}]", to_string(id), s,
                                       series.answer_min, series.answer_max));
    }
  }
}

}  // namespace riskprobe
