#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "reference_tables.hpp"
#include "riskprobe/analysis.hpp"
#include "riskprobe/csv.hpp"
#include "riskprobe/errors.hpp"
#include "riskprobe/rng.hpp"

using namespace riskprobe;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}


std::vector<std::string> names_for(size_t k) {
  std::vector<std::string> names;
  for (size_t j = 0; j < k; ++j) names.push_back("x" + std::to_string(j + 1));
  return names;
}

// Numbers in a text, in order of appearance.
std::vector<double> numbers_in(const std::string& text) {
  std::vector<double> out;
  size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    const bool start = std::isdigit(static_cast<unsigned char>(c)) ||
                       ((c == '-' || c == '.') && i + 1 < text.size() &&
                        (std::isdigit(static_cast<unsigned char>(text[i + 1])) || text[i + 1] == '.'));
    if (!start) {
      ++i;
      continue;
    }
    size_t used = 0;
    out.push_back(std::stod(text.substr(i), &used));
    i += used;
  }
  return out;
}

}  // namespace

TEST_CASE("summarize") {
  std::vector<BehaviorParams> xs{{1, 1, 1}, {2, 1, 1}, {3, 1, 1}};
  const auto s = summarize(xs);
  CHECK(s[Parameter::Sigma].mean == 2.0);
  CHECK(s[Parameter::Sigma].std_dev == 1.0);
  CHECK(*s[Parameter::Sigma].min == 1.0);
  CHECK(*s[Parameter::Sigma].max == 3.0);
  CHECK(s[Parameter::Alpha].std_dev == 0.0);
  CHECK(s.warnings.empty());

  const auto one = summarize(std::vector<BehaviorParams>{{0.3, 0.7, 2.0}});
  CHECK(one[Parameter::Lambda].std_dev == 0.0);
  CHECK(one.warnings.size() == 1);

  CHECK_THROWS_AS((summarize(std::vector<BehaviorParams>{})), EmptyInputError);
}

TEST_CASE("summary fixture reproducing a reference cohort row") {
  // 300 values: the extremes plus symmetric pairs around the remaining mean.
  const int n = 300;
  const double mean = 0.6031;
  const double sd = 0.1620;
  const double lo = 0.17;
  const double hi = 0.855;
  const double rest_mean = (n * mean - lo - hi) / (n - 2);
  const double ss = (n - 1) * sd * sd - (lo - mean) * (lo - mean) - (hi - mean) * (hi - mean);
  const double d = std::sqrt(ss / (n - 2) - (rest_mean - mean) * (rest_mean - mean));
  REQUIRE(rest_mean - d > lo);
  REQUIRE(rest_mean + d < hi);
  std::vector<BehaviorParams> xs{{lo, 1, 1}, {hi, 1, 1}};
  for (int i = 0; i < (n - 2) / 2; ++i) {
    xs.push_back({rest_mean - d, 1, 1});
    xs.push_back({rest_mean + d, 1, 1});
  }
  const auto s = summarize(xs)[Parameter::Sigma];
  CHECK(fmt::format("{:.4f}", s.mean) == "0.6031");
  CHECK(fmt::format("{:.4f}", s.std_dev) == "0.1620");
  CHECK(fmt::format("{:.4f}", *s.min) == "0.1700");
  CHECK(fmt::format("{:.4f}", *s.max) == "0.8550");
}

TEST_CASE("stars") {
  CHECK(stars_for(0.05) == Stars::None);
  CHECK(stars_for(0.0499) == Stars::One);
  CHECK(stars_for(0.01) == Stars::One);
  CHECK(stars_for(0.004) == Stars::Two);
  CHECK(stars_for(0.001) == Stars::Two);
  CHECK(stars_for(0.0005) == Stars::Three);
  CHECK(to_string(Stars::Three) == "***");
  CHECK(to_string(Stars::None).empty());
}

TEST_CASE("exact fits") {
  const std::vector<double> y{1, 2, 3};
  const auto r = regress(y, {{0}, {1}, {2}}, {"x"});
  CHECK(std::abs(r.coefficient("Constant") - 1.0) < 1e-12);
  CHECK(std::abs(r.coefficient("x") - 1.0) < 1e-12);
  CHECK(std::abs(r.std_error("x")) < 1e-7);
  CHECK(r.r_squared == doctest::Approx(1.0));

  const std::vector<double> y2{2, 4, 6};
  const auto c = regress(y2, {{}, {}, {}}, {});
  REQUIRE(c.terms.size() == 1);
  CHECK(std::abs(c.coefficient("Constant") - 4.0) < 1e-12);
  CHECK(c.std_error("Constant") == doctest::Approx(2.0 / std::sqrt(3.0)));
  CHECK_THROWS_AS(c.term_index("x"), std::out_of_range);

  CHECK_THROWS_AS((regress(std::vector<double>{1, 2}, {{0}, {1}}, {"x"})), InvariantError);
}

TEST_CASE("p-values follow Student t") {
  Engine rng(8);
  std::vector<double> y;
  std::vector<std::vector<double>> x;
  for (int i = 0; i < 12; ++i) {
    x.push_back({static_cast<double>(i % 4), standard_normal(rng)});
    y.push_back(0.2 * x.back()[0] + standard_normal(rng));
  }
  const auto r = regress(y, x, {"a", "b"});
  for (size_t j = 0; j < r.terms.size(); ++j) {
    CHECK(r.t_stats[j] == doctest::Approx(r.coefficients[j] / r.std_errors[j]));
    CHECK(r.p_values[j] >= 0.0);
    CHECK(r.p_values[j] <= 1.0);
  }
  // Two groups of six with residuals of +-1: slope 1, 10 degrees of freedom.
  std::vector<double> yy;
  std::vector<std::vector<double>> xx;
  for (int i = 0; i < 12; ++i) {
    const double xi = i < 6 ? 0.0 : 1.0;
    const double e = (i % 2 == 0 ? 1.0 : -1.0);
    xx.push_back({xi});
    yy.push_back(xi * 1.0 + e);
  }
  const auto f = regress(yy, xx, {"g"});
  // residual variance 12/10, se(g) = sqrt(1.2 * (1/6 + 1/6)) = sqrt(0.4)
  CHECK(f.std_error("g") == doctest::Approx(std::sqrt(0.4)).epsilon(1e-12));
  const double t = 1.0 / std::sqrt(0.4);
  CHECK(f.t_stats[1] == doctest::Approx(t).epsilon(1e-12));
  // 2 * P(T_10 > 1.5811388300841898), from an independent implementation.
  CHECK(f.p_values[1] == doctest::Approx(0.1449276054040804).epsilon(1e-9));
}

TEST_CASE("OLS matches a normal-equations oracle on random systems") {
  Engine rng(31337);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t k = 1 + uniform_index(rng, 7);        // regressors, plus intercept <= 8 terms
    const size_t n = k + 3 + uniform_index(rng, 50 - k - 3);
    std::vector<std::vector<double>> x(n, std::vector<double>(k));
    std::vector<double> y(n);
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < k; ++j) {
        x[i][j] = j % 2 == 0 ? standard_normal(rng) : static_cast<double>(uniform01(rng) < 0.4);
      }
      y[i] = standard_normal(rng);
    }
    RegressionResult r;
    try {
      r = regress(y, x, names_for(k));
    } catch (const RankDeficientError&) {
      --trial;  // a dummy that never varied; redraw
      continue;
    }
    const auto b = oracles::normal_equations(y, x);
    for (size_t j = 0; j <= k; ++j) CHECK(std::abs(r.coefficients[j] - b[j]) < 1e-9);
  }
}

TEST_CASE("planted coefficients") {
  SUBCASE("zero noise recovers exactly") {
    Engine rng(4);
    const std::vector<double> beta{0.3, -0.05, 0.02, 0.11};
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (int i = 0; i < 200; ++i) {
      std::vector<double> row{static_cast<double>(uniform01(rng) < 0.5), static_cast<double>(uniform01(rng) < 0.3),
                              static_cast<double>(uniform01(rng) < 0.2)};
      y.push_back(beta[0] + beta[1] * row[0] + beta[2] * row[1] + beta[3] * row[2]);
      x.push_back(row);
    }
    const auto r = regress(y, x, {"female", "rural", "graduate"});
    for (size_t j = 0; j < beta.size(); ++j) CHECK(std::abs(r.coefficients[j] - beta[j]) < 1e-9);

    // Shifting y moves only the intercept.
    std::vector<double> shifted = y;
    for (auto& v : shifted) v += 2.5;
    const auto s = regress(shifted, x, {"female", "rural", "graduate"});
    CHECK(std::abs(s.coefficients[0] - beta[0] - 2.5) < 1e-9);
    for (size_t j = 1; j < beta.size(); ++j) CHECK(std::abs(s.coefficients[j] - beta[j]) < 1e-9);
  }

  SUBCASE("noisy recovery within three standard errors") {
    // About 0.27% of draws land outside 3 SE by chance, so count them.
    int outside = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      Engine rng(seed);
      std::vector<std::vector<double>> x;
      std::vector<double> y;
      for (int i = 0; i < 500; ++i) {
        const double female = uniform01(rng) < 0.5 ? 1.0 : 0.0;
        x.push_back({female});
        y.push_back(0.3 - 0.05 * female + 0.01 * standard_normal(rng));
      }
      const auto r = regress(y, x, {"Female"});
      const double z = std::abs(r.coefficient("Female") + 0.05) / r.std_error("Female");
      outside += z > 3.0;
      CHECK(z < 5.0);
      CHECK(r.stars[1] == Stars::Three);
    }
    CHECK(outside <= 1);
  }
}

TEST_CASE("rank deficiency names the collinear columns") {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (int i = 0; i < 20; ++i) {
    const double a = i % 2;
    x.push_back({a, 1.0 - a, static_cast<double>(i % 3 == 0)});
    y.push_back(i);
  }
  try {
    (void)regress(y, x, {"Male", "Female", "Rural"});
    FAIL("expected RankDeficientError");
  } catch (const RankDeficientError& e) {
    const std::string msg = e.what();
    CHECK((msg.find("Male") != std::string::npos || msg.find("Female") != std::string::npos ||
           msg.find("Constant") != std::string::npos));
  }

  // A dummy that never varies is collinear with the intercept.
  std::vector<std::vector<double>> z;
  for (int i = 0; i < 10; ++i) z.push_back({0.0, static_cast<double>(i % 2)});
  CHECK_THROWS_AS((regress(std::vector<double>(10, 1.0), z, {"Widowed", "Female"})), RankDeficientError);
}

TEST_CASE("coefficient formatting") {
  CHECK(format_coefficient(0.0013, 4) == ".0013");
  CHECK(format_coefficient(-0.0366, 4) == "-.0366");
  CHECK(format_coefficient(1.4813, 4) == "1.4813");
  CHECK(format_coefficient(-0.3884, 4) == "-.3884");
}

TEST_CASE("report layouts match the golden tables") {
  ReportOptions opts;
  opts.constant_std_error = false;
  CHECK(summary_table(fixtures::summary_rows(), ReportFormat::Markdown, opts) ==
        slurp(RISKPROBE_SOURCE_DIR "/tests/golden/summary_reference.md"));
  CHECK(regression_table(fixtures::regression_columns(), ReportFormat::Markdown, opts) ==
        slurp(RISKPROBE_SOURCE_DIR "/tests/golden/regression_reference.md"));
}

TEST_CASE("markdown and CSV carry the same numbers") {
  Engine rng(12);
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (int i = 0; i < 80; ++i) {
    x.push_back({static_cast<double>(uniform01(rng) < 0.5), static_cast<double>(uniform01(rng) < 0.3)});
    y.push_back(0.4 + 0.1 * x.back()[0] - 0.2 * x.back()[1] + 0.05 * standard_normal(rng));
  }
  RegressionColumn col{"m", {}};
  for (size_t p = 0; p < 3; ++p) col.by_parameter[p] = regress(y, x, {"Female", "Rural"});

  const auto md = regression_table({col}, ReportFormat::Markdown);
  const auto csv_text = regression_table({col}, ReportFormat::Csv);
  std::istringstream in(csv_text);
  const auto table = csv::Table::read(in);
  std::multiset<std::string> from_csv;
  for (size_t i = 0; i < table.size(); ++i) {
    from_csv.insert(fmt::format("{:.4f}", csv::to_double(table.get(i, "coefficient"), "coefficient")));
    from_csv.insert(fmt::format("{:.4f}", csv::to_double(table.get(i, "std_error"), "std_error")));
  }
  std::multiset<std::string> from_md;
  std::istringstream lines(md);
  int row = 0;
  for (std::string line; std::getline(lines, line);) {
    if (++row <= 3 || line.empty() || line[0] != '|') continue;
    for (double v : numbers_in(line)) from_md.insert(fmt::format("{:.4f}", v));
  }
  CHECK(from_md == from_csv);

  std::vector<SummaryRow> rows{{"m", summarize(std::vector<BehaviorParams>{{0.1, 0.5, 1}, {0.3, 0.9, 2}}), std::nullopt}};
  const auto smd = summary_table(rows, ReportFormat::Markdown);
  const auto scsv = summary_table(rows, ReportFormat::Csv);
  std::istringstream sin(scsv);
  const auto st = csv::Table::read(sin);
  std::vector<std::string> a;
  for (size_t i = 0; i < st.size(); ++i) {
    for (auto col_name : {"mean", "std_dev", "min", "max"}) {
      a.push_back(fmt::format("{:.4f}", csv::to_double(st.get(i, col_name), col_name)));
    }
  }
  std::vector<std::string> b;
  std::istringstream slines(smd);
  row = 0;
  for (std::string line; std::getline(slines, line);) {
    if (++row <= 3) continue;
    for (double v : numbers_in(line)) b.push_back(fmt::format("{:.4f}", v));
  }
  CHECK(a == b);
}

TEST_CASE("cohort analysis joins, excludes and round-trips") {
  Engine rng(77);
  std::vector<EstimateRecord> estimates;
  std::vector<PersonaRecord> personas;
  for (int i = 0; i < 120; ++i) {
    const std::string id = "t" + std::to_string(i);
    auto persona = sample(Regime::RandomUniform, nullptr, static_cast<std::uint64_t>(i));
    EstimateRecord rec{id, Estimate{}, {}};
    const double female = persona->sex == Sex::Female ? 1.0 : 0.0;
    rec.estimate->point = BehaviorParams{0.4 + 0.1 * female + 0.01 * standard_normal(rng), 0.8, 2.0 + female};
    if (i % 10 == 0) rec.warnings.push_back("truncated:Series1 clamped to the answer range");
    if (i % 17 == 0) {
      rec.estimate.reset();
      rec.warnings = {"infeasible:nearest_violations=1"};
    }
    estimates.push_back(rec);
    personas.push_back({id, persona});
  }
  const auto a = analyze_cohort("Synthetic", estimates, personas);
  CHECK(a.n_total == 120);
  CHECK(a.n_excluded_invalid == 8);
  CHECK(a.n_excluded_clamped == 11);  // i = 0 counts as infeasible
  CHECK(a.n_used == 120 - a.n_excluded_invalid - a.n_excluded_clamped);
  REQUIRE(a.regressions.size() == 3);
  const auto& sigma = a.regressions[0].second;
  CHECK(std::abs(sigma.coefficient("Female") - 0.1) < 3 * sigma.std_error("Female"));

  const auto with_clamped = analyze_cohort("Synthetic", estimates, personas, AnalysisOptions{true, true});
  CHECK(with_clamped.n_excluded_clamped == 0);
  CHECK(with_clamped.n_used == 120 - a.n_excluded_invalid);

  const auto back = cohort_analysis_from_json(to_json(a));
  CHECK(to_json(back) == to_json(a));
  CHECK(report(std::vector{back}, ReportFormat::Markdown) == report(std::vector{a}, ReportFormat::Markdown));

  // Without personas only the summary is produced.
  const auto bare = analyze_cohort("Context-free", estimates, {});
  CHECK(bare.summary.has_value());
  CHECK(bare.regressions.empty());
}
