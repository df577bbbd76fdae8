#pragma once

// Cohort statistics and OLS of estimated parameters on persona dummies, plus
// the table emitters for the summary and regression reports.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "riskprobe/estimator.hpp"
#include "riskprobe/persona.hpp"
#include "riskprobe/tcn_model.hpp"

namespace riskprobe {

enum class Parameter { Sigma, Alpha, Lambda };
inline constexpr std::array<Parameter, 3> kAllParameters = {Parameter::Sigma, Parameter::Alpha,
                                                            Parameter::Lambda};
std::string_view to_string(Parameter p);
double get(const BehaviorParams& params, Parameter p);

struct ParamStats {
  double mean = 0.0;
  double std_dev = 0.0;  // sample (n - 1)
  std::optional<double> min;
  std::optional<double> max;
};

struct CohortSummary {
  std::array<ParamStats, 3> stats{};  // indexed by Parameter
  int n = 0;
  std::vector<std::string> warnings;

  const ParamStats& operator[](Parameter p) const { return stats[static_cast<size_t>(p)]; }
};

// Throws EmptyInputError on an empty list. A single estimate gets std 0 and
// a warning.
CohortSummary summarize(std::span<const BehaviorParams> estimates);

enum class Stars { None, One, Two, Three };

// p < 0.001 "***", p < 0.01 "**", p < 0.05 "*".
Stars stars_for(double p_value);
std::string_view to_string(Stars s);

struct RegressionResult {
  std::vector<std::string> terms;  // "Constant" first
  std::vector<double> coefficients;
  std::vector<double> std_errors;
  std::vector<double> t_stats;
  std::vector<double> p_values;
  std::vector<Stars> stars;
  int n_obs = 0;
  double r_squared = 0.0;

  // Index of a term; throws std::out_of_range when absent.
  std::size_t term_index(std::string_view term) const;
  double coefficient(std::string_view term) const { return coefficients[term_index(term)]; }
  double std_error(std::string_view term) const { return std_errors[term_index(term)]; }
};

inline constexpr std::string_view kConstantTerm = "Constant";

// OLS with an intercept prepended to `regressors` (row-major, one row per
// observation). Classical standard errors and two-sided Student-t p-values
// with n - k degrees of freedom. Throws RankDeficientError naming collinear
// columns, InvariantError when n <= k.
RegressionResult regress(std::span<const double> y, const std::vector<std::vector<double>>& regressors,
                         const std::vector<std::string>& names);

// ---------------------------------------------------------------------------
// Cohort analysis over estimator output joined with persona records.

struct CohortAnalysis {
  std::string label;
  int n_total = 0;
  int n_used = 0;
  int n_excluded_clamped = 0;
  int n_excluded_invalid = 0;
  int n_missing_persona = 0;
  std::optional<CohortSummary> summary;
  // One per parameter when personas are present and the design is full rank.
  std::vector<std::pair<Parameter, RegressionResult>> regressions;
  std::vector<std::string> notes;
};

struct AnalysisOptions {
  bool include_clamped = false;
  bool advanced_terms = true;  // add Panel-2 dummies when every persona has them
};

CohortAnalysis analyze_cohort(std::string label, const std::vector<EstimateRecord>& estimates,
                              const std::vector<PersonaRecord>& personas,
                              const AnalysisOptions& options = {});

nlohmann::json to_json(const CohortAnalysis& analysis);
CohortAnalysis cohort_analysis_from_json(const nlohmann::json& doc);

// ---------------------------------------------------------------------------
// Report emitters.

enum class ReportFormat { Markdown, Csv };

struct SummaryRow {
  std::string label;
  CohortSummary summary;
  std::optional<int> decimals;  // overrides ReportOptions::summary_decimals
};

struct RegressionColumn {
  std::string label;  // model / cohort name
  std::array<std::optional<RegressionResult>, 3> by_parameter;
};

struct ReportOptions {
  int summary_decimals = 4;
  int coefficient_decimals = 4;
  bool constant_std_error = true;
};

// Mean | Std.Dev. | Min | Max for each parameter; absent min/max print "-".
std::string summary_table(const std::vector<SummaryRow>& rows, ReportFormat format,
                          const ReportOptions& options = {});

// Coefficient with stars over a parenthesized standard error, one column per
// (model, parameter). Rows follow the order terms first appear; Constant last
// and printed with its leading zero, without stars.
std::string regression_table(const std::vector<RegressionColumn>& columns, ReportFormat format,
                             const ReportOptions& options = {});

// Both tables for a set of cohorts.
std::string report(const std::vector<CohortAnalysis>& cohorts, ReportFormat format,
                   const ReportOptions& options = {});

// "-.0366", ".0013": fixed decimals without the leading zero.
std::string format_coefficient(double x, int decimals);

}  // namespace riskprobe
