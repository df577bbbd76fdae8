#include "riskprobe/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "riskprobe/csv.hpp"
#include "riskprobe/errors.hpp"

namespace riskprobe {

using nlohmann::json;

std::string_view to_string(Parameter p) {
  switch (p) {
    case Parameter::Sigma: return "sigma";
    case Parameter::Alpha: return "alpha";
    case Parameter::Lambda: return "lambda";
  }
  return "?";
}

double get(const BehaviorParams& params, Parameter p) {
  switch (p) {
    case Parameter::Sigma: return params.sigma;
    case Parameter::Alpha: return params.alpha;
    case Parameter::Lambda: return params.lambda;
  }
  return 0.0;
}

namespace {

Parameter parameter_from_string(std::string_view s) {
  for (Parameter p : kAllParameters) {
    if (to_string(p) == s) return p;
  }
  throw ParseError(fmt::format("unknown parameter '{}'", s));
}

}  // namespace

CohortSummary summarize(std::span<const BehaviorParams> estimates) {
  if (estimates.empty()) throw EmptyInputError("cannot summarize an empty cohort");
  CohortSummary out;
  out.n = static_cast<int>(estimates.size());
  for (Parameter p : kAllParameters) {
    std::vector<double> xs;
    xs.reserve(estimates.size());
    for (const auto& e : estimates) xs.push_back(get(e, p));
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    auto& s = out.stats[static_cast<size_t>(p)];
    s.mean = mean;
    s.std_dev = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
    s.min = *std::min_element(xs.begin(), xs.end());
    s.max = *std::max_element(xs.begin(), xs.end());
  }
  if (out.n == 1) out.warnings.push_back("single estimate: standard deviation reported as 0");
  return out;
}

Stars stars_for(double p) {
  if (p < 0.001) return Stars::Three;
  if (p < 0.01) return Stars::Two;
  if (p < 0.05) return Stars::One;
  return Stars::None;
}

std::string_view to_string(Stars s) {
  switch (s) {
    case Stars::None: return "";
    case Stars::One: return "*";
    case Stars::Two: return "**";
    case Stars::Three: return "***";
  }
  return "";
}

std::size_t RegressionResult::term_index(std::string_view term) const {
  for (size_t i = 0; i < terms.size(); ++i) {
    if (terms[i] == term) return i;
  }
  throw std::out_of_range(fmt::format("no regression term '{}'", term));
}

RegressionResult regress(std::span<const double> y, const std::vector<std::vector<double>>& regressors,
                         const std::vector<std::string>& names) {
  const auto n = static_cast<Eigen::Index>(y.size());
  const auto k = static_cast<Eigen::Index>(names.size()) + 1;
  if (static_cast<size_t>(n) != regressors.size()) {
    throw InvariantError(fmt::format("{} responses but {} design rows", y.size(), regressors.size()));
  }
  if (n <= k) {
    throw InvariantError(fmt::format("{} observations for {} terms; need more observations than terms",
                                     n, k));
  }

  Eigen::MatrixXd x(n, k);
  Eigen::VectorXd yv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = regressors[static_cast<size_t>(i)];
    if (static_cast<Eigen::Index>(row.size()) != k - 1) {
      throw InvariantError(fmt::format("design row {} has {} columns, expected {}", i, row.size(), k - 1));
    }
    x(i, 0) = 1.0;
    for (Eigen::Index j = 1; j < k; ++j) x(i, j) = row[static_cast<size_t>(j - 1)];
    yv(i) = y[static_cast<size_t>(i)];
  }

  std::vector<std::string> terms{std::string(kConstantTerm)};
  terms.insert(terms.end(), names.begin(), names.end());

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < k) {
    // Columns pivoted past the rank are linear combinations of the others.
    std::vector<std::string> dropped;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index i = qr.rank(); i < k; ++i) dropped.push_back(terms[static_cast<size_t>(perm(i))]);
    std::sort(dropped.begin(), dropped.end());
    std::string list;
    for (const auto& d : dropped) list += (list.empty() ? "" : ", ") + d;
    throw RankDeficientError(fmt::format("design matrix rank {} < {} terms; collinear: {}", qr.rank(),
                                         k, list));
  }

  const Eigen::VectorXd beta = qr.solve(yv);
  const Eigen::VectorXd resid = yv - x * beta;
  const double rss = resid.squaredNorm();
  const auto dof = static_cast<double>(n - k);
  const double s2 = rss / dof;
  const Eigen::MatrixXd xtx_inv = (x.transpose() * x).inverse();
  const double ybar = yv.mean();
  const double tss = (yv.array() - ybar).square().sum();

  RegressionResult out;
  out.terms = std::move(terms);
  out.n_obs = static_cast<int>(n);
  out.r_squared = tss > 0.0 ? 1.0 - rss / tss : 1.0;
  boost::math::students_t dist(dof);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double b = beta(j);
    const double se = std::sqrt(std::max(0.0, s2 * xtx_inv(j, j)));
    double t = 0.0;
    double p = 1.0;
    if (se > 0.0) {
      t = b / se;
      p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    } else if (b != 0.0) {
      t = std::copysign(std::numeric_limits<double>::infinity(), b);
      p = 0.0;
    }
    p = std::clamp(p, 0.0, 1.0);
    out.coefficients.push_back(b);
    out.std_errors.push_back(se);
    out.t_stats.push_back(t);
    out.p_values.push_back(p);
    out.stars.push_back(stars_for(p));
  }
  return out;
}

// ---------------------------------------------------------------------------

CohortAnalysis analyze_cohort(std::string label, const std::vector<EstimateRecord>& estimates,
                              const std::vector<PersonaRecord>& personas,
                              const AnalysisOptions& options) {
  CohortAnalysis out;
  out.label = std::move(label);
  out.n_total = static_cast<int>(estimates.size());

  std::map<std::string, const PersonaRecord*> by_trial;
  for (const auto& p : personas) by_trial[p.trial_id] = &p;

  std::vector<BehaviorParams> used;
  std::vector<const Persona*> used_personas;
  for (const auto& rec : estimates) {
    if (!rec.estimate) {
      ++out.n_excluded_invalid;
      continue;
    }
    const bool clamped = std::any_of(rec.warnings.begin(), rec.warnings.end(), [](const auto& w) {
      return w.rfind("truncated:", 0) == 0;
    });
    if (clamped && !options.include_clamped) {
      ++out.n_excluded_clamped;
      continue;
    }
    used.push_back(rec.estimate->point);
    auto it = by_trial.find(rec.trial_id);
    const Persona* persona = (it != by_trial.end() && it->second->persona) ? &*it->second->persona
                                                                             : nullptr;
    if (!persona) ++out.n_missing_persona;
    used_personas.push_back(persona);
  }
  out.n_used = static_cast<int>(used.size());
  if (used.empty()) {
    out.notes.push_back("no usable estimates");
    return out;
  }
  out.summary = summarize(used);
  for (const auto& w : out.summary->warnings) out.notes.push_back(w);

  const bool all_have_persona = out.n_missing_persona == 0;
  if (!all_have_persona) {
    if (out.n_missing_persona < out.n_used) {
      out.notes.push_back(fmt::format("{} estimates lack a persona; regression skipped",
                                      out.n_missing_persona));
    }
    return out;
  }
  const bool advanced = options.advanced_terms &&
                        std::all_of(used_personas.begin(), used_personas.end(),
                                    [](const Persona* p) { return p->advanced.has_value(); });

  std::vector<std::vector<double>> design;
  std::vector<std::string> names;
  for (const Persona* p : used_personas) {
    auto row = encode(*p);
    if (!advanced) {
      row.values.resize(foundational_dummy_names().size());
      row.names.resize(foundational_dummy_names().size());
    }
    if (names.empty()) names = row.names;
    design.push_back(std::move(row.values));
  }

  for (Parameter param : kAllParameters) {
    std::vector<double> y;
    y.reserve(used.size());
    for (const auto& e : used) y.push_back(get(e, param));
    try {
      out.regressions.emplace_back(param, regress(y, design, names));
    } catch (const RankDeficientError& e) {
      out.notes.push_back(fmt::format("{} regression skipped: {}", to_string(param), e.what()));
    } catch (const InvariantError& e) {
      out.notes.push_back(fmt::format("{} regression skipped: {}", to_string(param), e.what()));
    }
  }
  return out;
}

namespace {

json number(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

double number_from(const json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::numeric_limits<double>::quiet_NaN();
}

json optional_number(const std::optional<double>& x) { return x ? json(*x) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json regression_to_json(const RegressionResult& r) {
  json terms = json::array();
  for (size_t i = 0; i < r.terms.size(); ++i) {
    terms.push_back(json{{"term", r.terms[i]},
                         {"coefficient", number(r.coefficients[i])},
                         {"std_error", number(r.std_errors[i])},
                         {"t_stat", number(r.t_stats[i])},
                         {"p_value", number(r.p_values[i])},
                         {"stars", std::string(to_string(r.stars[i]))}});
  }
  return json{{"n_obs", r.n_obs}, {"r_squared", number(r.r_squared)}, {"terms", terms}};
}

RegressionResult regression_from_json(const json& j) {
  RegressionResult r;
  r.n_obs = j.at("n_obs").get<int>();
  r.r_squared = number_from(j.at("r_squared"));
  for (const auto& t : j.at("terms")) {
    r.terms.push_back(t.at("term").get<std::string>());
    r.coefficients.push_back(number_from(t.at("coefficient")));
    r.std_errors.push_back(number_from(t.at("std_error")));
    r.t_stats.push_back(number_from(t.at("t_stat")));
    r.p_values.push_back(number_from(t.at("p_value")));
    r.stars.push_back(stars_for(r.p_values.back()));
  }
  return r;
}

}  // namespace

json to_json(const CohortAnalysis& a) {
  json doc{{"label", a.label},
           {"n_total", a.n_total},
           {"n_used", a.n_used},
           {"n_excluded_clamped", a.n_excluded_clamped},
           {"n_excluded_invalid", a.n_excluded_invalid},
           {"n_missing_persona", a.n_missing_persona},
           {"notes", a.notes}};
  if (a.summary) {
    json summary = json::object();
    for (Parameter p : kAllParameters) {
      const auto& s = (*a.summary)[p];
      summary[std::string(to_string(p))] = json{{"mean", s.mean},
                                                {"std_dev", s.std_dev},
                                                {"min", optional_number(s.min)},
                                                {"max", optional_number(s.max)}};
    }
    summary["n"] = a.summary->n;
    doc["summary"] = summary;
  } else {
    doc["summary"] = nullptr;
  }
  json regs = json::object();
  for (const auto& [p, r] : a.regressions) regs[std::string(to_string(p))] = regression_to_json(r);
  doc["regressions"] = regs;
  return doc;
}

CohortAnalysis cohort_analysis_from_json(const json& doc) {
  CohortAnalysis a;
  try {
    a.label = doc.at("label").get<std::string>();
    a.n_total = doc.at("n_total").get<int>();
    a.n_used = doc.at("n_used").get<int>();
    a.n_excluded_clamped = doc.at("n_excluded_clamped").get<int>();
    a.n_excluded_invalid = doc.at("n_excluded_invalid").get<int>();
    a.n_missing_persona = doc.value("n_missing_persona", 0);
    a.notes = doc.value("notes", std::vector<std::string>{});
    if (!doc.at("summary").is_null()) {
      CohortSummary s;
      const auto& js = doc.at("summary");
      s.n = js.at("n").get<int>();
      for (Parameter p : kAllParameters) {
        const auto& jp = js.at(std::string(to_string(p)));
        s.stats[static_cast<size_t>(p)] = ParamStats{jp.at("mean").get<double>(),
                                                     jp.at("std_dev").get<double>(),
                                                     optional_from(jp.at("min")),
                                                     optional_from(jp.at("max"))};
      }
      a.summary = s;
    }
    for (const auto& [key, r] : doc.at("regressions").items()) {
      a.regressions.emplace_back(parameter_from_string(key), regression_from_json(r));
    }
    std::sort(a.regressions.begin(), a.regressions.end(),
              [](const auto& l, const auto& r) { return l.first < r.first; });
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("analysis document: {}", e.what()));
  }
  return a;
}

// ---------------------------------------------------------------------------

std::string format_coefficient(double x, int decimals) {
  std::string s = fmt::format("{:.{}f}", x, decimals);
  if (s.rfind("0.", 0) == 0) {
    s.erase(0, 1);
  } else if (s.rfind("-0.", 0) == 0) {
    s.erase(1, 1);
  }
  return s;
}

namespace {

constexpr std::array<std::string_view, 3> kParamHeadings = {
    "σ: Risk Preference", "α: Probability Weighting", "λ: Loss Aversion"};
constexpr std::array<std::string_view, 3> kParamSymbols = {"σ", "α", "λ"};

std::string md_row(const std::vector<std::string>& cells) {
  std::string out = "|";
  for (const auto& c : cells) out += c.empty() ? std::string(" |") : " " + c + " |";
  return out + "\n";
}

std::string md_separator(size_t columns) {
  std::string out = "|";
  for (size_t i = 0; i < columns; ++i) out += "---|";
  return out + "\n";
}

std::string fixed(double x, int decimals) { return fmt::format("{:.{}f}", x, decimals); }

}  // namespace

std::string summary_table(const std::vector<SummaryRow>& rows, ReportFormat format,
                          const ReportOptions& options) {
  std::string out;
  if (format == ReportFormat::Csv) {
    out += "label,parameter,mean,std_dev,min,max,n\n";
    for (const auto& r : rows) {
      for (Parameter p : kAllParameters) {
        const auto& s = r.summary[p];
        out += csv::join({r.label, std::string(to_string(p)), csv::format_double(s.mean),
                          csv::format_double(s.std_dev), s.min ? csv::format_double(*s.min) : "",
                          s.max ? csv::format_double(*s.max) : "", std::to_string(r.summary.n)}) +
               "\n";
      }
    }
    return out;
  }

  std::vector<std::string> head{""};
  std::vector<std::string> sub{""};
  for (auto h : kParamHeadings) {
    head.emplace_back(h);
    head.insert(head.end(), 3, "");
    for (auto c : {"Mean", "Std.Dev.", "Min", "Max"}) sub.emplace_back(c);
  }
  out += md_row(head);
  out += md_separator(head.size());
  out += md_row(sub);
  for (const auto& r : rows) {
    const int d = r.decimals.value_or(options.summary_decimals);
    std::vector<std::string> cells{r.label};
    for (Parameter p : kAllParameters) {
      const auto& s = r.summary[p];
      cells.push_back(fixed(s.mean, d));
      cells.push_back(fixed(s.std_dev, d));
      cells.push_back(s.min ? fixed(*s.min, d) : "-");
      cells.push_back(s.max ? fixed(*s.max, d) : "-");
    }
    out += md_row(cells);
  }
  return out;
}

std::string regression_table(const std::vector<RegressionColumn>& columns, ReportFormat format,
                             const ReportOptions& options) {
  // Row order: terms by first appearance, Constant last.
  std::vector<std::string> terms;
  for (const auto& col : columns) {
    for (const auto& r : col.by_parameter) {
      if (!r) continue;
      for (const auto& t : r->terms) {
        if (t != kConstantTerm && std::find(terms.begin(), terms.end(), t) == terms.end()) {
          terms.push_back(t);
        }
      }
    }
  }
  terms.emplace_back(kConstantTerm);

  std::string out;
  if (format == ReportFormat::Csv) {
    out += "model,parameter,term,coefficient,std_error,t_stat,p_value,stars,n_obs,r_squared\n";
    for (const auto& col : columns) {
      for (Parameter p : kAllParameters) {
        const auto& r = col.by_parameter[static_cast<size_t>(p)];
        if (!r) continue;
        for (const auto& t : terms) {
          auto it = std::find(r->terms.begin(), r->terms.end(), t);
          if (it == r->terms.end()) continue;
          const auto i = static_cast<size_t>(it - r->terms.begin());
          const bool constant = t == kConstantTerm;
          out += csv::join({col.label, std::string(to_string(p)), t,
                            csv::format_double(r->coefficients[i]),
                            csv::format_double(r->std_errors[i]), csv::format_double(r->t_stats[i]),
                            csv::format_double(r->p_values[i]),
                            constant ? "" : std::string(to_string(r->stars[i])),
                            std::to_string(r->n_obs), csv::format_double(r->r_squared)}) +
                 "\n";
        }
      }
    }
    return out;
  }

  std::vector<std::string> head{""};
  std::vector<std::string> sub{""};
  for (size_t c = 0; c < columns.size(); ++c) {
    head.push_back(fmt::format("({}) {}", c + 1, columns[c].label));
    head.insert(head.end(), 2, "");
    for (auto s : kParamSymbols) sub.emplace_back(s);
  }
  out += md_row(head);
  out += md_separator(head.size());
  out += md_row(sub);
  const int d = options.coefficient_decimals;
  for (const auto& t : terms) {
    const bool constant = t == kConstantTerm;
    std::vector<std::string> coef{t};
    std::vector<std::string> se{""};
    for (const auto& col : columns) {
      for (const auto& r : col.by_parameter) {
        auto it = r ? std::find(r->terms.begin(), r->terms.end(), t) : r->terms.end();
        if (!r || it == r->terms.end()) {
          coef.emplace_back();
          se.emplace_back();
          continue;
        }
        const auto i = static_cast<size_t>(it - r->terms.begin());
        coef.push_back(constant ? fixed(r->coefficients[i], d)
                                : format_coefficient(r->coefficients[i], d) +
                                      std::string(to_string(r->stars[i])));
        se.push_back("(" + format_coefficient(r->std_errors[i], d) + ")");
      }
    }
    out += md_row(coef);
    if (!constant || options.constant_std_error) out += md_row(se);
  }
  out += "\nStandard errors in parentheses. * p < 0.05, ** p < 0.01, *** p < 0.001\n";
  return out;
}

std::string report(const std::vector<CohortAnalysis>& cohorts, ReportFormat format,
                   const ReportOptions& options) {
  std::vector<SummaryRow> rows;
  std::vector<RegressionColumn> columns;
  for (const auto& c : cohorts) {
    if (c.summary) rows.push_back({c.label, *c.summary, std::nullopt});
    if (c.regressions.empty()) continue;
    RegressionColumn col{c.label, {}};
    for (const auto& [p, r] : c.regressions) col.by_parameter[static_cast<size_t>(p)] = r;
    columns.push_back(std::move(col));
  }

  std::string out;
  if (format == ReportFormat::Markdown) {
    out += "## Summary of parameters\n\n";
    out += rows.empty() ? "No usable estimates.\n" : summary_table(rows, format, options);
    out += "\n## Sample accounting\n\n";
    out += md_row({"Cohort", "Trials", "Used", "Excluded (clamped)", "Excluded (invalid)"});
    out += md_separator(5);
    for (const auto& c : cohorts) {
      out += md_row({c.label, std::to_string(c.n_total), std::to_string(c.n_used),
                     std::to_string(c.n_excluded_clamped), std::to_string(c.n_excluded_invalid)});
    }
    if (!columns.empty()) {
      out += "\n## Regression analyses\n\n";
      out += regression_table(columns, format, options);
    }
    for (const auto& c : cohorts) {
      for (const auto& n : c.notes) out += fmt::format("\nNote ({}): {}\n", c.label, n);
    }
    return out;
  }
  out += summary_table(rows, format, options);
  if (!columns.empty()) out += "\n" + regression_table(columns, format, options);
  return out;
}

}  // namespace riskprobe
