// riskprobe command line: series, simulate, elicit, estimate, analyze,
// report, replay.
//
// Exit codes: 0 success, 2 usage or bad input, 3 infeasible or empty data,
// 4 provider failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

#include "riskprobe/agent_sim.hpp"
#include "riskprobe/analysis.hpp"
#include "riskprobe/errors.hpp"
#include "riskprobe/estimator.hpp"
#include "riskprobe/gateway.hpp"
#include "riskprobe/mpl_series.hpp"
#include "riskprobe/persona.hpp"
#include "riskprobe/rng.hpp"

namespace fs = std::filesystem;
using namespace riskprobe;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitEmpty = 3;
constexpr int kExitProvider = 4;

struct ExitError {
  int code;
  std::string message;
};

[[noreturn]] void fail(int code, std::string message) { throw ExitError{code, std::move(message)}; }

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(kExitUsage, fmt::format("cannot open {}", path.string()));
  return in;
}

// Writes to a file, or stdout when the path is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  const fs::path p(path);
  if (!p.parent_path().empty()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) fail(kExitUsage, fmt::format("cannot write {}", path));
}

std::string profile_line(const SwitchProfile& p) { return fmt::format("{},{},{}", p.s1, p.s2, p.s3); }

// --- series ---------------------------------------------------------------

struct SeriesArgs {
  std::string id = "all";
  std::string format = "text";
  std::string out;
};

void run_series(const SeriesArgs& a) {
  std::vector<SeriesId> ids;
  if (a.id == "all") {
    ids.assign(kAllSeries.begin(), kAllSeries.end());
  } else {
    ids.push_back(series_id_from_string(a.id));
  }
  std::string text;
  for (SeriesId id : ids) {
    const auto& s = builtin_series(id);
    if (a.format == "json") {
      text += to_json(s).dump(2) + "\n";
    } else if (a.format == "prompt") {
      text += series_prompt(s) + "\n\n";
    } else {
      text += table_text(s) + "\n";
    }
  }
  emit(a.out, text);
}

// --- simulate -------------------------------------------------------------

struct SimulateArgs {
  double sigma = 0.0;
  double alpha = 1.0;
  double lambda = 1.0;
  double epsilon = 0.0;
  int n = 1;
  std::uint64_t seed = 0;
  std::string out;
};

void run_simulate(const SimulateArgs& a) {
  const BehaviorParams params{a.sigma, a.alpha, a.lambda};
  params.validate();
  const NoiseSpec noise{a.epsilon};
  noise.validate();
  if (a.n < 1) fail(kExitUsage, "--n must be >= 1");

  std::vector<ProfileRecord> records;
  const auto base = play_profile(params);
  for (int i = 0; i < a.n; ++i) {
    Engine rng(derive_seed(a.seed, static_cast<std::uint64_t>(i)));
    records.push_back({trial_id(i), apply_noise(base, noise, rng)});
  }
  if (base.any_clamped()) {
    std::cerr << fmt::format("warning: switch point outside the answer range, clamped ({})\n",
                             clamped_flags(base));
  }
  if (a.out.empty()) {
    for (const auto& r : records) std::cout << profile_line(r.profile) << "\n";
    return;
  }
  std::ostringstream csv;
  write_profiles_csv(csv, records);
  emit(a.out, csv.str());
}

// --- elicit / replay ------------------------------------------------------

struct ElicitArgs {
  std::string provider;
  std::string regime = "context-free";
  std::string distribution;
  int n = 300;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string transcript = "transcript.jsonl";
  std::string profiles = "profiles.csv";
  std::string personas = "personas.csv";
  bool resume = false;
  bool age_midpoint = false;
};

void export_cohort(const std::vector<Transcript>& transcripts, const std::string& profiles,
                   const std::string& personas) {
  std::ostringstream p;
  write_profiles_csv(p, export_profiles(transcripts));
  emit(profiles, p.str());
  if (!personas.empty()) {
    std::ostringstream q;
    write_personas_csv(q, export_personas(transcripts));
    emit(personas, q.str());
  }
}

void run_elicit(const ElicitArgs& a) {
  const auto profile = ProviderProfile::load(a.provider);
  const auto regime = regime_from_string(a.regime);
  std::optional<DistributionSpec> dist;
  if (!a.distribution.empty()) dist = DistributionSpec::load(a.distribution);

  std::unique_ptr<Responder> responder;
  try {
    responder = make_responder(profile);
  } catch (const ParseError& e) {
    fail(kExitUsage, e.what());
  }
  Gateway gateway(profile, *responder);
  CohortConfig cfg;
  cfg.regime = regime;
  cfg.distribution = dist ? &*dist : nullptr;
  cfg.n_trials = a.n;
  cfg.seed = a.seed;
  cfg.jobs = a.jobs;
  cfg.transcript_path = a.transcript;
  cfg.resume = a.resume;
  cfg.render.age_as_midpoint = a.age_midpoint;

  CohortResult result;
  try {
    result = gateway.run_cohort(cfg);
  } catch (const AuthError& e) {
    fail(kExitProvider, fmt::format("authentication failed: {}", e.what()));
  }
  export_cohort(result.transcripts, a.profiles, a.personas);
  std::cerr << fmt::format("{} trials: {} valid, {} invalid, {} failed ({} resumed)\n",
                           result.transcripts.size(), result.valid, result.invalid, result.failed,
                           result.resumed);
  if (result.valid == 0) fail(result.failed > 0 ? kExitProvider : kExitEmpty, "no valid trials");
}

struct ReplayArgs {
  std::string transcript;
  std::string provider;
  int max_retries = 3;
  std::string out = "-";
  std::string profiles;
  std::string personas;
};

void run_replay(const ReplayArgs& a) {
  const auto recorded = read_transcripts(fs::path(a.transcript));
  if (recorded.empty()) fail(kExitEmpty, "transcript has no records");

  ProviderProfile profile;
  if (!a.provider.empty()) profile = ProviderProfile::load(a.provider);
  profile.kind = ResponderKind::Replay;
  profile.replay_path = a.transcript;
  profile.name = recorded.front().provider;
  profile.rate_limit = std::numeric_limits<double>::infinity();
  if (a.provider.empty()) profile.max_retries = a.max_retries;

  ReplayResponder responder(recorded);
  FakeClock clock;
  Gateway gateway(profile, responder, clock);
  std::string text;
  std::vector<Transcript> replayed;
  for (const auto& t : recorded) {
    std::vector<LotterySeries> series;
    for (const auto& r : t.records) series.push_back(builtin_series(r.series));
    auto out = gateway.run_trial(t.trial_id, t.persona, series, 0);
    for (const auto& r : out.records) text += to_json(r).dump() + "\n";
    replayed.push_back(std::move(out));
  }
  emit(a.out, text);
  if (!a.profiles.empty()) export_cohort(replayed, a.profiles, a.personas);
}

// --- estimate -------------------------------------------------------------

struct EstimateArgs {
  std::string input;
  std::string out;
  std::string lambda_propagation = "midpoint";
  double sigma_step = 0.005;
  double alpha_step = 0.005;
  int jobs = 1;
};

void run_estimate(const EstimateArgs& a) {
  auto in = open_in(a.input);
  const auto profiles = read_profiles_csv(in);
  if (profiles.empty()) fail(kExitEmpty, "no profiles in input");

  EstimateConfig cfg;
  cfg.sigma_grid.step = a.sigma_step;
  cfg.alpha_grid.step = a.alpha_step;
  cfg.jobs = a.jobs;
  cfg.lambda_propagation = a.lambda_propagation == "corners" ? LambdaPropagation::IntervalCorners
                                                            : LambdaPropagation::Midpoint;
  const Estimator estimator(cfg);
  std::vector<EstimateRecord> records;
  const auto summary = estimate_batch(estimator, profiles, records);
  std::ostringstream csv;
  write_estimates_csv(csv, records);
  emit(a.out, csv.str());
  std::cerr << fmt::format("{} estimated, {} infeasible\n", summary.estimated, summary.infeasible);
  if (summary.estimated == 0) fail(kExitEmpty, "no feasible profiles");
}

// --- analyze / report -----------------------------------------------------

struct AnalyzeArgs {
  std::string estimates;
  std::string personas;
  std::string label = "cohort";
  std::string out_dir = ".";
  bool include_clamped = false;
  bool foundational_only = false;
};

void write_reports(const std::vector<CohortAnalysis>& cohorts, const fs::path& dir,
                   const ReportOptions& opts) {
  emit((dir / "report.md").string(), report(cohorts, ReportFormat::Markdown, opts));
  std::vector<SummaryRow> rows;
  std::vector<RegressionColumn> columns;
  for (const auto& c : cohorts) {
    if (c.summary) rows.push_back({c.label, *c.summary, std::nullopt});
    if (c.regressions.empty()) continue;
    RegressionColumn col{c.label, {}};
    for (const auto& [p, r] : c.regressions) col.by_parameter[static_cast<size_t>(p)] = r;
    columns.push_back(std::move(col));
  }
  emit((dir / "summary.csv").string(), summary_table(rows, ReportFormat::Csv, opts));
  if (!columns.empty()) {
    emit((dir / "regression.csv").string(), regression_table(columns, ReportFormat::Csv, opts));
  }
}

void run_analyze(const AnalyzeArgs& a) {
  auto in = open_in(a.estimates);
  const auto estimates = read_estimates_csv(in);
  std::vector<PersonaRecord> personas;
  if (!a.personas.empty()) {
    auto pin = open_in(a.personas);
    personas = read_personas_csv(pin);
  }
  AnalysisOptions opts;
  opts.include_clamped = a.include_clamped;
  opts.advanced_terms = !a.foundational_only;
  const auto analysis = analyze_cohort(a.label, estimates, personas, opts);
  const fs::path dir(a.out_dir);
  emit((dir / "analysis.json").string(), to_json(analysis).dump(2) + "\n");
  write_reports({analysis}, dir, {});
  std::cerr << fmt::format("{}: {} of {} trials used ({} clamped, {} infeasible excluded)\n",
                           analysis.label, analysis.n_used, analysis.n_total,
                           analysis.n_excluded_clamped, analysis.n_excluded_invalid);
  if (!analysis.summary) fail(kExitEmpty, "no usable estimates");
}

struct ReportArgs {
  std::vector<std::string> analyses;
  std::string format = "markdown";
  std::string out;
  int decimals = 4;
  bool no_constant_se = false;
};

void run_report(const ReportArgs& a) {
  std::vector<CohortAnalysis> cohorts;
  for (const auto& path : a.analyses) {
    auto in = open_in(path);
    try {
      cohorts.push_back(cohort_analysis_from_json(nlohmann::json::parse(in)));
    } catch (const nlohmann::json::parse_error& e) {
      fail(kExitUsage, fmt::format("{}: {}", path, e.what()));
    }
  }
  ReportOptions opts;
  opts.summary_decimals = a.decimals;
  opts.coefficient_decimals = a.decimals;
  opts.constant_std_error = !a.no_constant_se;
  emit(a.out, report(cohorts, a.format == "csv" ? ReportFormat::Csv : ReportFormat::Markdown, opts));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prospect-theory risk elicitation toolkit"};
  app.set_config("--config", "", "TOML file with per-subcommand option defaults");
  app.require_subcommand(1);

  SeriesArgs series_args;
  auto* series = app.add_subcommand("series", "Print the built-in lottery series");
  series->add_option("--id", series_args.id, "Series1, Series2, Series3 or all");
  series->add_option("--format", series_args.format)->check(CLI::IsMember({"text", "json", "prompt"}));
  series->add_option("--out", series_args.out);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Play the series with a known-parameter agent");
  simulate->add_option("--sigma", sim.sigma);
  simulate->add_option("--alpha", sim.alpha);
  simulate->add_option("--lambda", sim.lambda);
  simulate->add_option("--epsilon", sim.epsilon, "Per-series probability of a one-row slip");
  simulate->add_option("--n", sim.n, "Number of trials");
  simulate->add_option("--seed", sim.seed);
  simulate->add_option("--out", sim.out, "Profile CSV; prints s1,s2,s3 lines when omitted");

  ElicitArgs el;
  auto* elicit = app.add_subcommand("elicit", "Run a cohort against a provider");
  elicit->add_option("--provider", el.provider, "Provider profile JSON")->required()->check(CLI::ExistingFile);
  elicit->add_option("--regime", el.regime)
      ->check(CLI::IsMember({"context-free", "random", "real-world", "random-augmented"}));
  elicit->add_option("--distribution", el.distribution, "Attribute weights JSON")->check(CLI::ExistingFile);
  elicit->add_option("--n", el.n);
  elicit->add_option("--seed", el.seed);
  elicit->add_option("--jobs", el.jobs);
  elicit->add_option("--transcript", el.transcript);
  elicit->add_option("--profiles", el.profiles);
  elicit->add_option("--personas", el.personas);
  elicit->add_flag("--resume", el.resume, "Keep completed trials from an existing transcript");
  elicit->add_flag("--age-midpoint", el.age_midpoint, "Render age bands as a single age");

  EstimateArgs est;
  auto* estimate_cmd = app.add_subcommand("estimate", "Turn switch profiles into parameter intervals");
  estimate_cmd->add_option("--input", est.input)->required()->check(CLI::ExistingFile);
  estimate_cmd->add_option("--out", est.out);
  estimate_cmd->add_option("--lambda-propagation", est.lambda_propagation)
      ->check(CLI::IsMember({"midpoint", "corners"}));
  estimate_cmd->add_option("--sigma-step", est.sigma_step);
  estimate_cmd->add_option("--alpha-step", est.alpha_step);
  estimate_cmd->add_option("--jobs", est.jobs);

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "Summary statistics and persona regressions");
  analyze->add_option("--estimates", an.estimates)->required()->check(CLI::ExistingFile);
  analyze->add_option("--personas", an.personas)->check(CLI::ExistingFile);
  analyze->add_option("--label", an.label);
  analyze->add_option("--out-dir", an.out_dir);
  analyze->add_flag("--include-clamped", an.include_clamped);
  analyze->add_flag("--foundational-only", an.foundational_only);

  ReportArgs rep;
  auto* report_cmd = app.add_subcommand("report", "Combine analyses into report tables");
  report_cmd->add_option("analyses", rep.analyses, "analysis.json files")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--format", rep.format)->check(CLI::IsMember({"markdown", "csv"}));
  report_cmd->add_option("--out", rep.out);
  report_cmd->add_option("--decimals", rep.decimals);
  report_cmd->add_flag("--no-constant-se", rep.no_constant_se);

  ReplayArgs rp;
  auto* replay = app.add_subcommand("replay", "Re-run the protocol against a recorded transcript");
  replay->add_option("--transcript", rp.transcript)->required()->check(CLI::ExistingFile);
  replay->add_option("--provider", rp.provider)->check(CLI::ExistingFile);
  replay->add_option("--max-retries", rp.max_retries);
  replay->add_option("--out", rp.out);
  replay->add_option("--profiles", rp.profiles);
  replay->add_option("--personas", rp.personas);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*series) run_series(series_args);
    if (*simulate) run_simulate(sim);
    if (*elicit) run_elicit(el);
    if (*estimate_cmd) run_estimate(est);
    if (*analyze) run_analyze(an);
    if (*report_cmd) run_report(rep);
    if (*replay) run_replay(rp);
  } catch (const ExitError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const EmptyInputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEmpty;
  } catch (const InfeasibleError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEmpty;
  } catch (const AuthError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitProvider;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}
