// Acceptance checks. Prints one PASS/FAIL line per criterion; `--criterion N`
// runs a single one (each is its own ctest entry). Exit status is nonzero
// when any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "mock_llm_server.hpp"
#include "oracles.hpp"
#include "reference_tables.hpp"
#include "riskprobe/agent_sim.hpp"
#include "riskprobe/analysis.hpp"
#include "riskprobe/errors.hpp"
#include "riskprobe/estimator.hpp"
#include "riskprobe/gateway.hpp"
#include "riskprobe/persona.hpp"
#include "riskprobe/rng.hpp"
#include "riskprobe/tcn_model.hpp"

using namespace riskprobe;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> details;

  void check(bool ok, std::string what) {
    if (!ok) pass = false;
    details.push_back(fmt::format("{} {}", ok ? "ok  " : "FAIL", what));
  }
  void info(std::string what) { details.push_back("     " + what); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const fs::path kSource = RISKPROBE_SOURCE_DIR;

std::vector<double> steps(double lo, double hi, double step) {
  std::vector<double> out;
  for (int i = 0;; ++i) {
    const double x = snap(lo + i * step);
    if (x > hi + 1e-9) break;
    out.push_back(x);
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome round_trip_containment() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  EstimateConfig corners_cfg;
  corners_cfg.lambda_propagation = LambdaPropagation::IntervalCorners;
  EstimateConfig mid_cfg;
  const Estimator corners(corners_cfg);
  const Estimator mid(mid_cfg);

  int cases = 0;
  int skipped = 0;
  int misses = 0;
  int mid_misses = 0;
  std::string first_miss;
  for (double s : steps(-0.5, 0.95, 0.05)) {
    for (double a : steps(0.3, 1.4, 0.05)) {
      for (double l : steps(0.5, 10.0, 0.5)) {
        const BehaviorParams truth{s, a, l};
        const auto profile = play_profile(truth);
        if (profile.any_clamped()) {
          ++skipped;
          continue;
        }
        ++cases;
        const auto e = corners.estimate(profile);
        const auto& iv = e.intervals;
        const bool inside = iv.sigma.contains(s) && iv.alpha.contains(a) && iv.lambda.contains(l);
        if (!inside) {
          ++misses;
          if (first_miss.empty()) first_miss = fmt::format("({}, {}, {})", s, a, l);
        }
        if (!mid.estimate(profile).intervals.lambda.contains(l)) ++mid_misses;
      }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.check(cases > 0 && misses == 0,
          fmt::format("{} unclamped cases ({} clamped skipped), {} outside their intervals{}", cases, skipped,
                      misses, first_miss.empty() ? "" : ", first " + first_miss));
  o.check(secs < 60.0, fmt::format("both estimators over the grid in {:.2f} s", secs));
  o.info(fmt::format("lambda from the midpoint sigma alone misses {} of {}", mid_misses, cases));
  return o;
}

Outcome risk_neutral_exactness() {
  Outcome o;
  const BehaviorParams neutral{0.0, 1.0, 1.0};
  const auto profile = play_profile(neutral);
  o.check(profile == SwitchProfile{7, 1, 1, {}},
          fmt::format("risk-neutral agent profile ({}, {}, {})", profile.s1, profile.s2, profile.s3));

  // Expected value by hand, against the model with alpha = lambda = 1.
  int rows = 0;
  double worst = 0.0;
  for (double sigma : {0.0, -0.4, 0.3, 0.75}) {
    const BehaviorParams p{sigma, 1.0, 1.0};
    const double c = 1.0 - sigma;
    const auto v = [c](double x) { return x >= 0 ? std::pow(x, c) : -std::pow(-x, c); };
    for (const auto& s : builtin_series()) {
      for (const auto& r : s.rows) {
        for (const auto* opt : {&r.option_a, &r.option_b}) {
          const double eu = opt->probs[0] * v(opt->outcomes[0]) + opt->probs[1] * v(opt->outcomes[1]);
          worst = std::max(worst, std::abs(utility(*opt, p) - eu));
        }
        if (sigma == 0.0) ++rows;
      }
    }
  }
  o.check(rows == 35 && worst <= 1e-9,
          fmt::format("expected-utility reduction on {} rows, max deviation {:.3g}", rows, worst));

  const auto est = estimate(profile);
  const auto lam = lambda_interval(builtin_series(SeriesId::Series3), 1, 0.0, 1.0);
  o.check(std::abs(lam.first - 0.375) < 1e-9 && std::abs(lam.second - 1.625) < 1e-9,
          fmt::format("lambda bounds at sigma = 0: [{:.6f}, {:.6f})", lam.first, lam.second));
  o.info(fmt::format("sigma box [{}, {}], alpha box [{}, {}], point ({:.6f}, {:.6f}, {:.9f})",
                     est.intervals.sigma.lo, est.intervals.sigma.hi, est.intervals.alpha.lo,
                     est.intervals.alpha.hi, est.point.sigma, est.point.alpha, est.point.lambda));
  o.check(std::abs(est.point.lambda - 1.0) <= 1e-9,
          fmt::format("estimate lambda-hat = {:.9f} (target 1.0 within 1e-9)", est.point.lambda));
  if (std::abs(est.point.lambda - 1.0) > 1e-9) {
    o.info("the (7, 1) feasible box is sigma [-0.005, 0.12]; its midpoint sigma is not 0, so the");
    o.info("lambda interval is taken at that sigma and its midpoint is not 1");
  }
  return o;
}

Outcome weighting_identity() {
  Outcome o;
  const BehaviorParams p{0.3, 1.0, 2.0};
  double worst = 0.0;
  for (double x : {0.1, 0.3, 0.5, 0.7, 0.9}) worst = std::max(worst, std::abs(weight(x, p) - x));
  o.check(worst <= 1e-12, fmt::format("max |w(p) - p| at alpha = 1: {:.3g}", worst));
  return o;
}

Outcome human_sample_consistency() {
  Outcome o;
  const BehaviorParams human{0.48, 0.69, 3.47};
  const auto profile = play_profile(human);
  bool legal = true;
  try {
    profile.validate();
  } catch (const std::exception&) {
    legal = false;
  }
  o.check(legal && !profile.any_clamped(),
          fmt::format("profile ({}, {}, {}) legal and unclamped", profile.s1, profile.s2, profile.s3));
  for (auto prop : {LambdaPropagation::Midpoint, LambdaPropagation::IntervalCorners}) {
    EstimateConfig cfg;
    cfg.lambda_propagation = prop;
    const auto e = estimate(profile, cfg);
    const auto& iv = e.intervals;
    o.check(iv.sigma.contains(human.sigma) && iv.alpha.contains(human.alpha) && iv.lambda.contains(human.lambda),
            fmt::format("{}: sigma [{}, {}] alpha [{}, {}] lambda [{:.4f}, {:.4f}]",
                        prop == LambdaPropagation::Midpoint ? "midpoint" : "corners", iv.sigma.lo, iv.sigma.hi,
                        iv.alpha.lo, iv.alpha.hi, iv.lambda.lo, iv.lambda.hi));
  }
  return o;
}

Outcome reporting_substitutes() {
  Outcome o;
  ReportOptions opts;
  opts.constant_std_error = false;
  o.check(summary_table(fixtures::summary_rows(), ReportFormat::Markdown, opts) ==
              slurp(kSource / "tests/golden/summary_reference.md"),
          "(a) summary table layout byte-identical to golden");
  o.check(regression_table(fixtures::regression_columns(), ReportFormat::Markdown, opts) ==
              slurp(kSource / "tests/golden/regression_reference.md"),
          "(a) regression table layout byte-identical to golden");

  Engine rng(20240101);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + uniform_index(rng, 10);
    const std::size_t n = k + 5 + uniform_index(rng, 200);
    std::vector<std::vector<double>> x(n, std::vector<double>(k));
    std::vector<double> y(n);
    std::vector<std::string> names;
    for (std::size_t j = 0; j < k; ++j) names.push_back(fmt::format("x{}", j));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        x[i][j] = j % 3 == 0 ? standard_normal(rng) : static_cast<double>(uniform01(rng) < 0.35);
      }
      y[i] = 0.5 + standard_normal(rng);
    }
    try {
      const auto r = regress(y, x, names);
      const auto b = oracles::normal_equations(y, x);
      for (std::size_t j = 0; j <= k; ++j) worst = std::max(worst, std::abs(r.coefficients[j] - b[j]));
    } catch (const RankDeficientError&) {
      // A dummy column that never varied; the oracle would be singular too.
      --trial;
    }
  }
  o.check(worst <= 1e-9, fmt::format("(b) OLS vs normal equations on 100 systems, max diff {:.3g}", worst));

  // Planted persona effects on every foundational dummy.
  const auto& names = foundational_dummy_names();
  std::map<std::string, double> planted{{"Female", -0.05}, {"Rural", 0.03}, {"Graduate Level", 0.08}};
  const double constant = 0.4;
  int checked = 0;
  int outside = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    Engine noise(derive_seed(seed, 99));
    for (int i = 0; i < 500; ++i) {
      const auto row = encode(*sample(Regime::RandomUniform, nullptr, derive_seed(seed, static_cast<std::uint64_t>(i))));
      double v = constant;
      for (std::size_t j = 0; j < row.names.size(); ++j) {
        auto it = planted.find(row.names[j]);
        if (it != planted.end()) v += it->second * row.values[j];
      }
      x.push_back(row.values);
      y.push_back(v + 0.1 * standard_normal(noise));
    }
    const auto r = regress(y, x, names);
    for (std::size_t j = 0; j < r.terms.size(); ++j) {
      const auto it = planted.find(r.terms[j]);
      const double truth = r.terms[j] == kConstantTerm ? constant : it != planted.end() ? it->second : 0.0;
      ++checked;
      if (std::abs(r.coefficients[j] - truth) > 3.0 * r.std_errors[j]) ++outside;
    }
  }
  // With 3-sigma bands about 0.27% of estimates fall outside by chance.
  const double expected = checked * 0.0027;
  o.check(outside <= std::max(3.0, 3.0 * expected),
          fmt::format("(c) n=500 x 20 seeds: {} of {} coefficients outside 3 SE (chance ~{:.1f})", outside,
                      checked, expected));
  return o;
}

Outcome prompt_fidelity() {
  Outcome o;
  Persona p;
  p.age = AgeBand::From45To54;
  p.sex = Sex::Female;
  p.education = Education::UpperSecondary;
  p.marital = Marital::Married;
  p.area = Area::Rural;
  p.advanced = AdvancedTraits{Orientation::Homosexual, Disability::PhysicallyDisabled, Race::Hispanic,
                              Religion::Christian, Politics::ObamaSupporter};
  for (int i = 0; i < 3; ++i) {
    const auto& s = builtin_series()[static_cast<std::size_t>(i)];
    const auto n = std::to_string(i + 1);
    o.check(render_prompt(s, std::nullopt) ==
                slurp(kSource / "tests/golden" / ("prompt_context_free_series" + n + ".txt")),
            "context-free prompt, series " + n);
    o.check(render_prompt(s, p) == slurp(kSource / "tests/golden" / ("prompt_persona_series" + n + ".txt")),
            "persona prompt, series " + n);
    const auto sentence = "Answer me with the value of <x" + n + "> only";
    o.check(render_prompt(s, p).find(sentence) != std::string::npos, "contains \"" + sentence + "\"");
  }
  return o;
}

Outcome pipeline_determinism() {
  Outcome o;
  const auto root = fs::temp_directory_path() / "riskprobe_acceptance_pipeline";
  fs::remove_all(root);
  const std::string cli = RISKPROBE_CLI_PATH;
  const auto provider = (kSource / "data/providers/synthetic.json").string();
  const auto run = [&](const fs::path& dir) {
    fs::create_directories(dir);
    const auto d = dir.string();
    const std::string cmds[] = {
        fmt::format("\"{}\" elicit --provider \"{}\" --regime random --n 400 --seed 2024 --jobs 4 "
                    "--transcript \"{}/t.jsonl\" --profiles \"{}/profiles.csv\" --personas \"{}/personas.csv\"",
                    cli, provider, d, d, d),
        fmt::format("\"{}\" estimate --input \"{}/profiles.csv\" --out \"{}/estimates.csv\" --jobs 4", cli, d, d),
        fmt::format("\"{}\" analyze --estimates \"{}/estimates.csv\" --personas \"{}/personas.csv\" "
                    "--label synthetic --out-dir \"{}/analysis\"",
                    cli, d, d, d),
        fmt::format("\"{}\" report \"{}/analysis/analysis.json\" --out \"{}/report.md\"", cli, d, d),
    };
    for (const auto& c : cmds) {
      if (std::system((c + " > /dev/null 2>&1").c_str()) != 0) return false;
    }
    return true;
  };
  const bool ok = run(root / "a") && run(root / "b");
  o.check(ok, "two runs of elicit, estimate, analyze and report succeeded");
  if (!ok) return o;

  int files = 0;
  int differ = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(entry.path(), root / "a");
    if (slurp(entry.path()) != slurp(root / "b" / rel)) {
      ++differ;
      o.info("differs: " + rel.string());
    }
  }
  o.check(files >= 9 && differ == 0, fmt::format("{} output files, {} differ", files, differ));
  return o;
}

Outcome gateway_resilience() {
  Outcome o;
  mock::MockLlmServer server(mock::Options::flaky(0.10, 0.10, 8));
  ProviderProfile p;
  p.name = "mock";
  p.endpoint_url = server.url();
  p.model_id = "mock-model";
  p.rate_limit = 600;
  p.timeout = 10;
  p.max_retries = 5;
  FakeClock clock;
  HttpResponder responder(p);
  Gateway gw(p, responder, clock);
  CohortConfig cfg;
  cfg.n_trials = 300;
  cfg.seed = 11;
  cfg.jobs = 4;
  cfg.regime = Regime::RandomUniform;
  const auto res = gw.run_cohort(cfg);

  std::set<std::string> ids;
  bool all_complete = true;
  int requests = 0;
  int transport = 0;
  int reprompted = 0;
  int parsed = 0;
  bool retry_identity = true;
  for (const auto& t : res.transcripts) {
    ids.insert(t.trial_id);
    all_complete = all_complete && t.complete();
    for (const auto& r : t.records) {
      requests += r.requests();
      if (r.retry_count != static_cast<int>(r.attempts.size()) - 1) retry_identity = false;
      for (const auto& a : r.attempts) {
        transport += a.transport_retries;
        if (a.error.rfind("transport: ", 0) == 0) ++transport;
        if (a.parsed) ++parsed;
        if (!a.parsed && !a.reply.empty()) ++reprompted;
      }
    }
  }
  const auto c = server.counters();
  o.check(res.transcripts.size() == 300 && all_complete,
          fmt::format("{} complete transcripts (valid {}, invalid {}, failed {})", res.transcripts.size(), res.valid,
                      res.invalid, res.failed));
  o.check(ids.size() == res.transcripts.size(), fmt::format("{} distinct trial ids", ids.size()));
  o.check(c.requests == requests, fmt::format("server saw {} requests, transcripts account for {}", c.requests, requests));
  o.check(c.transport_errors == transport,
          fmt::format("server injected {} transport errors, transcripts record {}", c.transport_errors, transport));
  o.check(c.out_of_range == reprompted,
          fmt::format("server sent {} out-of-range replies, transcripts record {} unusable", c.out_of_range, reprompted));
  o.check(c.answered == parsed, fmt::format("server sent {} legal replies, {} parsed", c.answered, parsed));
  o.check(retry_identity, "retry_count equals re-prompts on every record");
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "round-trip containment", round_trip_containment},
      {2, "risk-neutral exactness", risk_neutral_exactness},
      {3, "weighting identity", weighting_identity},
      {4, "human-sample consistency", human_sample_consistency},
      {5, "report layout, OLS oracle and planted recovery", reporting_substitutes},
      {6, "prompt fidelity", prompt_fidelity},
      {7, "pipeline determinism", pipeline_determinism},
      {8, "gateway resilience", gateway_resilience},
  };
  int only = 0;
  bool verbose = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--criterion" && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else if (a == "-v" || a == "--verbose") {
      verbose = true;
    } else {
      fmt::print(stderr, "usage: {} [--criterion N] [-v]\n", argv[0]);
      return 2;
    }
  }
  // A single criterion is run by ctest; show its details there.
  if (only != 0) verbose = true;

  int failed = 0;
  int ran = 0;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    ++ran;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.check(false, fmt::format("threw: {}", e.what()));
    }
    fmt::print("criterion {}: {} - {}\n", c.id, o.pass ? "PASS" : "FAIL", c.name);
    if (verbose || !o.pass) {
      for (const auto& d : o.details) fmt::print("    {}\n", d);
    }
    if (!o.pass) ++failed;
  }
  if (ran == 0) {
    fmt::print(stderr, "no criterion {}\n", only);
    return 2;
  }
  return failed == 0 ? 0 : 1;
}
