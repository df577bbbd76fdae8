#pragma once

// Drives a responder (live HTTP endpoint, recorded transcript or synthetic
// agent) through the three lottery series: prompt rendering, reply parsing,
// re-prompts, retries, rate limiting and JSONL transcripts.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskprobe/estimator.hpp"
#include "riskprobe/mpl_series.hpp"
#include "riskprobe/persona.hpp"
#include "riskprobe/tcn_model.hpp"

namespace riskprobe {

// Errors raised by responders. Transport and rate-limit errors are retried;
// auth errors abort a cohort; protocol errors fail the trial.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class AuthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class RateLimitedError : public std::runtime_error {
 public:
  RateLimitedError(const std::string& what, double retry_after_s)
      : std::runtime_error(what), retry_after_(retry_after_s) {}
  double retry_after() const noexcept { return retry_after_; }

 private:
  double retry_after_;
};

// ---------------------------------------------------------------------------
// Reply parsing

class ReplyParseError : public std::runtime_error {
 public:
  enum class Kind { NoInteger, OutOfRange };
  ReplyParseError(Kind kind, std::optional<long long> value, const std::string& what)
      : std::runtime_error(what), kind_(kind), value_(value) {}
  Kind kind() const noexcept { return kind_; }
  std::optional<long long> value() const noexcept { return value_; }

 private:
  Kind kind_;
  std::optional<long long> value_;
};

// First standalone integer in the text, checked against the answer range.
// Digits glued to letters ("x1") or part of a decimal ("5.5") do not count.
int parse_reply(std::string_view text, const LotterySeries& series);

// ---------------------------------------------------------------------------
// Prompts

// Context-free prompt for a series.
std::string series_prompt(const LotterySeries& series);

// Prompt sent for a series, with the persona preamble when present.
std::string render_prompt(const LotterySeries& series, const std::optional<Persona>& persona,
                          const RenderOptions& options = {});

// Sentence appended to the prompt when a reply could not be used.
std::string reprompt_suffix(const LotterySeries& series);

// ---------------------------------------------------------------------------
// Provider configuration

enum class ResponderKind { Http, Synthetic, Replay };

struct ParamEffect {
  double sigma = 0.0;
  double alpha = 0.0;
  double lambda = 0.0;
};

struct ProviderProfile {
  std::string name = "provider";
  ResponderKind kind = ResponderKind::Http;

  // http
  std::string endpoint_url;
  std::string auth_env_var;  // empty: no auth header
  std::string auth_header = "Authorization";
  std::string auth_prefix = "Bearer ";
  std::map<std::string, std::string> headers;
  // Body template; the strings "{{messages}}", "{{model}}", "{{temperature}}"
  // are substituted. A "{{temperature}}" member is dropped when unset.
  nlohmann::json request_template;  // null: model, messages and temperature
  std::string response_extract_path = "/choices/0/message/content";  // JSON pointer
  std::string model_id;
  std::optional<double> temperature;

  double rate_limit = 60.0;  // requests per minute
  double timeout = 60.0;     // seconds
  int max_retries = 3;       // re-prompts and transport retries, counted separately
  double backoff_initial = 1.0;
  double backoff_max = 30.0;

  // synthetic
  BehaviorParams params;
  double epsilon = 0.0;
  std::map<std::string, ParamEffect> persona_effects;  // keyed by dummy name

  // replay
  std::filesystem::path replay_path;

  void validate() const;
  static ProviderProfile from_json(const nlohmann::json& doc);
  static ProviderProfile load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

// ---------------------------------------------------------------------------
// Responders

struct Message {
  std::string role;  // "user" or "assistant"
  std::string content;
};

struct SessionContext {
  std::string trial_id;
  SeriesId series = SeriesId::Series1;
  int attempt = 0;  // 0 for the first prompt of a series
  const Persona* persona = nullptr;
  std::uint64_t seed = 0;
};

struct Reply {
  std::string text;
  std::optional<std::string> timestamp;
  std::optional<bool> censored;  // known only when the responder is an agent
  // Failures the responder absorbed before this reply (replayed counts).
  int transport_retries = 0;
  int rate_limit_waits = 0;
};

// Implementations must be safe to call from several trial workers at once.
class Responder {
 public:
  virtual ~Responder() = default;
  virtual Reply respond(const std::vector<Message>& history, const SessionContext& ctx) = 0;
};

// Agent answering with its switch points (with optional noise and persona
// shifts); timestamps are fixed so transcripts are reproducible.
class SyntheticResponder final : public Responder {
 public:
  explicit SyntheticResponder(const ProviderProfile& profile);
  Reply respond(const std::vector<Message>& history, const SessionContext& ctx) override;
  BehaviorParams params_for(const Persona* persona) const;

 private:
  BehaviorParams params_;
  double epsilon_;
  std::map<std::string, ParamEffect> effects_;
};

class HttpResponder final : public Responder {
 public:
  explicit HttpResponder(ProviderProfile profile);
  Reply respond(const std::vector<Message>& history, const SessionContext& ctx) override;
  nlohmann::json request_body(const std::vector<Message>& history) const;

 private:
  ProviderProfile profile_;
  std::string base_;
  std::string path_;
};

struct Transcript;

// Answers from a recorded transcript, attempt by attempt.
class ReplayResponder final : public Responder {
 public:
  explicit ReplayResponder(const std::vector<Transcript>& transcripts);
  static ReplayResponder load(const std::filesystem::path& path);
  Reply respond(const std::vector<Message>& history, const SessionContext& ctx) override;

 private:
  struct Recorded {
    Reply reply;
    std::string error;  // set when the attempt ended without a reply
  };
  std::map<std::tuple<std::string, int, int>, Recorded> replies_;
};

std::unique_ptr<Responder> make_responder(const ProviderProfile& profile);

// ---------------------------------------------------------------------------
// Time and pacing

class Clock {
 public:
  using Duration = std::chrono::duration<double>;
  virtual ~Clock() = default;
  virtual Duration now() = 0;
  virtual void sleep_for(Duration d) = 0;
  virtual std::string timestamp();  // ISO-8601 UTC wall time
};

Clock& system_clock();

// Advances only when slept on; for tests.
class FakeClock final : public Clock {
 public:
  Duration now() override;
  void sleep_for(Duration d) override;
  std::string timestamp() override { return "1970-01-01T00:00:00Z"; }

 private:
  std::mutex mu_;
  Duration t_{0};
};

// Evenly spaced request slots shared by all workers.
class RateLimiter {
 public:
  RateLimiter(double per_minute, Clock& clock);
  void acquire();

 private:
  std::mutex mu_;
  Clock& clock_;
  Clock::Duration interval_;
  std::optional<Clock::Duration> next_;
};

// ---------------------------------------------------------------------------
// Transcripts

struct Attempt {
  std::string prompt;
  std::string reply;
  std::string timestamp;
  int transport_retries = 0;
  int rate_limit_waits = 0;
  std::optional<int> parsed;
  std::string error;  // parse or transport diagnostic
};

enum class RecordStatus { Ok, Invalid, Failed };

struct SeriesRecord {
  std::string trial_id;
  std::string provider;
  std::optional<Persona> persona;
  SeriesId series = SeriesId::Series1;
  std::string prompt;
  std::vector<Attempt> attempts;
  std::string raw_reply;
  std::optional<int> parsed;
  bool valid = false;
  int retry_count = 0;  // re-prompts after unusable replies
  bool clamped = false;
  RecordStatus status = RecordStatus::Invalid;
  std::string error;
  std::string timestamp;

  int transport_retries() const;
  int requests() const;  // attempts plus transport retries
};

nlohmann::json to_json(const SeriesRecord& record);
SeriesRecord series_record_from_json(const nlohmann::json& doc);

struct Transcript {
  std::string trial_id;
  std::string provider;
  std::optional<Persona> persona;
  std::vector<SeriesRecord> records;

  // Three records, or stopped early by a failed request.
  bool complete() const;
  bool all_valid() const;
  SwitchProfile profile() const;  // requires all_valid()
};

// Reads JSONL; a truncated last line is ignored. Records are grouped by
// trial_id in order of first appearance.
std::vector<Transcript> read_transcripts(const std::filesystem::path& path);
std::vector<Transcript> read_transcripts(std::istream& in);

class TranscriptWriter {
 public:
  TranscriptWriter(const std::filesystem::path& path, bool append);
  void write(const SeriesRecord& record);

 private:
  std::mutex mu_;
  std::filesystem::path path_;
};

// Trials whose three replies parsed, for the estimator; flags from records.
std::vector<ProfileRecord> export_profiles(const std::vector<Transcript>& transcripts);
std::vector<PersonaRecord> export_personas(const std::vector<Transcript>& transcripts);

// ---------------------------------------------------------------------------
// Trials and cohorts

struct CohortConfig {
  Regime regime = Regime::ContextFree;
  const DistributionSpec* distribution = nullptr;
  int n_trials = 1;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::filesystem::path transcript_path;  // empty: keep in memory only
  bool resume = false;
  RenderOptions render;
};

struct CohortResult {
  std::vector<Transcript> transcripts;  // sorted by trial_id
  int valid = 0;
  int invalid = 0;
  int failed = 0;
  int resumed = 0;  // trials kept from an earlier run
};

std::string trial_id(int index);  // "trial-0001" for index 0

class Gateway {
 public:
  Gateway(ProviderProfile profile, Responder& responder, Clock& clock = system_clock());

  // One fresh session: the series prompts in order with in-trial history.
  Transcript run_trial(const std::string& id, const std::optional<Persona>& persona,
                       std::span<const LotterySeries> series, std::uint64_t seed,
                       TranscriptWriter* writer = nullptr, const RenderOptions& render = {});

  CohortResult run_cohort(const CohortConfig& config,
                          std::span<const LotterySeries> series = builtin_series());

 private:
  Reply request(const std::vector<Message>& history, const SessionContext& ctx, Attempt& attempt);

  ProviderProfile profile_;
  Responder& responder_;
  Clock& clock_;
  RateLimiter limiter_;
};

std::string_view to_string(ResponderKind kind);
std::string_view to_string(RecordStatus status);

}  // namespace riskprobe
