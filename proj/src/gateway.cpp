#include "riskprobe/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <httplib.h>

#include "riskprobe/agent_sim.hpp"
#include "riskprobe/errors.hpp"
#include "riskprobe/rng.hpp"

namespace riskprobe {

using nlohmann::json;

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

std::string answer_label(SeriesId id) { return fmt::format("<x{}>", static_cast<int>(id) + 1); }

int table_number(SeriesId id) { return 8 + static_cast<int>(id); }

}  // namespace

int parse_reply(std::string_view text, const LotterySeries& series) {
  const size_t n = text.size();
  size_t i = 0;
  while (i < n) {
    if (!is_digit(text[i])) {
      ++i;
      continue;
    }
    size_t j = i;
    while (j < n && is_digit(text[j])) ++j;
    const bool glued_before = i > 0 && (is_word_char(text[i - 1]) || text[i - 1] == '.');
    const bool glued_after = j < n && is_word_char(text[j]);
    const bool decimal = j + 1 < n && text[j] == '.' && is_digit(text[j + 1]);
    if (glued_before || glued_after || decimal) {
      // Skip the whole token, including any fractional part.
      i = j;
      while (i < n && (is_word_char(text[i]) || (text[i] == '.' && i + 1 < n && is_digit(text[i + 1])))) {
        ++i;
      }
      continue;
    }
    const bool negative = i > 0 && text[i - 1] == '-' && (i < 2 || !is_word_char(text[i - 2]));
    long long value = 0;
    const auto [ptr, ec] = std::from_chars(text.data() + i, text.data() + j, value);
    (void)ptr;
    if (ec != std::errc()) {
      throw ReplyParseError(ReplyParseError::Kind::OutOfRange, std::nullopt,
                            fmt::format("reply value '{}' is out of range", text.substr(i, j - i)));
    }
    if (negative) value = -value;
    if (value < series.answer_min || value > series.answer_max) {
      throw ReplyParseError(ReplyParseError::Kind::OutOfRange, value,
                            fmt::format("reply value {} outside [{}, {}]", value, series.answer_min,
                                        series.answer_max));
    }
    return static_cast<int>(value);
  }
  throw ReplyParseError(ReplyParseError::Kind::NoInteger, std::nullopt, "reply contains no integer");
}

// ---------------------------------------------------------------------------

std::string series_prompt(const LotterySeries& series) {
  const std::string x = answer_label(series.id);
  std::vector<std::string> lines;
  switch (series.id) {
    case SeriesId::Series1:
      lines = {
          "We will show you two options for each lottery, and you will choose which option you want.",
          "For each lottery, each option will have different potential earnings,",
          "with a chance to earn, showing as a percentage under each option.",
          "Each of the selections will be independent, that is, for each lottery,",
          "your choice should be independent of the previous and following lotteries.",
          "Here are lotteries with options A and B.",
          "You can choose to play A or B and get the payment following the rules below.",
          fmt::format("You can choose option A from row <1> to row {},", x),
          fmt::format("choose option B from row <x+1> to row {}.", series.size()),
      };
      break;
    case SeriesId::Series2:
      lines = {
          "Now let's play the second lottery.",
          fmt::format("You can choose option A from row <1> to row {}, choose option B from row "
                      "<x+1> to row {}.",
                      x, series.size()),
      };
      break;
    case SeriesId::Series3:
      lines = {
          "Now let's play the last lottery. You will start with 10 dollars.",
          "You are going to play with this money. You can take it unless you lose in the lottery.",
          "And if you win we may add some to it.",
          fmt::format("Here are {} lotteries with options A and B.", series.size()),
          fmt::format("You can choose option A from row <1> to row {}, choose option B from row "
                      "<x+1> to row {}.",
                      x, series.size()),
      };
      break;
  }
  lines.push_back(fmt::format("See Table {}.", table_number(series.id)));
  std::string table = table_text(series);
  while (!table.empty() && table.back() == '\n') table.pop_back();
  lines.push_back(std::move(table));
  lines.push_back(fmt::format("Answer me with the value of {} only, please remember", x));
  lines.push_back(fmt::format("{} should be larger and equal to {}, less and equal to {}, do not explain.",
                              x, series.answer_min, series.answer_max));

  std::string out;
  for (const auto& l : lines) {
    if (!out.empty()) out += '\n';
    out += l;
  }
  return out;
}

std::string render_prompt(const LotterySeries& series, const std::optional<Persona>& persona,
                          const RenderOptions& options) {
  if (!persona) return series_prompt(series);
  return render(*persona, options) + "\n" + series_prompt(series);
}

std::string reprompt_suffix(const LotterySeries& series) {
  return fmt::format("Please reply with a single integer {} between {} and {}.",
                     answer_label(series.id), series.answer_min, series.answer_max);
}

// ---------------------------------------------------------------------------

std::string_view to_string(ResponderKind kind) {
  switch (kind) {
    case ResponderKind::Http: return "http";
    case ResponderKind::Synthetic: return "synthetic";
    case ResponderKind::Replay: return "replay";
  }
  return "?";
}

std::string_view to_string(RecordStatus status) {
  switch (status) {
    case RecordStatus::Ok: return "ok";
    case RecordStatus::Invalid: return "invalid";
    case RecordStatus::Failed: return "failed";
  }
  return "?";
}

namespace {

ResponderKind responder_kind_from_string(std::string_view s) {
  for (auto k : {ResponderKind::Http, ResponderKind::Synthetic, ResponderKind::Replay}) {
    if (to_string(k) == s) return k;
  }
  throw ParseError(fmt::format("unknown responder kind '{}'", s));
}

RecordStatus record_status_from_string(std::string_view s) {
  for (auto k : {RecordStatus::Ok, RecordStatus::Invalid, RecordStatus::Failed}) {
    if (to_string(k) == s) return k;
  }
  throw ParseError(fmt::format("unknown record status '{}'", s));
}

json default_request_template() {
  return json{{"model", "{{model}}"}, {"messages", "{{messages}}"}, {"temperature", "{{temperature}}"}};
}

}  // namespace

void ProviderProfile::validate() const {
  if (!(rate_limit > 0.0)) throw InvariantError(fmt::format("rate_limit must be > 0, got {}", rate_limit));
  if (max_retries < 0) throw InvariantError(fmt::format("max_retries must be >= 0, got {}", max_retries));
  if (!(timeout > 0.0)) throw InvariantError(fmt::format("timeout must be > 0, got {}", timeout));
  if (!(backoff_initial >= 0.0) || !(backoff_max >= 0.0)) throw InvariantError("backoff must be >= 0");
  switch (kind) {
    case ResponderKind::Http:
      if (endpoint_url.empty()) throw InvariantError("http provider needs endpoint_url");
      if (!request_template.is_null() && !request_template.is_object()) {
        throw InvariantError("request_template must be a JSON object");
      }
      try {
        (void)json::json_pointer(response_extract_path);
      } catch (const json::exception& e) {
        throw InvariantError(fmt::format("response_extract_path: {}", e.what()));
      }
      break;
    case ResponderKind::Synthetic: {
      params.validate();
      NoiseSpec{epsilon}.validate();
      const auto& f = foundational_dummy_names();
      const auto& a = advanced_dummy_names();
      for (const auto& [name, effect] : persona_effects) {
        (void)effect;
        if (std::find(f.begin(), f.end(), name) == f.end() &&
            std::find(a.begin(), a.end(), name) == a.end()) {
          throw InvariantError(fmt::format("persona effect on unknown term '{}'", name));
        }
      }
      break;
    }
    case ResponderKind::Replay:
      if (replay_path.empty()) throw InvariantError("replay provider needs replay_path");
      break;
  }
}

ProviderProfile ProviderProfile::from_json(const json& doc) {
  ProviderProfile p;
  try {
    p.name = doc.value("name", p.name);
    p.kind = responder_kind_from_string(doc.value("kind", std::string("http")));
    p.endpoint_url = doc.value("endpoint_url", "");
    p.auth_env_var = doc.value("auth_env_var", "");
    p.auth_header = doc.value("auth_header", p.auth_header);
    p.auth_prefix = doc.value("auth_prefix", p.auth_prefix);
    if (doc.contains("headers")) p.headers = doc.at("headers").get<std::map<std::string, std::string>>();
    p.request_template = doc.contains("request_template") ? doc.at("request_template")
                                                          : default_request_template();
    if (p.request_template.is_string()) p.request_template = json::parse(p.request_template.get<std::string>());
    p.response_extract_path = doc.value("response_extract_path", p.response_extract_path);
    p.model_id = doc.value("model_id", "");
    if (doc.contains("temperature") && !doc.at("temperature").is_null()) {
      p.temperature = doc.at("temperature").get<double>();
    }
    // Local responders are unpaced unless a limit is given.
    const double default_rate =
        p.kind == ResponderKind::Http ? p.rate_limit : std::numeric_limits<double>::infinity();
    p.rate_limit = doc.value("rate_limit", default_rate);
    p.timeout = doc.value("timeout", p.timeout);
    p.max_retries = doc.value("max_retries", p.max_retries);
    p.backoff_initial = doc.value("backoff_initial", p.backoff_initial);
    p.backoff_max = doc.value("backoff_max", p.backoff_max);
    if (doc.contains("params")) {
      const auto& j = doc.at("params");
      p.params = BehaviorParams{j.value("sigma", 0.0), j.value("alpha", 1.0), j.value("lambda", 1.0)};
    }
    p.epsilon = doc.value("epsilon", 0.0);
    if (doc.contains("persona_effects")) {
      for (const auto& [name, e] : doc.at("persona_effects").items()) {
        p.persona_effects[name] =
            ParamEffect{e.value("sigma", 0.0), e.value("alpha", 0.0), e.value("lambda", 0.0)};
      }
    }
    p.replay_path = doc.value("replay_path", "");
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("provider profile: {}", e.what()));
  }
  p.validate();
  return p;
}

ProviderProfile ProviderProfile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open provider profile {}", path.string()));
  ProviderProfile p;
  try {
    p = from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
  // A relative replay path is taken relative to the profile file.
  if (!p.replay_path.empty() && p.replay_path.is_relative()) {
    p.replay_path = path.parent_path() / p.replay_path;
  }
  return p;
}

json ProviderProfile::to_json() const {
  json doc{{"name", name}, {"kind", std::string(riskprobe::to_string(kind))}};
  if (std::isfinite(rate_limit)) doc["rate_limit"] = rate_limit;
  doc["timeout"] = timeout;
  doc["max_retries"] = max_retries;
  doc["backoff_initial"] = backoff_initial;
  doc["backoff_max"] = backoff_max;
  switch (kind) {
    case ResponderKind::Http:
      doc["endpoint_url"] = endpoint_url;
      doc["auth_env_var"] = auth_env_var;
      doc["auth_header"] = auth_header;
      doc["auth_prefix"] = auth_prefix;
      if (!headers.empty()) doc["headers"] = headers;
      doc["request_template"] = request_template;
      doc["response_extract_path"] = response_extract_path;
      doc["model_id"] = model_id;
      if (temperature) doc["temperature"] = *temperature;
      break;
    case ResponderKind::Synthetic: {
      doc["params"] = json{{"sigma", params.sigma}, {"alpha", params.alpha}, {"lambda", params.lambda}};
      doc["epsilon"] = epsilon;
      json effects = json::object();
      for (const auto& [name, e] : persona_effects) {
        effects[name] = json{{"sigma", e.sigma}, {"alpha", e.alpha}, {"lambda", e.lambda}};
      }
      doc["persona_effects"] = effects;
      break;
    }
    case ResponderKind::Replay:
      doc["replay_path"] = replay_path.string();
      break;
  }
  return doc;
}

// ---------------------------------------------------------------------------

SyntheticResponder::SyntheticResponder(const ProviderProfile& profile)
    : params_(profile.params), epsilon_(profile.epsilon), effects_(profile.persona_effects) {
  params_.validate();
  NoiseSpec{epsilon_}.validate();
}

BehaviorParams SyntheticResponder::params_for(const Persona* persona) const {
  BehaviorParams p = params_;
  if (!persona || effects_.empty()) return p;
  const auto row = encode(*persona);
  for (size_t i = 0; i < row.names.size(); ++i) {
    if (row.values[i] == 0.0) continue;
    auto it = effects_.find(row.names[i]);
    if (it == effects_.end()) continue;
    p.sigma += it->second.sigma * row.values[i];
    p.alpha += it->second.alpha * row.values[i];
    p.lambda += it->second.lambda * row.values[i];
  }
  p.sigma = std::clamp(p.sigma, kSigmaMin, kSigmaMax);
  p.alpha = std::clamp(p.alpha, std::nextafter(kAlphaMin, kAlphaMax), kAlphaMax);
  p.lambda = std::clamp(p.lambda, std::nextafter(kLambdaMin, kLambdaMax), kLambdaMax);
  return p;
}

Reply SyntheticResponder::respond(const std::vector<Message>&, const SessionContext& ctx) {
  // The whole profile is drawn from the trial seed, so every series of a
  // trial sees the same noise draws regardless of call order.
  Engine rng(derive_seed(ctx.seed, 0));
  const auto profile = apply_noise(play_profile(params_for(ctx.persona)), NoiseSpec{epsilon_}, rng);
  Reply r;
  r.text = std::to_string(profile.at(ctx.series));
  r.timestamp = "1970-01-01T00:00:00Z";
  r.censored = profile.clamped[static_cast<size_t>(ctx.series)];
  return r;
}

// ---------------------------------------------------------------------------

HttpResponder::HttpResponder(ProviderProfile profile) : profile_(std::move(profile)) {
  profile_.validate();
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(profile_.endpoint_url, m, url_re)) {
    throw InvariantError(fmt::format("endpoint_url '{}' is not an http(s) URL", profile_.endpoint_url));
  }
  base_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/";
  if (profile_.request_template.is_null()) profile_.request_template = default_request_template();
}

json HttpResponder::request_body(const std::vector<Message>& history) const {
  json messages = json::array();
  for (const auto& m : history) messages.push_back(json{{"role", m.role}, {"content", m.content}});

  const std::function<json(const json&)> fill = [&](const json& node) -> json {
    if (node.is_string()) {
      const auto& s = node.get_ref<const std::string&>();
      if (s == "{{messages}}") return messages;
      if (s == "{{model}}") return profile_.model_id;
      if (s == "{{temperature}}") return profile_.temperature ? json(*profile_.temperature) : json(nullptr);
      return node;
    }
    if (node.is_array()) {
      json out = json::array();
      for (const auto& v : node) out.push_back(fill(v));
      return out;
    }
    if (node.is_object()) {
      json out = json::object();
      for (const auto& [k, v] : node.items()) {
        if (v.is_string() && v.get_ref<const std::string&>() == "{{temperature}}" && !profile_.temperature) {
          continue;
        }
        out[k] = fill(v);
      }
      return out;
    }
    return node;
  };
  return fill(profile_.request_template);
}

Reply HttpResponder::respond(const std::vector<Message>& history, const SessionContext&) {
  httplib::Headers headers;
  if (!profile_.auth_env_var.empty()) {
    const char* key = std::getenv(profile_.auth_env_var.c_str());
    if (!key || !*key) throw AuthError(fmt::format("environment variable {} is not set", profile_.auth_env_var));
    headers.emplace(profile_.auth_header, profile_.auth_prefix + key);
  }
  for (const auto& [k, v] : profile_.headers) headers.emplace(k, v);

  httplib::Client client(base_);
  const auto seconds = static_cast<time_t>(profile_.timeout);
  const auto micros = static_cast<time_t>((profile_.timeout - static_cast<double>(seconds)) * 1e6);
  client.set_connection_timeout(seconds, micros);
  client.set_read_timeout(seconds, micros);
  client.set_write_timeout(seconds, micros);

  const auto res = client.Post(path_, headers, request_body(history).dump(), "application/json");
  if (!res) throw TransportError(fmt::format("request failed: {}", httplib::to_string(res.error())));
  const int status = res->status;
  if (status == 401 || status == 403) throw AuthError(fmt::format("HTTP {} from {}", status, base_));
  if (status == 429) {
    double wait = 0.0;
    if (res->has_header("Retry-After")) {
      const auto v = res->get_header_value("Retry-After");
      std::from_chars(v.data(), v.data() + v.size(), wait);
    }
    throw RateLimitedError("HTTP 429", wait);
  }
  if (status == 408 || status >= 500) throw TransportError(fmt::format("HTTP {}", status));
  if (status < 200 || status >= 300) throw ProtocolError(fmt::format("HTTP {}: {}", status, res->body));

  json body;
  try {
    body = json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw ProtocolError(fmt::format("response is not JSON: {}", e.what()));
  }
  const json::json_pointer ptr(profile_.response_extract_path);
  if (!body.contains(ptr) || !body.at(ptr).is_string()) {
    throw ProtocolError(fmt::format("no string at {} in response", profile_.response_extract_path));
  }
  Reply r;
  r.text = body.at(ptr).get<std::string>();
  return r;
}

// ---------------------------------------------------------------------------

ReplayResponder::ReplayResponder(const std::vector<Transcript>& transcripts) {
  for (const auto& t : transcripts) {
    for (const auto& rec : t.records) {
      for (size_t a = 0; a < rec.attempts.size(); ++a) {
        const auto& at = rec.attempts[a];
        Recorded r;
        r.reply.text = at.reply;
        r.reply.timestamp = at.timestamp;
        r.reply.censored = rec.clamped;
        r.reply.transport_retries = at.transport_retries;
        r.reply.rate_limit_waits = at.rate_limit_waits;
        if (rec.status == RecordStatus::Failed && a + 1 == rec.attempts.size()) r.error = at.error;
        replies_[{rec.trial_id, static_cast<int>(rec.series), static_cast<int>(a)}] = std::move(r);
      }
    }
  }
}

ReplayResponder ReplayResponder::load(const std::filesystem::path& path) {
  return ReplayResponder(read_transcripts(path));
}

Reply ReplayResponder::respond(const std::vector<Message>&, const SessionContext& ctx) {
  auto it = replies_.find({ctx.trial_id, static_cast<int>(ctx.series), ctx.attempt});
  if (it == replies_.end()) {
    throw ProtocolError(fmt::format("no recorded reply for {} {} attempt {}", ctx.trial_id,
                                    to_string(ctx.series), ctx.attempt));
  }
  const auto& rec = it->second;
  if (!rec.error.empty()) {
    // Reproduce the recorded failure; the gateway repeats its own retries.
    const std::string_view e = rec.error;
    const auto strip = [&](std::string_view prefix) { return std::string(e.substr(prefix.size())); };
    if (e.rfind("transport: ", 0) == 0) throw TransportError(strip("transport: "));
    throw ProtocolError(e.rfind("protocol: ", 0) == 0 ? strip("protocol: ") : std::string(e));
  }
  return rec.reply;
}

std::unique_ptr<Responder> make_responder(const ProviderProfile& profile) {
  switch (profile.kind) {
    case ResponderKind::Http: return std::make_unique<HttpResponder>(profile);
    case ResponderKind::Synthetic: return std::make_unique<SyntheticResponder>(profile);
    case ResponderKind::Replay:
      return std::make_unique<ReplayResponder>(ReplayResponder::load(profile.replay_path));
  }
  throw InvariantError("unknown responder kind");
}

// ---------------------------------------------------------------------------

std::string Clock::timestamp() {
  const auto now = std::chrono::system_clock::now();
  return fmt::format("{:%Y-%m-%dT%H:%M:%S}Z", fmt::gmtime(std::chrono::system_clock::to_time_t(now)));
}

namespace {

class SystemClock final : public Clock {
 public:
  Duration now() override {
    return std::chrono::duration_cast<Duration>(std::chrono::steady_clock::now().time_since_epoch());
  }
  void sleep_for(Duration d) override {
    if (d.count() > 0) std::this_thread::sleep_for(d);
  }
};

}  // namespace

Clock& system_clock() {
  static SystemClock clock;
  return clock;
}

Clock::Duration FakeClock::now() {
  std::lock_guard lock(mu_);
  return t_;
}

void FakeClock::sleep_for(Duration d) {
  std::lock_guard lock(mu_);
  if (d.count() > 0) t_ += d;
}

RateLimiter::RateLimiter(double per_minute, Clock& clock)
    : clock_(clock), interval_(std::isfinite(per_minute) ? 60.0 / per_minute : 0.0) {
  if (!(per_minute > 0.0)) throw InvariantError("rate limit must be > 0");
}

void RateLimiter::acquire() {
  if (interval_.count() == 0.0) return;
  Clock::Duration slot;
  {
    std::lock_guard lock(mu_);
    const auto now = clock_.now();
    slot = next_ ? std::max(*next_, now) : now;
    next_ = slot + interval_;
  }
  clock_.sleep_for(slot - clock_.now());
}

// ---------------------------------------------------------------------------

int SeriesRecord::transport_retries() const {
  int n = 0;
  for (const auto& a : attempts) n += a.transport_retries;
  return n;
}

int SeriesRecord::requests() const {
  int n = 0;
  for (const auto& a : attempts) n += 1 + a.transport_retries + a.rate_limit_waits;
  return n;
}

json to_json(const SeriesRecord& r) {
  json attempts = json::array();
  for (const auto& a : r.attempts) {
    attempts.push_back(json{{"prompt", a.prompt},
                            {"reply", a.reply},
                            {"timestamp", a.timestamp},
                            {"transport_retries", a.transport_retries},
                            {"rate_limit_waits", a.rate_limit_waits},
                            {"parsed", a.parsed ? json(*a.parsed) : json(nullptr)},
                            {"error", a.error}});
  }
  return json{{"trial_id", r.trial_id},
              {"provider", r.provider},
              {"persona", r.persona ? to_json(*r.persona) : json(nullptr)},
              {"series", std::string(to_string(r.series))},
              {"prompt", r.prompt},
              {"attempts", attempts},
              {"raw_reply", r.raw_reply},
              {"parsed", r.parsed ? json(*r.parsed) : json(nullptr)},
              {"valid", r.valid},
              {"retry_count", r.retry_count},
              {"clamped", r.clamped},
              {"status", std::string(to_string(r.status))},
              {"error", r.error},
              {"timestamp", r.timestamp}};
}

SeriesRecord series_record_from_json(const json& doc) {
  SeriesRecord r;
  try {
    r.trial_id = doc.at("trial_id").get<std::string>();
    r.provider = doc.at("provider").get<std::string>();
    if (!doc.at("persona").is_null()) r.persona = persona_from_json(doc.at("persona"));
    r.series = series_id_from_string(doc.at("series").get<std::string>());
    r.prompt = doc.at("prompt").get<std::string>();
    for (const auto& a : doc.at("attempts")) {
      Attempt at;
      at.prompt = a.at("prompt").get<std::string>();
      at.reply = a.at("reply").get<std::string>();
      at.timestamp = a.at("timestamp").get<std::string>();
      at.transport_retries = a.at("transport_retries").get<int>();
      at.rate_limit_waits = a.value("rate_limit_waits", 0);
      if (!a.at("parsed").is_null()) at.parsed = a.at("parsed").get<int>();
      at.error = a.at("error").get<std::string>();
      r.attempts.push_back(std::move(at));
    }
    r.raw_reply = doc.at("raw_reply").get<std::string>();
    if (!doc.at("parsed").is_null()) r.parsed = doc.at("parsed").get<int>();
    r.valid = doc.at("valid").get<bool>();
    r.retry_count = doc.at("retry_count").get<int>();
    r.clamped = doc.at("clamped").get<bool>();
    r.status = record_status_from_string(doc.at("status").get<std::string>());
    r.error = doc.at("error").get<std::string>();
    r.timestamp = doc.at("timestamp").get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("transcript record: {}", e.what()));
  }
  if (r.valid) {
    const auto& s = builtin_series(r.series);
    if (!r.parsed || *r.parsed < s.answer_min || *r.parsed > s.answer_max) {
      throw InvariantError(fmt::format("{}: valid record with value outside the answer range", r.trial_id));
    }
  }
  return r;
}

bool Transcript::complete() const {
  if (records.empty()) return false;
  return records.size() == kAllSeries.size() || records.back().status == RecordStatus::Failed;
}

bool Transcript::all_valid() const {
  return records.size() == kAllSeries.size() &&
         std::all_of(records.begin(), records.end(), [](const auto& r) { return r.valid; });
}

SwitchProfile Transcript::profile() const {
  if (!all_valid()) throw InvariantError(fmt::format("{}: trial has no complete valid profile", trial_id));
  SwitchProfile p;
  for (const auto& r : records) {
    p.set(r.series, *r.parsed);
    p.clamped[static_cast<size_t>(r.series)] = r.clamped;
  }
  return p;
}

std::vector<Transcript> read_transcripts(std::istream& in) {
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(std::move(line));
  }
  std::vector<Transcript> out;
  std::map<std::string, size_t> index;
  for (size_t i = 0; i < lines.size(); ++i) {
    json doc;
    try {
      doc = json::parse(lines[i]);
    } catch (const json::parse_error& e) {
      if (i + 1 == lines.size()) break;  // torn final write
      throw ParseError(fmt::format("transcript line {}: {}", i + 1, e.what()));
    }
    auto rec = series_record_from_json(doc);
    auto [it, inserted] = index.try_emplace(rec.trial_id, out.size());
    if (inserted) out.push_back(Transcript{rec.trial_id, rec.provider, rec.persona, {}});
    out[it->second].records.push_back(std::move(rec));
  }
  return out;
}

std::vector<Transcript> read_transcripts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open transcript {}", path.string()));
  return read_transcripts(in);
}

TranscriptWriter::TranscriptWriter(const std::filesystem::path& path, bool append) : path_(path) {
  if (!path_.parent_path().empty()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, append ? std::ios::app : std::ios::trunc);
  if (!out) throw ParseError(fmt::format("cannot write transcript {}", path_.string()));
}

void TranscriptWriter::write(const SeriesRecord& record) {
  const std::string line = to_json(record).dump() + "\n";
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.flush();
  if (!out) throw std::runtime_error(fmt::format("write to {} failed", path_.string()));
}

std::vector<ProfileRecord> export_profiles(const std::vector<Transcript>& transcripts) {
  std::vector<ProfileRecord> out;
  for (const auto& t : transcripts) {
    if (t.all_valid()) out.push_back({t.trial_id, t.profile()});
  }
  return out;
}

std::vector<PersonaRecord> export_personas(const std::vector<Transcript>& transcripts) {
  std::vector<PersonaRecord> out;
  for (const auto& t : transcripts) {
    if (t.all_valid()) out.push_back({t.trial_id, t.persona});
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string trial_id(int index) { return fmt::format("trial-{:04d}", index + 1); }

Gateway::Gateway(ProviderProfile profile, Responder& responder, Clock& clock)
    : profile_(std::move(profile)), responder_(responder), clock_(clock), limiter_(profile_.rate_limit, clock) {
  profile_.validate();
}

Reply Gateway::request(const std::vector<Message>& history, const SessionContext& ctx, Attempt& attempt) {
  // Waits on 429 are bounded separately from transport retries.
  const int max_waits = 10 * (profile_.max_retries + 1);
  int transport = 0;
  int waits = 0;
  const auto backoff = [&](int k) {
    return Clock::Duration(std::min(profile_.backoff_max, profile_.backoff_initial * std::pow(2.0, k)));
  };
  for (;;) {
    limiter_.acquire();
    try {
      Reply r = responder_.respond(history, ctx);
      attempt.transport_retries = transport + r.transport_retries;
      attempt.rate_limit_waits = waits + r.rate_limit_waits;
      return r;
    } catch (const RateLimitedError& e) {
      if (waits >= max_waits) {
        attempt.transport_retries = transport;
        attempt.rate_limit_waits = waits;
        throw TransportError("rate limited on every retry");
      }
      clock_.sleep_for(std::max(Clock::Duration(e.retry_after()), backoff(waits)));
      ++waits;
    } catch (const TransportError&) {
      if (transport >= profile_.max_retries) {
        attempt.transport_retries = transport;
        attempt.rate_limit_waits = waits;
        throw;
      }
      clock_.sleep_for(backoff(transport));
      ++transport;
    }
  }
}

Transcript Gateway::run_trial(const std::string& id, const std::optional<Persona>& persona,
                              std::span<const LotterySeries> series, std::uint64_t seed,
                              TranscriptWriter* writer, const RenderOptions& render) {
  Transcript t{id, profile_.name, persona, {}};
  std::vector<Message> history;  // one session per trial
  for (const auto& s : series) {
    SeriesRecord rec;
    rec.trial_id = id;
    rec.provider = profile_.name;
    rec.persona = persona;
    rec.series = s.id;
    rec.prompt = render_prompt(s, persona, render);
    std::string prompt = rec.prompt;
    for (int a = 0;; ++a) {
      Attempt at;
      at.prompt = prompt;
      history.push_back({"user", prompt});
      const SessionContext ctx{id, s.id, a, persona ? &*persona : nullptr, seed};
      Reply reply;
      try {
        reply = request(history, ctx, at);
      } catch (const TransportError& e) {
        at.error = fmt::format("transport: {}", e.what());
      } catch (const ProtocolError& e) {
        at.error = fmt::format("protocol: {}", e.what());
      }
      if (!at.error.empty()) {
        at.timestamp = clock_.timestamp();
        rec.attempts.push_back(std::move(at));
        rec.status = RecordStatus::Failed;
        rec.error = rec.attempts.back().error;
        break;
      }
      at.reply = reply.text;
      at.timestamp = reply.timestamp ? *reply.timestamp : clock_.timestamp();
      history.push_back({"assistant", reply.text});
      rec.raw_reply = reply.text;
      try {
        const int v = parse_reply(reply.text, s);
        at.parsed = v;
        rec.parsed = v;
        rec.valid = true;
        rec.clamped = reply.censored.value_or(false);
        rec.status = RecordStatus::Ok;
        rec.attempts.push_back(std::move(at));
        break;
      } catch (const ReplyParseError& e) {
        at.error = e.what();
        rec.attempts.push_back(std::move(at));
        if (a >= profile_.max_retries) {
          rec.status = RecordStatus::Invalid;
          rec.error = e.what();
          break;
        }
        ++rec.retry_count;
        prompt = rec.prompt + "\n" + reprompt_suffix(s);
      }
    }
    rec.timestamp = rec.attempts.back().timestamp;
    if (writer) writer->write(rec);
    const bool failed = rec.status == RecordStatus::Failed;
    t.records.push_back(std::move(rec));
    if (failed) break;
  }
  return t;
}

namespace {

void rewrite_transcript(const std::filesystem::path& path, const std::map<std::string, Transcript>& trials) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    for (const auto& [id, t] : trials) {
      for (const auto& r : t.records) out << to_json(r).dump() << '\n';
    }
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", tmp));
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

CohortResult Gateway::run_cohort(const CohortConfig& cfg, std::span<const LotterySeries> series) {
  if (cfg.n_trials < 1) throw InvariantError("cohort needs at least one trial");
  if (cfg.jobs < 1) throw InvariantError("jobs must be >= 1");
  if (cfg.distribution) cfg.distribution->validate();

  CohortResult result;
  std::set<std::string> planned;
  for (int i = 0; i < cfg.n_trials; ++i) planned.insert(trial_id(i));

  std::map<std::string, Transcript> done;
  std::unique_ptr<TranscriptWriter> writer;
  if (!cfg.transcript_path.empty()) {
    if (cfg.resume && std::filesystem::exists(cfg.transcript_path)) {
      for (auto& t : read_transcripts(cfg.transcript_path)) {
        if (t.complete() && planned.count(t.trial_id)) done.emplace(t.trial_id, std::move(t));
      }
      // Rewrite without partial trials so their reruns do not duplicate records.
      rewrite_transcript(cfg.transcript_path, done);
      writer = std::make_unique<TranscriptWriter>(cfg.transcript_path, true);
    } else {
      writer = std::make_unique<TranscriptWriter>(cfg.transcript_path, false);
    }
  }
  result.resumed = static_cast<int>(done.size());

  std::vector<int> todo;
  for (int i = 0; i < cfg.n_trials; ++i) {
    if (!done.count(trial_id(i))) todo.push_back(i);
  }

  std::mutex mu;
  std::atomic<size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr error;
  const auto worker = [&] {
    while (!abort) {
      const size_t k = next++;
      if (k >= todo.size()) return;
      const int i = todo[k];
      const auto seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(i));
      try {
        const auto persona = sample(cfg.regime, cfg.distribution, derive_seed(seed, 1));
        auto t = run_trial(trial_id(i), persona, series, derive_seed(seed, 2), writer.get(), cfg.render);
        std::lock_guard lock(mu);
        done.emplace(t.trial_id, std::move(t));
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        abort = true;
      }
    }
  };
  const int n_threads = std::min<int>(cfg.jobs, static_cast<int>(todo.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int j = 0; j < n_threads; ++j) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  if (error) std::rethrow_exception(error);
  // Workers append in completion order; leave the file in trial order.
  if (writer) rewrite_transcript(cfg.transcript_path, done);

  for (auto& [id, t] : done) {
    if (t.all_valid()) {
      ++result.valid;
    } else if (!t.records.empty() && t.records.back().status == RecordStatus::Failed) {
      ++result.failed;
    } else {
      ++result.invalid;
    }
    result.transcripts.push_back(std::move(t));
  }
  return result;
}

}  // namespace riskprobe
