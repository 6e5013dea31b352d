#include "prefpipe/clients.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "prefpipe/errors.hpp"
#include "prefpipe/util.hpp"

namespace prefpipe {

namespace {

using Clock = std::chrono::steady_clock;

std::int64_t micros_since(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - start)
      .count();
}

std::uint64_t hash_inputs(std::string_view role, const Prompt& p,
                          const Response* r, const GenConfig* cfg,
                          std::uint64_t seed) {
  std::uint64_t h = fnv1a(role);
  h = fnv1a(p.id, h);
  h = fnv1a(p.text, h);
  if (r) {
    h = fnv1a(r->generator_id, h);
    h = fnv1a(r->text, h);
  }
  if (cfg) {
    for (const auto& [k, v] : *cfg) {
      h = fnv1a(k, h);
      h = fnv1a(v, h);
    }
  }
  return fnv1a_u64(seed, h);
}

std::string config_tag(const GenConfig& config) {
  std::string out;
  for (const auto& [k, v] : config) {
    if (!out.empty()) out += ';';
    out += k + "=" + v;
  }
  return out;
}

std::string fill(std::string text, std::string_view key, const std::string& value) {
  std::size_t pos = 0;
  while ((pos = text.find(key, pos)) != std::string::npos) {
    text.replace(pos, key.size(), value);
    pos += value.size();
  }
  return text;
}

}  // namespace

// CallLog -------------------------------------------------------------------

void CallLog::record(CallRecord r) {
  std::lock_guard lock(mu_);
  records_.push_back(std::move(r));
}

std::vector<CallRecord> CallLog::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::size_t CallLog::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

Json CallLog::to_json() const {
  std::lock_guard lock(mu_);
  Json out = Json::array();
  for (const auto& r : records_) {
    std::ostringstream hash;
    hash << std::hex << std::setw(16) << std::setfill('0') << r.input_hash;
    Json j{{"client_id", r.client_id}, {"role", r.role}, {"input_hash", hash.str()},
           {"output", r.output},       {"latency_us", r.latency_us}, {"ok", r.ok}};
    if (!r.ok) j["error"] = r.error;
    out.push_back(std::move(j));
  }
  return out;
}

// Rubrics -------------------------------------------------------------------

const std::string& RubricSet::resolve(const std::string& category) const {
  auto it = by_category.find(category);
  if (it != by_category.end()) return it->second;
  if (fallback) return *fallback;
  throw ConfigError("no rubric for category '" + category + "' and no default rubric");
}

std::string render_rubric(const std::string& tmpl, const Prompt& prompt,
                          const Response& response) {
  std::string out = fill(tmpl, "{category}", prompt.category);
  out = fill(std::move(out), "{prompt}", prompt.text);
  return fill(std::move(out), "{response}", response.text);
}

// Role contracts --------------------------------------------------------------

Response generate(const GeneratorClient& client, const Prompt& prompt,
                  const GenConfig& config, std::uint64_t seed, CallLog* log) {
  validate(prompt);
  const auto start = Clock::now();
  CallRecord rec{client.id(), "generate",
                 hash_inputs("generate", prompt, nullptr, &config, seed), {}, 0, true, {}};
  try {
    Response r;
    r.text = client.generate_text(prompt, config, seed);
    r.generator_id = client.id();
    r.gen_config = config;
    r.degenerate = r.text.empty();
    rec.output = r.text;
    rec.latency_us = micros_since(start);
    if (log) log->record(std::move(rec));
    return r;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
    rec.latency_us = micros_since(start);
    if (log) log->record(std::move(rec));
    throw;
  }
}

double proxy_score(const ProxyRewardClient& client, const Prompt& prompt,
                   const Response& response, CallLog* log) {
  const auto start = Clock::now();
  CallRecord rec{client.id(), "proxy_score",
                 hash_inputs("proxy_score", prompt, &response, nullptr, 0), {}, 0, true, {}};
  auto finish = [&](bool ok, std::string out) {
    rec.ok = ok;
    (ok ? rec.output : rec.error) = std::move(out);
    rec.latency_us = micros_since(start);
    if (log) log->record(rec);
  };
  double s = 0.0;
  try {
    s = client.raw_score(prompt, response);
  } catch (const std::exception& e) {
    finish(false, e.what());
    throw;
  }
  if (!std::isfinite(s)) {
    finish(false, "non-finite score");
    throw NumericError("proxy scorer '" + client.id() +
                       "' returned a non-finite score for prompt " + prompt.id);
  }
  std::ostringstream os;
  os << std::setprecision(17) << s;
  finish(true, os.str());
  return s;
}

int parse_judge_reply(std::string_view reply) {
  const std::size_t n = reply.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isdigit(static_cast<unsigned char>(reply[i]))) continue;
    std::size_t start = i;
    bool negative = false;
    if (start > 0 && reply[start - 1] == '-') {
      negative = true;
      --start;
    }
    std::size_t end = i;
    while (end < n && std::isdigit(static_cast<unsigned char>(reply[end]))) ++end;
    const auto glued = [](char c) {
      return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    };
    const bool left_ok = start == 0 || (!glued(reply[start - 1]) && reply[start - 1] != '.');
    const bool decimal = end + 1 < n && reply[end] == '.' &&
                         std::isdigit(static_cast<unsigned char>(reply[end + 1]));
    const bool right_ok = end == n || !glued(reply[end]);
    if (left_ok && right_ok && !decimal) {
      const std::string digits(reply.substr(i, end - i));
      if (digits.size() > 1 || negative) {
        throw ScoringError("judge reply integer '" + std::string(reply.substr(start, end - start)) +
                               "' outside [1,5]",
                           std::string(reply));
      }
      const int v = digits[0] - '0';
      if (v < 1 || v > 5) {
        throw ScoringError("judge reply integer " + digits + " outside [1,5]",
                           std::string(reply));
      }
      return v;
    }
    i = end;  // skip the rest of a glued or decimal token
    if (decimal) {
      ++i;
      while (i < n && std::isdigit(static_cast<unsigned char>(reply[i]))) ++i;
    }
  }
  throw ScoringError("judge reply contains no standalone integer", std::string(reply));
}

JudgeScore judge_score(const JudgeClient& client, const Prompt& prompt,
                       const Response& response, CallLog* log) {
  const std::string& tmpl = client.rubrics().resolve(prompt.category);
  const std::string rendered = render_rubric(tmpl, prompt, response);
  const auto start = Clock::now();
  CallRecord rec{client.id(), "judge",
                 hash_inputs("judge", prompt, &response, nullptr, fnv1a(rendered)), {}, 0, true, {}};
  auto finish = [&](bool ok, std::string out) {
    rec.ok = ok;
    (ok ? rec.output : rec.error) = std::move(out);
    rec.latency_us = micros_since(start);
    if (log) log->record(rec);
  };
  JudgeReply reply;
  try {
    reply = client.ask(rendered, prompt, response);
  } catch (const std::exception& e) {
    finish(false, e.what());
    throw;
  }
  JudgeScore out;
  out.rubric = tmpl;
  out.raw_reply = reply.text;
  try {
    if (reply.score) {
      const double s = *reply.score;
      if (!(s >= 1.0 && s <= 5.0) || std::floor(s) != s) {
        std::ostringstream os;
        os << s;
        throw ScoringError("judge score " + os.str() + " is not an integer in [1,5]",
                           reply.text.empty() ? os.str() : reply.text);
      }
      out.score = static_cast<int>(s);
      if (out.raw_reply.empty()) out.raw_reply = std::to_string(out.score);
    } else {
      out.score = parse_judge_reply(reply.text);
    }
  } catch (const ScoringError& e) {
    finish(false, std::string(e.what()) + " | raw: " + e.raw_reply());
    throw;
  }
  finish(true, out.raw_reply);
  return out;
}

// Mocks -------------------------------------------------------------------------

std::string MockGenerator::generate_text(const Prompt& prompt, const GenConfig& config,
                                         std::uint64_t seed) const {
  if (failing_.count(prompt.id)) {
    throw RetryableError("mock generator '" + id() + "' unavailable for prompt " +
                         prompt.id);
  }
  if (auto it = fixtures_.find(prompt.id); it != fixtures_.end()) return it->second;
  if (mode_ == Mode::kEcho) return prompt.text;
  const std::string tag = config_tag(config);
  const std::uint64_t h = derive_seed(seed, {id(), prompt.id, prompt.text, tag});
  std::ostringstream os;
  os << "[" << id();
  if (!tag.empty()) os << " " << tag;
  os << "] answer to: " << prompt.text << " #" << std::hex << std::setw(8)
     << std::setfill('0') << (h >> 32);
  return os.str();
}

bool FavoredBonus::applies(const Prompt& prompt, const Response& response) const {
  if (response.generator_id != generator_id) return false;
  return unit_from_hash(derive_seed(seed, {"favored", prompt.id})) < rate;
}

double MockProxyReward::raw_score(const Prompt& prompt, const Response& response) const {
  if (auto it = table_.find({prompt.id, response.text}); it != table_.end()) {
    return it->second;
  }
  if (fn_) return fn_(prompt, response);
  double s = 0.0;
  if (favored_ && favored_->applies(prompt, response)) s += margin_;
  if (noise_ != 0.0) {
    s += noise_ * unit_from_hash(derive_seed(0, {"noise", prompt.id, response.text}));
  }
  return s;
}

JudgeReply MockJudge::ask(const std::string& /*rendered_rubric*/, const Prompt& prompt,
                          const Response& response) const {
  if (auto it = table_.find({prompt.id, response.text}); it != table_.end()) {
    return {it->second, std::nullopt};
  }
  if (fn_) return {fn_(prompt, response), std::nullopt};
  int s = base_score_;
  if (favored_ && favored_->applies(prompt, response)) ++s;
  return {"Score: " + std::to_string(s), std::nullopt};
}

// HTTP ----------------------------------------------------------------------------

Json HttpBackend::post(const Json& body) const {
  httplib::Client cli(config_.base_url);
  const auto secs = config_.timeout.count() / 1000;
  const auto usecs = (config_.timeout.count() % 1000) * 1000;
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  const std::string payload = body.dump();
  std::string last_error = "no attempt made";
  auto backoff = config_.initial_backoff;
  const int attempts = std::max(1, config_.max_attempts);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    auto res = cli.Post(config_.path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status >= 500) {
      last_error = "backend status " + std::to_string(res->status);
    } else if (res->status >= 400) {
      throw PermanentError("backend rejected request with status " +
                           std::to_string(res->status) + ": " + res->body);
    } else {
      try {
        return Json::parse(res->body);
      } catch (const Json::parse_error&) {
        throw PermanentError("backend reply is not JSON: " + res->body.substr(0, 200));
      }
    }
    if (attempt < attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw RetryableError(config_.base_url + config_.path + " failed after " +
                       std::to_string(attempts) + " attempts (" + last_error + ")");
}

std::string HttpGenerator::generate_text(const Prompt& prompt, const GenConfig& config,
                                         std::uint64_t seed) const {
  Json cfg = config;
  cfg["seed"] = seed;
  const Json reply = backend_.post(
      {{"role", "generate"}, {"prompt", prompt.text}, {"config", cfg}});
  if (!reply.contains("text") || !reply["text"].is_string()) {
    throw PermanentError("generate reply lacks a text field");
  }
  return reply["text"].get<std::string>();
}

double HttpProxyReward::raw_score(const Prompt& prompt, const Response& response) const {
  const Json reply = backend_.post(
      {{"role", "proxy_score"}, {"prompt", prompt.text}, {"response", response.text}});
  if (!reply.contains("score")) throw PermanentError("proxy_score reply lacks score");
  // JSON cannot carry NaN; a null score is the wire form of a non-finite value.
  if (reply["score"].is_null()) return std::nan("");
  if (!reply["score"].is_number()) throw PermanentError("proxy_score reply score is not a number");
  return reply["score"].get<double>();
}

JudgeReply HttpJudge::ask(const std::string& rendered_rubric, const Prompt& prompt,
                          const Response& response) const {
  const Json reply = backend_.post({{"role", "judge"},
                                    {"prompt", prompt.text},
                                    {"response", response.text},
                                    {"rubric", rendered_rubric}});
  JudgeReply out;
  if (reply.contains("text") && reply["text"].is_string()) {
    out.text = reply["text"].get<std::string>();
  }
  if (reply.contains("score") && reply["score"].is_number()) {
    out.score = reply["score"].get<double>();
  }
  if (out.text.empty() && !out.score) {
    throw ScoringError("judge reply has neither text nor score", reply.dump());
  }
  return out;
}

// Registry ------------------------------------------------------------------------

void ClientRegistry::add(std::shared_ptr<const GeneratorClient> c) {
  if (!generators_.emplace(c->id(), c).second) {
    throw ConfigError("duplicate generator id " + c->id());
  }
}

void ClientRegistry::add(std::shared_ptr<const ProxyRewardClient> c) {
  if (!proxies_.emplace(c->id(), c).second) {
    throw ConfigError("duplicate proxy scorer id " + c->id());
  }
}

void ClientRegistry::add(std::shared_ptr<const JudgeClient> c) {
  if (!judges_.emplace(c->id(), c).second) {
    throw ConfigError("duplicate judge id " + c->id());
  }
}

const GeneratorClient& ClientRegistry::generator(const std::string& id) const {
  auto it = generators_.find(id);
  if (it == generators_.end()) throw ConfigError("unknown generator client '" + id + "'");
  return *it->second;
}

const ProxyRewardClient& ClientRegistry::proxy(const std::string& id) const {
  auto it = proxies_.find(id);
  if (it == proxies_.end()) throw ConfigError("unknown proxy scorer '" + id + "'");
  return *it->second;
}

const JudgeClient& ClientRegistry::judge(const std::string& id) const {
  auto it = judges_.find(id);
  if (it == judges_.end()) throw ConfigError("unknown judge client '" + id + "'");
  return *it->second;
}

std::optional<int> ClientRegistry::tier_of(const std::string& generator_id) const {
  auto it = generators_.find(generator_id);
  if (it == generators_.end()) return std::nullopt;
  return it->second->capability_tier();
}

}  // namespace prefpipe
