#include "prefpipe/pipeline.hpp"

#include <cmath>
#include <fstream>

#include "prefpipe/errors.hpp"
#include "prefpipe/util.hpp"

namespace prefpipe {

namespace {

template <typename T>
T get_or(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

std::string require_string(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty()) {
    throw ConfigError(where + "." + key + " is required");
  }
  return j[key].get<std::string>();
}

HttpBackendConfig http_config(const Json& c, const std::string& where) {
  HttpBackendConfig h;
  h.base_url = require_string(c, "base_url", where);
  h.path = get_or<std::string>(c, "path", "/", where);
  h.api_key_env = get_or<std::string>(c, "api_key_env", "", where);
  h.max_attempts = get_or<int>(c, "max_attempts", 3, where);
  h.initial_backoff = std::chrono::milliseconds(get_or<long>(c, "initial_backoff_ms", 200, where));
  h.timeout = std::chrono::milliseconds(get_or<long>(c, "timeout_ms", 30000, where));
  return h;
}

std::optional<FavoredBonus> favored_from(const Json& c, const std::string& id,
                                         const std::string& where) {
  if (!c.contains("favored_generator")) return std::nullopt;
  FavoredBonus f;
  f.generator_id = require_string(c, "favored_generator", where);
  f.rate = get_or<double>(c, "favored_rate", 0.0, where);
  if (!(f.rate >= 0.0 && f.rate <= 1.0)) throw ConfigError(where + ".favored_rate must be in [0,1]");
  // Each client draws its own favored prompts.
  f.seed = derive_seed(get_or<std::uint64_t>(c, "favored_seed", 0, where), {id});
  return f;
}

RubricSet rubrics_from(const Json& c, const std::string& where) {
  RubricSet r;
  r.by_category = get_or<std::map<std::string, std::string>>(c, "rubrics", {}, where);
  if (c.contains("default_rubric")) r.fallback = require_string(c, "default_rubric", where);
  return r;
}

std::string client_where(const char* role, std::size_t i) {
  return std::string("clients.") + role + "[" + std::to_string(i) + "]";
}

}  // namespace

std::shared_ptr<ClientRegistry> build_clients(const Json& clients) {
  auto reg = std::make_shared<ClientRegistry>();
  if (!clients.is_object()) throw ConfigError("clients must be an object");

  const Json gens = clients.value("generators", Json::array());
  for (std::size_t i = 0; i < gens.size(); ++i) {
    const Json& c = gens[i];
    const std::string where = client_where("generators", i);
    const std::string id = require_string(c, "id", where);
    const int tier = get_or<int>(c, "tier", 0, where);
    const std::string type = get_or<std::string>(c, "type", "mock", where);
    if (type == "mock") {
      const std::string mode = get_or<std::string>(c, "mode", "templated", where);
      if (mode != "templated" && mode != "echo") throw ConfigError(where + ".mode unknown: " + mode);
      auto g = std::make_shared<MockGenerator>(
          id, tier, mode == "echo" ? MockGenerator::Mode::kEcho : MockGenerator::Mode::kTemplated);
      g->set_failing_prompts(get_or<std::set<std::string>>(c, "failing_prompts", {}, where));
      for (const auto& [pid, text] :
           get_or<std::map<std::string, std::string>>(c, "fixtures", {}, where)) {
        g->set_fixture(pid, text);
      }
      reg->add(std::shared_ptr<const GeneratorClient>(g));
    } else if (type == "http") {
      reg->add(std::shared_ptr<const GeneratorClient>(
          std::make_shared<HttpGenerator>(id, tier, http_config(c, where))));
    } else {
      throw ConfigError(where + ".type unknown: " + type);
    }
  }

  const Json proxies = clients.value("proxies", Json::array());
  for (std::size_t i = 0; i < proxies.size(); ++i) {
    const Json& c = proxies[i];
    const std::string where = client_where("proxies", i);
    const std::string id = require_string(c, "id", where);
    const std::string type = get_or<std::string>(c, "type", "mock", where);
    if (type == "mock") {
      auto p = std::make_shared<MockProxyReward>(id);
      if (auto f = favored_from(c, id, where)) {
        p->set_favored(*f, get_or<double>(c, "margin", 1.0, where));
      }
      p->set_noise(get_or<double>(c, "noise", 0.0, where));
      for (const auto& fx : c.value("fixtures", Json::array())) {
        p->set_fixture(fx.at("prompt_id").get<std::string>(), fx.at("response").get<std::string>(),
                       fx.at("score").get<double>());
      }
      reg->add(std::shared_ptr<const ProxyRewardClient>(p));
    } else if (type == "http") {
      reg->add(std::shared_ptr<const ProxyRewardClient>(
          std::make_shared<HttpProxyReward>(id, http_config(c, where))));
    } else {
      throw ConfigError(where + ".type unknown: " + type);
    }
  }

  const Json judges = clients.value("judges", Json::array());
  for (std::size_t i = 0; i < judges.size(); ++i) {
    const Json& c = judges[i];
    const std::string where = client_where("judges", i);
    const std::string id = require_string(c, "id", where);
    const std::string type = get_or<std::string>(c, "type", "mock", where);
    RubricSet rubrics = rubrics_from(c, where);
    if (type == "mock") {
      const int base = get_or<int>(c, "base_score", 3, where);
      auto j = std::make_shared<MockJudge>(id, std::move(rubrics), base);
      if (auto f = favored_from(c, id, where)) j->set_favored(*f);
      for (const auto& fx : c.value("fixtures", Json::array())) {
        const auto pid = fx.at("prompt_id").get<std::string>();
        const auto resp = fx.at("response").get<std::string>();
        if (fx.contains("reply")) {
          j->set_fixture_reply(pid, resp, fx["reply"].get<std::string>());
        } else {
          j->set_fixture(pid, resp, fx.at("score").get<int>());
        }
      }
      reg->add(std::shared_ptr<const JudgeClient>(j));
    } else if (type == "http") {
      reg->add(std::shared_ptr<const JudgeClient>(
          std::make_shared<HttpJudge>(id, std::move(rubrics), http_config(c, where))));
    } else {
      throw ConfigError(where + ".type unknown: " + type);
    }
  }
  return reg;
}

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  step1.seed = s;
  labeling.seed = derive_seed(s, {"labeling"});
  train.seed = s;
}

void PipelineConfig::validate() const {
  if (!clients) throw ConfigError("no clients configured");
  if (!std::isfinite(step1.epsilon)) throw ConfigError("step1.epsilon must be finite");
  step1.validate(*clients);
  step2.validate(*clients);
  clients->judge(judge_id);
  train.validate();
  if (features.dim == 0) throw ConfigError("features.dim must be positive");
  if (!bon.generator_id.empty()) clients->generator(bon.generator_id);
  if (!bon.judge_id.empty()) clients->judge(bon.judge_id);
  for (auto n : bon.sizes) {
    if (n == 0) throw ConfigError("bon.sizes entries must be >= 1");
  }
}

PipelineConfig parse_config(const Json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  PipelineConfig cfg;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  if (j.contains("store")) cfg.store_path = resolve(require_string(j, "store", "config"));
  if (j.contains("prompts")) cfg.prompts_path = resolve(require_string(j, "prompts", "config"));
  cfg.max_in_flight = get_or<std::size_t>(j, "max_in_flight", 8, "config");
  if (cfg.max_in_flight == 0) throw ConfigError("config.max_in_flight must be >= 1");
  cfg.clients = build_clients(j.value("clients", Json::object()));

  const Json s1 = j.value("step1", Json::object());
  cfg.step1.epsilon = get_or<double>(s1, "epsilon", 0.0, "step1");
  cfg.step1.sft_client_id = require_string(s1, "sft_client", "step1");
  cfg.step1.strong_client_id = require_string(s1, "strong_client", "step1");
  cfg.step1.proxy_client_id = require_string(s1, "proxy_client", "step1");
  cfg.step1.per_category_quota =
      get_or<std::map<std::string, std::size_t>>(s1, "per_category_quota", {}, "step1");
  cfg.step1.gen_config = get_or<GenConfig>(s1, "gen_config", {}, "step1");
  cfg.step1.max_in_flight = cfg.max_in_flight;

  const Json s2 = j.value("step2", Json::object());
  for (const auto& g : s2.value("generators", Json::array())) {
    GeneratorSpec spec;
    spec.client_id = require_string(g, "client", "step2.generators[]");
    spec.config = get_or<GenConfig>(g, "config", {}, "step2.generators[]");
    cfg.step2.generators.push_back(std::move(spec));
  }
  cfg.step2.min_superior_tier = get_or<int>(s2, "min_superior_tier", 0, "step2");
  cfg.step2.pairs_per_prompt = get_or<std::size_t>(s2, "pairs_per_prompt", 2, "step2");
  const std::string dedup = get_or<std::string>(s2, "dedup", "exact_text", "step2");
  if (dedup == "exact_text") {
    cfg.step2.dedup = DedupPolicy::kExactText;
  } else if (dedup == "none") {
    cfg.step2.dedup = DedupPolicy::kNone;
  } else {
    throw ConfigError("step2.dedup must be exact_text or none");
  }
  cfg.step2.reuse_step1_responses = get_or<bool>(s2, "reuse_step1_responses", true, "step2");
  cfg.step2.max_in_flight = cfg.max_in_flight;

  const Json s3 = j.value("step3", Json::object());
  cfg.judge_id = require_string(s3, "judge", "step3");
  if (s3.contains("matrix")) {
    const auto flat = get_or<std::vector<bool>>(s3, "matrix", {}, "step3");
    std::array<bool, 25> cells{};
    if (flat.size() != 25) throw ConfigError("step3.matrix needs 25 booleans");
    for (std::size_t i = 0; i < 25; ++i) cells[i] = flat[i];
    cfg.matrix = FilterMatrix::from_row_major(cells);
  }

  const Json lab = j.value("labeling", Json::object());
  cfg.labeling.lease_duration = std::chrono::seconds(get_or<long>(lab, "lease_seconds", 600, "labeling"));
  cfg.labeling.max_renewals = get_or<int>(lab, "max_renewals", 1, "labeling");
  cfg.labeling.reveal_judge_scores = get_or<bool>(lab, "reveal_judge_scores", false, "labeling");
  cfg.server.tokens = get_or<std::map<std::string, std::string>>(lab, "tokens", {}, "labeling");
  if (lab.contains("ui_dir")) cfg.server.ui_dir = resolve(require_string(lab, "ui_dir", "labeling"));

  const Json tr = j.value("train", Json::object());
  cfg.train.learning_rate = get_or<double>(tr, "learning_rate", 0.1, "train");
  cfg.train.epochs = get_or<std::size_t>(tr, "epochs", 10, "train");
  cfg.train.batch_size = get_or<std::size_t>(tr, "batch_size", 32, "train");
  cfg.train.l2 = get_or<double>(tr, "l2", 0.0, "train");
  cfg.train.hidden = get_or<std::size_t>(tr, "hidden", 0, "train");

  const Json fe = j.value("features", Json::object());
  cfg.features.dim = get_or<std::size_t>(fe, "dim", 256, "features");
  try {
    cfg.features.mode =
        feature_mode_from_string(get_or<std::string>(fe, "mode", "hashed_bag_of_tokens", "features"));
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("features.") + e.what());
  }
  cfg.features.seed = get_or<std::uint64_t>(fe, "seed", 0, "features");

  const Json bon = j.value("bon", Json::object());
  cfg.bon.generator_id = get_or<std::string>(bon, "generator", "", "bon");
  cfg.bon.sizes = get_or<std::vector<std::size_t>>(bon, "sizes", {5, 10, 20, 50}, "bon");
  cfg.bon.judge_id = get_or<std::string>(bon, "judge", cfg.judge_id, "bon");

  cfg.set_seed(get_or<std::uint64_t>(j, "seed", 0, "config"));
  // Explicit train seed wins over the global one.
  if (tr.contains("seed")) cfg.train.seed = get_or<std::uint64_t>(tr, "seed", 0, "train");
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  Json j;
  try {
    j = Json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

std::vector<Prompt> read_prompts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IntegrityError("cannot read prompts " + path.string());
  std::vector<Prompt> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      Prompt p = Json::parse(line).get<Prompt>();
      validate(p);
      out.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw IntegrityError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_prompts(const std::filesystem::path& path, std::span<const Prompt> prompts) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IntegrityError("cannot write " + path.string());
  for (const auto& p : prompts) out << Json(p).dump() << '\n';
}

bool PipelineRun::partial() const {
  return !step1.deferred.empty() || !step2.deferred.empty() || !step3.deferred.empty();
}

std::vector<Prompt> kept_prompts(const RecordStore& store) {
  std::vector<Prompt> out;
  for (const auto& v : stored_verdicts(store)) {
    if (!v.kept) continue;
    auto p = store.find_prompt(v.prompt_id);
    if (!p) throw IntegrityError("verdict for unknown prompt " + v.prompt_id);
    out.push_back(std::move(*p));
  }
  return out;
}

PipelineRun run_pipeline(std::span<const Prompt> source, const PipelineConfig& config,
                         RecordStore& store) {
  config.validate();
  if (source.empty()) throw ValidationError("prompts", "no input prompts");

  PipelineRun run;
  PoolSample pool = sample_pool(source, config.step1.per_category_quota, config.seed);
  run.sample_warnings = std::move(pool.warnings);
  for (const auto& w : run.sample_warnings) {
    store.append_event({{"type", "warning"}, {"step", "sample_pool"}, {"message", w}});
  }

  run.step1 = run_step1(pool.prompts, config.step1, *config.clients, store);
  run.step2 = run_step2(run.step1.kept, config.step2, *config.clients, store,
                        derive_seed(config.seed, {"step2"}));
  run.step3 = run_step3(config.clients->judge(config.judge_id), config.matrix, store, {},
                        config.max_in_flight, &config.clients->log());
  run.report = report_funnel(store);
  run.manifest = Json{{"step1_deferred", run.step1.deferred},
                      {"step2_deferred", run.step2.deferred},
                      {"step3_deferred", run.step3.deferred}};
  return run;
}

}  // namespace prefpipe
