// prefpipe: run pipeline steps against a shared store, serve the labeling
// API, train reward models and compare them with Best-of-N.
//
// Exit codes: 0 success, 1 validation/config error, 2 partial failure (a
// manifest listing the deferred items is written next to the store).

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prefpipe/bon.hpp"
#include "prefpipe/errors.hpp"
#include "prefpipe/funnel.hpp"
#include "prefpipe/labeling.hpp"
#include "prefpipe/labeling_server.hpp"
#include "prefpipe/pipeline.hpp"
#include "prefpipe/reward_model.hpp"
#include "prefpipe/store.hpp"
#include "prefpipe/util.hpp"

namespace fs = std::filesystem;
using namespace prefpipe;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitPartial = 2;

struct CommonOpts {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string store;
  std::string prompts;
  std::string manifest;
  std::string calls;
};

struct Context {
  PipelineConfig config;
  fs::path store_path;
};

Context load(const CommonOpts& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  Context ctx{load_config(o.config), {}};
  if (o.seed) ctx.config.set_seed(*o.seed);
  if (!o.store.empty()) {
    ctx.store_path = o.store;
  } else if (ctx.config.store_path) {
    ctx.store_path = *ctx.config.store_path;
  } else {
    throw ConfigError("no store path: set \"store\" in the config or pass --store");
  }
  if (!o.prompts.empty()) ctx.config.prompts_path = fs::path(o.prompts);
  ctx.config.validate();
  return ctx;
}

std::vector<Prompt> load_prompts(const PipelineConfig& cfg) {
  if (!cfg.prompts_path) throw ConfigError("no prompt file: set \"prompts\" or pass --prompts");
  return read_prompts(*cfg.prompts_path);
}

fs::path sibling(const fs::path& store, const std::string& suffix) {
  return fs::path(store.string() + suffix);
}

void write_calls(const CommonOpts& o, const fs::path& store, const CallLog& log) {
  const fs::path path = o.calls.empty() ? sibling(store, ".calls.jsonl") : fs::path(o.calls);
  std::ofstream out(path, std::ios::app);
  if (!out) throw IntegrityError("cannot write call log " + path.string());
  for (const auto& rec : log.to_json()) out << rec.dump() << '\n';
}

// Writes the manifest when anything was deferred, removes a stale one
// otherwise. Returns the exit code.
int finish(const CommonOpts& o, const fs::path& store, const std::string& command,
           const Json& deferred) {
  const fs::path path = o.manifest.empty() ? sibling(store, ".manifest.json") : fs::path(o.manifest);
  bool partial = false;
  for (const auto& [step, entry] : deferred.items()) {
    if (!entry.at("ids").empty()) partial = true;
  }
  if (!partial) {
    std::error_code ec;
    fs::remove(path, ec);
    return kExitOk;
  }
  Json manifest{{"command", command}, {"store", store.string()}, {"deferred", deferred},
                {"resume", "rerun the same command; completed items are skipped"}};
  std::ofstream(path) << manifest.dump(2) << '\n';
  std::cerr << "partial failure; manifest written to " << path.string() << '\n';
  return kExitPartial;
}

Json deferred_entry(const std::vector<std::string>& ids, const std::vector<std::string>& reasons) {
  return Json{{"ids", ids}, {"reasons", reasons}};
}

void print_stage(const StageCount& s) {
  std::cout << s.stage_name << ": " << s.count_in << " -> " << s.count_out;
  if (s.pending) std::cout << " (" << s.pending << " pending)";
  std::cout << '\n';
}

int cmd_step1(const CommonOpts& o) {
  Context ctx = load(o);
  const auto source = load_prompts(ctx.config);
  if (source.empty()) throw ValidationError("prompts", "no input prompts");
  StoreLock lock(ctx.store_path);
  RecordStore store(ctx.store_path, ctx.config.seed);
  PoolSample pool = sample_pool(source, ctx.config.step1.per_category_quota, ctx.config.seed);
  for (const auto& w : pool.warnings) std::cerr << "warning: " << w << '\n';
  auto r = run_step1(pool.prompts, ctx.config.step1, *ctx.config.clients, store);
  print_stage(r.stage);
  write_calls(o, ctx.store_path, ctx.config.clients->log());
  return finish(o, ctx.store_path, "step1",
                Json{{"step1", deferred_entry(r.deferred, r.deferred_reasons)}});
}

int cmd_step2(const CommonOpts& o) {
  Context ctx = load(o);
  StoreLock lock(ctx.store_path);
  RecordStore store(ctx.store_path, ctx.config.seed);
  const auto kept = kept_prompts(store);
  if (kept.empty()) throw ValidationError("store", "no prompts kept by step1; run step1 first");
  auto r = run_step2(kept, ctx.config.step2, *ctx.config.clients, store,
                     derive_seed(ctx.config.seed, {"step2"}));
  print_stage(r.stage);
  if (r.shortfall) std::cerr << "shortfall: " << r.shortfall << " pair slots unfilled\n";
  write_calls(o, ctx.store_path, ctx.config.clients->log());
  return finish(o, ctx.store_path, "step2",
                Json{{"step2", deferred_entry(r.deferred, r.deferred_reasons)}});
}

int cmd_step3(const CommonOpts& o) {
  Context ctx = load(o);
  StoreLock lock(ctx.store_path);
  RecordStore store(ctx.store_path, ctx.config.seed);
  auto r = run_step3(ctx.config.clients->judge(ctx.config.judge_id), ctx.config.matrix, store, {},
                     ctx.config.max_in_flight, &ctx.config.clients->log());
  print_stage(r.stage);
  write_calls(o, ctx.store_path, ctx.config.clients->log());
  return finish(o, ctx.store_path, "step3",
                Json{{"step3", deferred_entry(r.deferred, r.deferred_reasons)}});
}

int cmd_run(const CommonOpts& o) {
  Context ctx = load(o);
  const auto source = load_prompts(ctx.config);
  StoreLock lock(ctx.store_path);
  RecordStore store(ctx.store_path, ctx.config.seed);
  PipelineRun run = run_pipeline(source, ctx.config, store);
  for (const auto& w : run.sample_warnings) std::cerr << "warning: " << w << '\n';
  std::cout << to_text(run.report);
  write_calls(o, ctx.store_path, ctx.config.clients->log());
  return finish(o, ctx.store_path, "run",
                Json{{"step1", deferred_entry(run.step1.deferred, run.step1.deferred_reasons)},
                     {"step2", deferred_entry(run.step2.deferred, run.step2.deferred_reasons)},
                     {"step3", deferred_entry(run.step3.deferred, run.step3.deferred_reasons)}});
}

LabelingServer* g_server = nullptr;

extern "C" void on_signal(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(const CommonOpts& o, const std::string& addr) {
  Context ctx = load(o);
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw ValidationError("addr", "expected host:port, got " + addr);
  const std::string host = addr.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(addr.substr(colon + 1));
  } catch (const std::exception&) {
    throw ValidationError("addr", "bad port in " + addr);
  }
  StoreLock lock(ctx.store_path);
  RecordStore store(ctx.store_path, ctx.config.seed);
  LabelQueue queue(store, ctx.config.labeling);
  LabelingServer server(queue, store, ctx.config.server);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "serving " << store.path()->string() << " on " << host << ':' << port << '\n';
  const bool ok = server.listen(host, port);
  g_server = nullptr;
  if (!ok) throw ConfigError("could not listen on " + addr);
  return kExitOk;
}

struct TrainOpts {
  std::string data;
  std::string out;
  std::string eval_data;
  std::optional<double> lr;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> hidden;
  std::optional<std::size_t> dim;
};

int cmd_train(const CommonOpts& o, const TrainOpts& t) {
  PipelineConfig cfg;
  if (!o.config.empty()) cfg = load_config(o.config);
  if (o.seed) cfg.set_seed(*o.seed);
  if (t.lr) cfg.train.learning_rate = *t.lr;
  if (t.epochs) cfg.train.epochs = *t.epochs;
  if (t.hidden) cfg.train.hidden = *t.hidden;
  if (t.dim) cfg.features.dim = *t.dim;
  cfg.train.validate();
  const auto rows = read_preference_jsonl(t.data);
  if (rows.empty()) throw ValidationError("data", "no preference rows in " + t.data);
  const auto extractor = cfg.features.make();
  const auto result = train(rows, extractor, cfg.train);
  save_params(t.out, result.params);
  std::cout << "trained on " << rows.size() << " pairs, final loss "
            << (result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back()) << '\n';
  std::cout << "train accuracy " << eval_pairwise_accuracy(result.params, extractor, rows) << '\n';
  if (!t.eval_data.empty()) {
    const auto bench = read_preference_jsonl(t.eval_data);
    std::cout << "eval accuracy " << eval_pairwise_accuracy(result.params, extractor, bench)
              << '\n';
  }
  return kExitOk;
}

int cmd_eval(const std::string& model, const std::string& data) {
  const auto params = load_params(model);
  const auto rows = read_preference_jsonl(data);
  if (rows.empty()) throw ValidationError("data", "no preference rows in " + data);
  const FeatureExtractor extractor(params.dim, params.mode, params.feature_seed);
  std::cout << "accuracy " << eval_pairwise_accuracy(params, extractor, rows) << " over "
            << rows.size() << " pairs\n";
  return kExitOk;
}

std::vector<std::size_t> parse_sizes(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 1) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ValidationError("n", "expected positive integers, got '" + item + "'");
    }
  }
  if (out.empty()) throw ValidationError("n", "no sizes given");
  return out;
}

int cmd_bon(const CommonOpts& o, const std::string& rm_a, const std::string& rm_b,
            const std::string& sizes_csv, const std::string& csv_out) {
  Context ctx = load(o);
  const auto& cfg = ctx.config;
  if (cfg.bon.generator_id.empty()) throw ConfigError("bon.generator is required");
  if (cfg.bon.judge_id.empty()) throw ConfigError("bon.judge is required");
  const auto prompts = load_prompts(cfg);
  if (prompts.empty()) throw ValidationError("prompts", "no input prompts");
  const auto sizes = sizes_csv.empty() ? cfg.bon.sizes : parse_sizes(sizes_csv);
  const std::size_t max_n = *std::max_element(sizes.begin(), sizes.end());

  std::map<std::string, Prompt> by_id;
  for (const auto& p : prompts) by_id[p.id] = p;
  const auto candidates =
      generate_candidates(prompts, cfg.clients->generator(cfg.bon.generator_id), max_n,
                          derive_seed(cfg.seed, {"bon"}), cfg.max_in_flight, &cfg.clients->log());
  const RewardFn reward_a = model_reward(load_params(rm_a));
  const RewardFn reward_b = model_reward(load_params(rm_b));
  const Comparator cmp = judge_comparator(cfg.clients->judge(cfg.bon.judge_id), &cfg.clients->log());

  std::ostringstream csv;
  csv << "n,gain,win_rate,wins_a,wins_b,ties,z\n";
  std::cout << std::left << std::setw(6) << "n" << std::setw(10) << "gain" << std::setw(10)
            << "win_rate" << std::setw(8) << "wins_a" << std::setw(8) << "wins_b" << std::setw(8)
            << "ties" << "z\n";
  for (auto n : sizes) {
    const auto picks_a = bon_pick(candidates, by_id, n, reward_a);
    const auto picks_b = bon_pick(candidates, by_id, n, reward_b);
    const WinRate w = win_rate(responses_of(picks_a), responses_of(picks_b), by_id, cmp);
    const double gain = bon_gain(static_cast<long long>(n));
    std::cout << std::left << std::setw(6) << n << std::setw(10) << std::setprecision(4) << gain
              << std::setw(10) << w.rate << std::setw(8) << w.wins_a << std::setw(8) << w.wins_b
              << std::setw(8) << w.ties << w.z_score << '\n';
    csv << n << ',' << std::setprecision(10) << gain << ',' << w.rate << ',' << w.wins_a << ','
        << w.wins_b << ',' << w.ties << ',' << w.z_score << '\n';
  }
  if (!csv_out.empty()) {
    std::ofstream(csv_out) << csv.str();
  } else {
    std::cout << '\n' << csv.str();
  }
  write_calls(o, ctx.store_path, cfg.clients->log());
  return kExitOk;
}

int cmd_funnel(const std::string& store_path, const std::string& csv_out) {
  if (!fs::exists(store_path)) throw ValidationError("store", "no store at " + store_path);
  RecordStore store{fs::path(store_path)};
  const FunnelReport report = report_funnel(store);
  std::cout << to_text(report);
  if (!csv_out.empty()) {
    std::ofstream(csv_out) << to_csv(report);
  } else {
    std::cout << '\n' << to_csv(report);
  }
  return kExitOk;
}

int cmd_export(const std::string& store_path, const std::string& out) {
  if (!fs::exists(store_path)) throw ValidationError("store", "no store at " + store_path);
  RecordStore store{fs::path(store_path)};
  const auto rows = export_training_set(store);
  write_preference_jsonl(out, rows);
  std::cout << "exported " << rows.size() << " preference pairs to " << out << '\n';
  return kExitOk;
}

int cmd_validate(const CommonOpts& o) {
  Context ctx = load(o);
  if (ctx.config.prompts_path) {
    const auto prompts = read_prompts(*ctx.config.prompts_path);
    std::cout << prompts.size() << " prompts ok\n";
  }
  std::cout << "config ok\n";
  return kExitOk;
}

void add_common(CLI::App* sub, CommonOpts& o, bool needs_config = true) {
  auto* c = sub->add_option("--config", o.config, "Pipeline config (JSON)");
  if (needs_config) c->required();
  sub->add_option("--seed", o.seed, "Override the config seed");
  sub->add_option("--store", o.store, "Store file (overrides config)");
  sub->add_option("--prompts", o.prompts, "Prompt file (overrides config)");
  sub->add_option("--manifest", o.manifest, "Manifest path for partial runs");
  sub->add_option("--calls", o.calls, "Audit log of client calls (appended)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference data pipeline"};
  app.require_subcommand(1);
  CommonOpts o;

  auto* step1 = app.add_subcommand("step1", "Filter prompts by proxy-reward margin");
  auto* step2 = app.add_subcommand("step2", "Generate response pairs for kept prompts");
  auto* step3 = app.add_subcommand("step3", "Judge-score pairs and filter them");
  auto* run = app.add_subcommand("run", "Run steps 1-3 and print the funnel");
  auto* validate_cmd = app.add_subcommand("validate", "Check a config and its prompt file");
  for (auto* sub : {step1, step2, step3, run, validate_cmd}) add_common(sub, o);

  auto* serve = app.add_subcommand("serve", "Serve the labeling API");
  add_common(serve, o);
  std::string addr = "127.0.0.1:8080";
  serve->add_option("--addr", addr, "host:port")->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "Train a reward model on exported pairs");
  add_common(train_cmd, o, false);
  TrainOpts t;
  train_cmd->add_option("--data", t.data, "Preference JSONL")->required();
  train_cmd->add_option("--out", t.out, "Output params file")->required();
  train_cmd->add_option("--eval-data", t.eval_data, "Held-out preference JSONL");
  train_cmd->add_option("--lr", t.lr);
  train_cmd->add_option("--epochs", t.epochs);
  train_cmd->add_option("--hidden", t.hidden);
  train_cmd->add_option("--dim", t.dim);

  auto* eval_cmd = app.add_subcommand("eval", "Pairwise accuracy of a reward model");
  std::string model, eval_data;
  eval_cmd->add_option("--model", model)->required();
  eval_cmd->add_option("--data", eval_data)->required();

  auto* bon = app.add_subcommand("bon", "Best-of-N win rate of two reward models");
  add_common(bon, o);
  std::string rm_a, rm_b, sizes, bon_csv;
  bon->add_option("--rm-a", rm_a, "Params of model A")->required();
  bon->add_option("--rm-b", rm_b, "Params of model B")->required();
  bon->add_option("--n", sizes, "Comma-separated candidate counts (default from config)");
  bon->add_option("--csv", bon_csv, "Write the gain/win-rate CSV here");

  auto* funnel = app.add_subcommand("funnel", "Report stage retention for a store");
  std::string funnel_store, funnel_csv;
  funnel->add_option("--store", funnel_store)->required();
  funnel->add_option("--csv", funnel_csv, "Write the CSV here");

  auto* export_cmd = app.add_subcommand("export", "Write HumanKept pairs as preference JSONL");
  std::string export_store, export_out;
  export_cmd->add_option("--store", export_store)->required();
  export_cmd->add_option("--out", export_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*step1) return cmd_step1(o);
    if (*step2) return cmd_step2(o);
    if (*step3) return cmd_step3(o);
    if (*run) return cmd_run(o);
    if (*validate_cmd) return cmd_validate(o);
    if (*serve) return cmd_serve(o, addr);
    if (*train_cmd) return cmd_train(o, t);
    if (*eval_cmd) return cmd_eval(model, eval_data);
    if (*bon) return cmd_bon(o, rm_a, rm_b, sizes, bon_csv);
    if (*funnel) return cmd_funnel(funnel_store, funnel_csv);
    if (*export_cmd) return cmd_export(export_store, export_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  }
  return kExitOk;
}
