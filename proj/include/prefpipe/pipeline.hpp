#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefpipe/clients.hpp"
#include "prefpipe/funnel.hpp"
#include "prefpipe/labeling.hpp"
#include "prefpipe/labeling_server.hpp"
#include "prefpipe/pair_filter.hpp"
#include "prefpipe/prompt_filter.hpp"
#include "prefpipe/response_gen.hpp"
#include "prefpipe/reward_model.hpp"
#include "prefpipe/store.hpp"

namespace prefpipe {

struct FeatureSpec {
  std::size_t dim = 256;
  FeatureMode mode = FeatureMode::kHashedBagOfTokens;
  std::uint64_t seed = 0;

  FeatureExtractor make() const { return FeatureExtractor(dim, mode, seed); }
};

struct BonSpec {
  std::string generator_id;
  std::vector<std::size_t> sizes = {5, 10, 20, 50};
  std::string judge_id;
};

// Everything one pipeline run needs, read from a single JSON config file.
struct PipelineConfig {
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> store_path;
  std::optional<std::filesystem::path> prompts_path;
  std::shared_ptr<ClientRegistry> clients = std::make_shared<ClientRegistry>();
  PromptFilterConfig step1;
  PairingPlan step2;
  std::string judge_id;
  FilterMatrix matrix = FilterMatrix::default_matrix();
  LabelingConfig labeling;
  ServerConfig server;
  TrainConfig train;
  FeatureSpec features;
  BonSpec bon;
  std::size_t max_in_flight = 8;

  // Run before any work: every client id resolves, epsilon is finite, the
  // pairing plan and train config are valid.
  void validate() const;
  // Re-seeds every seeded component from one base seed.
  void set_seed(std::uint64_t seed);
};

// Relative paths in the config resolve against base_dir. Any problem is a
// ConfigError naming the offending key.
PipelineConfig parse_config(const Json& j, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);

// Builds a client registry from the "clients" section.
std::shared_ptr<ClientRegistry> build_clients(const Json& clients);

// Line-delimited {id, category, text, source}; corrupt lines raise
// IntegrityError with the line number.
std::vector<Prompt> read_prompts(const std::filesystem::path& path);
void write_prompts(const std::filesystem::path& path, std::span<const Prompt> prompts);

struct PipelineRun {
  std::vector<std::string> sample_warnings;
  Step1Result step1;
  Step2Result step2;
  Step3Result step3;
  FunnelReport report;
  // Ids that still need work, per step. Rerunning resumes from these.
  Json manifest;

  bool partial() const;
};

// Steps 1-3 end to end; Step 4 is left to the labeling service. An empty
// source raises before anything is written.
PipelineRun run_pipeline(std::span<const Prompt> source, const PipelineConfig& config,
                         RecordStore& store);

// Prompts kept by Step 1 according to the store, in verdict order.
std::vector<Prompt> kept_prompts(const RecordStore& store);

}  // namespace prefpipe
