#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prefpipe/labeling.hpp"
#include "prefpipe/types.hpp"

namespace prefpipe {

// Desk-scale reward model trained with the pairwise logistic loss
//   L = -log sigmoid(r(x, y+) - r(x, y-)).

enum class FeatureMode { kHashedBagOfTokens, kExternal };

std::string_view to_string(FeatureMode m);
FeatureMode feature_mode_from_string(std::string_view s);

// Lowercased ASCII alphanumeric runs; bytes >= 0x80 stay inside tokens so
// UTF-8 words are not split.
std::vector<std::string> tokenize(std::string_view text);

// Maps (prompt, response) to a fixed-length vector.
//
// HashedBagOfTokens: each token lands in one of dim buckets with a +-1 sign,
// both picked from a seeded hash. Prompt and response tokens use separate
// hash namespaces. Each part is scaled by 1/sqrt(token count).
// External: features are supplied by the dataset; extract() refuses.
class FeatureExtractor {
 public:
  FeatureExtractor(std::size_t dim, FeatureMode mode, std::uint64_t seed);

  std::size_t dim() const { return dim_; }
  FeatureMode mode() const { return mode_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<double> extract(std::string_view prompt, std::string_view response) const;

 private:
  std::size_t dim_;
  FeatureMode mode_;
  std::uint64_t seed_;
};

// r(x) = w.x + b                           (hidden == 0)
// r(x) = w.x + v.tanh(W x) + b             (hidden > 0)
struct RewardModelParams {
  std::size_t dim = 0;
  std::size_t hidden = 0;
  FeatureMode mode = FeatureMode::kHashedBagOfTokens;
  std::uint64_t feature_seed = 0;
  std::vector<double> weights;         // w, length dim
  double bias = 0.0;
  std::vector<double> hidden_weights;  // W, hidden x dim, row-major
  std::vector<double> output_weights;  // v, length hidden

  // Zero linear part; the hidden layer (if any) gets small seeded weights so
  // its gradient is not identically zero.
  static RewardModelParams init(std::size_t dim, std::size_t hidden, std::uint64_t seed);

  // Parameter layout: [w, b, W, v].
  std::size_t num_params() const { return dim + 1 + hidden * dim + hidden; }
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);

  bool operator==(const RewardModelParams&) const = default;
};

// Dimension mismatch -> ValidationError; non-finite output -> NumericError.
double reward(const RewardModelParams& params, std::span<const double> features);

// Writes dr/dtheta into grad (length num_params) and returns r.
double reward_with_gradient(const RewardModelParams& params, std::span<const double> features,
                            std::span<double> grad);

// -log sigmoid(d) without overflow for large |d|.
double neg_log_sigmoid(double d);

struct PairLoss {
  double loss = 0.0;
  double margin = 0.0;  // d = r(plus) - r(minus)
  std::vector<double> gradient;
};

// Exact analytic gradient of -log sigmoid(r(plus) - r(minus)). A non-finite
// loss or gradient raises NumericError naming `label`.
PairLoss pair_loss(const RewardModelParams& params, std::span<const double> plus,
                   std::span<const double> minus, std::string_view label = "");

struct FeaturePair {
  std::vector<double> chosen;
  std::vector<double> rejected;
};

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double l2 = 0.0;
  std::size_t hidden = 0;

  void validate() const;
};

struct TrainResult {
  RewardModelParams params;
  // Mean training loss per epoch, measured during the pass.
  std::vector<double> epoch_loss;
};

// Mini-batch gradient descent on the mean pair loss (+ 0.5 * l2 * |theta|^2,
// bias excluded). Single-threaded with a fixed summation order, so the same
// seed gives bit-identical parameters. Returns the last iterate.
TrainResult train(std::span<const FeaturePair> data, std::size_t dim, const TrainConfig& config);

// Featurizes the examples first (External mode uses the supplied features).
std::vector<FeaturePair> featurize(std::span<const PreferenceExample> rows,
                                   const FeatureExtractor& extractor);
TrainResult train(std::span<const PreferenceExample> rows, const FeatureExtractor& extractor,
                  const TrainConfig& config);

// Fraction of pairs with r(chosen) > r(rejected); exact ties count 0.5.
double eval_pairwise_accuracy(const RewardModelParams& params,
                              std::span<const FeaturePair> benchmark);
double eval_pairwise_accuracy(const RewardModelParams& params,
                              const FeatureExtractor& extractor,
                              std::span<const PreferenceExample> benchmark);

// JSON with {"format": "prefpipe-reward-model", "version": 1, ...}. Doubles
// are written with round-trip precision.
Json to_json(const RewardModelParams& p);
RewardModelParams params_from_json(const Json& j);
void save_params(const std::filesystem::path& path, const RewardModelParams& p);
RewardModelParams load_params(const std::filesystem::path& path);

}  // namespace prefpipe
