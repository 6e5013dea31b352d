#include "prefpipe/reward_model.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "prefpipe/errors.hpp"
#include "prefpipe/util.hpp"

namespace prefpipe {

namespace {

constexpr const char* kFormat = "prefpipe-reward-model";
constexpr int kVersion = 1;

void check_dim(const RewardModelParams& p, std::span<const double> x) {
  if (x.size() != p.dim) {
    throw ValidationError("features", "length " + std::to_string(x.size()) +
                                          " does not match model dim " +
                                          std::to_string(p.dim));
  }
}

void add_tokens(std::vector<double>& out, std::string_view text, std::string_view ns,
                std::uint64_t seed) {
  const auto tokens = tokenize(text);
  if (tokens.empty()) return;
  const double scale = 1.0 / std::sqrt(static_cast<double>(tokens.size()));
  const std::uint64_t base = fnv1a(ns, fnv1a_u64(seed));
  for (const auto& tok : tokens) {
    const std::uint64_t h = mix64(fnv1a(tok, base));
    const std::size_t bucket = static_cast<std::size_t>((h >> 1) % out.size());
    out[bucket] += (h & 1U) ? scale : -scale;
  }
}

}  // namespace

std::string_view to_string(FeatureMode m) {
  return m == FeatureMode::kHashedBagOfTokens ? "hashed_bag_of_tokens" : "external";
}

FeatureMode feature_mode_from_string(std::string_view s) {
  if (s == "hashed_bag_of_tokens" || s == "hashed") return FeatureMode::kHashedBagOfTokens;
  if (s == "external") return FeatureMode::kExternal;
  throw ValidationError("mode", "unknown feature mode '" + std::string(s) + "'");
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

FeatureExtractor::FeatureExtractor(std::size_t dim, FeatureMode mode, std::uint64_t seed)
    : dim_(dim), mode_(mode), seed_(seed) {
  if (dim == 0) throw ValidationError("dim", "must be positive");
}

std::vector<double> FeatureExtractor::extract(std::string_view prompt,
                                              std::string_view response) const {
  if (mode_ == FeatureMode::kExternal) {
    throw ValidationError("mode", "external features must be supplied with the data");
  }
  std::vector<double> out(dim_, 0.0);
  add_tokens(out, prompt, "prompt", seed_);
  add_tokens(out, response, "response", seed_);
  return out;
}

// Params ------------------------------------------------------------------------

RewardModelParams RewardModelParams::init(std::size_t dim, std::size_t hidden,
                                          std::uint64_t seed) {
  RewardModelParams p;
  p.dim = dim;
  p.hidden = hidden;
  p.weights.assign(dim, 0.0);
  if (hidden > 0) {
    std::mt19937_64 rng(mix64(seed ^ 0x68696464656eULL));
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    p.hidden_weights.resize(hidden * dim);
    for (auto& w : p.hidden_weights) w = scale * standard_normal(rng);
    p.output_weights.resize(hidden);
    for (auto& v : p.output_weights) v = 0.1 * standard_normal(rng);
  }
  return p;
}

std::vector<double> RewardModelParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(num_params());
  flat.insert(flat.end(), weights.begin(), weights.end());
  flat.push_back(bias);
  flat.insert(flat.end(), hidden_weights.begin(), hidden_weights.end());
  flat.insert(flat.end(), output_weights.begin(), output_weights.end());
  return flat;
}

void RewardModelParams::unflatten(std::span<const double> flat) {
  if (flat.size() != num_params()) {
    throw ValidationError("params", "flat vector has " + std::to_string(flat.size()) +
                                        " entries, expected " + std::to_string(num_params()));
  }
  auto it = flat.begin();
  weights.assign(it, it + dim);
  it += dim;
  bias = *it++;
  hidden_weights.assign(it, it + hidden * dim);
  it += hidden * dim;
  output_weights.assign(it, it + hidden);
}

double reward(const RewardModelParams& p, std::span<const double> x) {
  check_dim(p, x);
  double r = p.bias;
  for (std::size_t j = 0; j < p.dim; ++j) r += p.weights[j] * x[j];
  for (std::size_t k = 0; k < p.hidden; ++k) {
    const double* row = p.hidden_weights.data() + k * p.dim;
    double z = 0.0;
    for (std::size_t j = 0; j < p.dim; ++j) z += row[j] * x[j];
    r += p.output_weights[k] * std::tanh(z);
  }
  if (!std::isfinite(r)) throw NumericError("reward is not finite");
  return r;
}

double reward_with_gradient(const RewardModelParams& p, std::span<const double> x,
                            std::span<double> grad) {
  check_dim(p, x);
  if (grad.size() != p.num_params()) {
    throw ValidationError("gradient", "buffer has wrong length");
  }
  double r = p.bias;
  for (std::size_t j = 0; j < p.dim; ++j) {
    r += p.weights[j] * x[j];
    grad[j] = x[j];
  }
  grad[p.dim] = 1.0;
  const std::size_t w_off = p.dim + 1;
  const std::size_t v_off = w_off + p.hidden * p.dim;
  for (std::size_t k = 0; k < p.hidden; ++k) {
    const double* row = p.hidden_weights.data() + k * p.dim;
    double z = 0.0;
    for (std::size_t j = 0; j < p.dim; ++j) z += row[j] * x[j];
    const double h = std::tanh(z);
    r += p.output_weights[k] * h;
    grad[v_off + k] = h;
    const double dz = p.output_weights[k] * (1.0 - h * h);
    for (std::size_t j = 0; j < p.dim; ++j) grad[w_off + k * p.dim + j] = dz * x[j];
  }
  if (!std::isfinite(r)) throw NumericError("reward is not finite");
  return r;
}

double neg_log_sigmoid(double d) {
  // -log sigmoid(d) = log(1 + exp(-d))
  if (d >= 0.0) return std::log1p(std::exp(-d));
  return -d + std::log1p(std::exp(d));
}

PairLoss pair_loss(const RewardModelParams& params, std::span<const double> plus,
                   std::span<const double> minus, std::string_view label) {
  const std::size_t n = params.num_params();
  std::vector<double> g_plus(n), g_minus(n);
  const double r_plus = reward_with_gradient(params, plus, g_plus);
  const double r_minus = reward_with_gradient(params, minus, g_minus);
  PairLoss out;
  out.margin = r_plus - r_minus;
  out.loss = neg_log_sigmoid(out.margin);
  // dL/dd = -sigmoid(-d)
  const double s_neg = out.margin >= 0.0 ? std::exp(-out.margin) / (1.0 + std::exp(-out.margin))
                                         : 1.0 / (1.0 + std::exp(out.margin));
  out.gradient.resize(n);
  bool finite = std::isfinite(out.loss);
  for (std::size_t i = 0; i < n; ++i) {
    out.gradient[i] = -s_neg * (g_plus[i] - g_minus[i]);
    finite = finite && std::isfinite(out.gradient[i]);
  }
  if (!finite) {
    throw NumericError("non-finite pair loss or gradient" +
                       (label.empty() ? std::string() : " for pair " + std::string(label)));
  }
  return out;
}

// Training ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be a positive finite number");
  }
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ConfigError("l2 must be non-negative");
}

TrainResult train(std::span<const FeaturePair> data, std::size_t dim,
                  const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw ValidationError("dataset", "training set is empty");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].chosen.size() != dim || data[i].rejected.size() != dim) {
      throw ValidationError("features", "pair " + std::to_string(i) + " has the wrong length");
    }
  }

  TrainResult result;
  RewardModelParams params = RewardModelParams::init(dim, config.hidden, config.seed);
  std::vector<double> theta = params.flatten();
  const std::size_t n_params = theta.size();
  std::vector<double> grad(n_params);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix64(config.seed));

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    seeded_shuffle(order, rng);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const auto& pair = data[order[b]];
        const PairLoss pl =
            pair_loss(params, pair.chosen, pair.rejected, std::to_string(order[b]));
        epoch_sum += pl.loss;
        for (std::size_t i = 0; i < n_params; ++i) grad[i] += pl.gradient[i];
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = 0; i < n_params; ++i) {
        double g = grad[i] * inv;
        if (i != dim) g += config.l2 * theta[i];  // bias is not regularized
        theta[i] -= config.learning_rate * g;
      }
      params.unflatten(theta);
    }
    const double mean = epoch_sum / static_cast<double>(data.size());
    if (!std::isfinite(mean)) {
      throw NumericError("training loss became non-finite at epoch " + std::to_string(epoch));
    }
    result.epoch_loss.push_back(mean);
  }
  result.params = std::move(params);
  return result;
}

std::vector<FeaturePair> featurize(std::span<const PreferenceExample> rows,
                                   const FeatureExtractor& extractor) {
  std::vector<FeaturePair> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (extractor.mode() == FeatureMode::kExternal) {
      if (!r.chosen_features || !r.rejected_features) {
        throw ValidationError("chosen_features",
                              "row " + std::to_string(i) + " lacks external features");
      }
      out.push_back({*r.chosen_features, *r.rejected_features});
    } else {
      out.push_back({extractor.extract(r.prompt, r.chosen), extractor.extract(r.prompt, r.rejected)});
    }
  }
  return out;
}

TrainResult train(std::span<const PreferenceExample> rows, const FeatureExtractor& extractor,
                  const TrainConfig& config) {
  if (rows.empty()) throw ValidationError("dataset", "training set is empty");
  const auto pairs = featurize(rows, extractor);
  TrainResult r = train(pairs, extractor.dim(), config);
  r.params.mode = extractor.mode();
  r.params.feature_seed = extractor.seed();
  return r;
}

double eval_pairwise_accuracy(const RewardModelParams& params,
                              std::span<const FeaturePair> benchmark) {
  if (benchmark.empty()) throw ValidationError("benchmark", "benchmark is empty");
  double score = 0.0;
  for (const auto& pair : benchmark) {
    const double a = reward(params, pair.chosen);
    const double b = reward(params, pair.rejected);
    if (a > b) {
      score += 1.0;
    } else if (a == b) {
      score += 0.5;
    }
  }
  return score / static_cast<double>(benchmark.size());
}

double eval_pairwise_accuracy(const RewardModelParams& params,
                              const FeatureExtractor& extractor,
                              std::span<const PreferenceExample> benchmark) {
  const auto pairs = featurize(benchmark, extractor);
  return eval_pairwise_accuracy(params, pairs);
}

// Persistence ----------------------------------------------------------------------------

Json to_json(const RewardModelParams& p) {
  return Json{{"format", kFormat},
              {"version", kVersion},
              {"dim", p.dim},
              {"hidden", p.hidden},
              {"mode", to_string(p.mode)},
              {"seed", p.feature_seed},
              {"weights", p.weights},
              {"bias", p.bias},
              {"hidden_weights", p.hidden_weights},
              {"output_weights", p.output_weights}};
}

RewardModelParams params_from_json(const Json& j) {
  if (j.value("format", "") != kFormat) {
    throw ValidationError("format", "not a reward model file");
  }
  if (j.value("version", 0) != kVersion) {
    throw ValidationError("version", "unsupported version " + j.value("version", Json()).dump());
  }
  RewardModelParams p;
  p.dim = j.at("dim").get<std::size_t>();
  p.hidden = j.at("hidden").get<std::size_t>();
  p.mode = feature_mode_from_string(j.at("mode").get<std::string>());
  p.feature_seed = j.at("seed").get<std::uint64_t>();
  p.weights = j.at("weights").get<std::vector<double>>();
  p.bias = j.at("bias").get<double>();
  p.hidden_weights = j.at("hidden_weights").get<std::vector<double>>();
  p.output_weights = j.at("output_weights").get<std::vector<double>>();
  if (p.weights.size() != p.dim || p.hidden_weights.size() != p.hidden * p.dim ||
      p.output_weights.size() != p.hidden) {
    throw ValidationError("weights", "array sizes do not match dim/hidden");
  }
  for (double v : p.flatten()) {
    if (!std::isfinite(v)) throw ValidationError("weights", "non-finite entry");
  }
  return p;
}

void save_params(const std::filesystem::path& path, const RewardModelParams& p) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IntegrityError("cannot write " + path.string());
  out << to_json(p).dump(1) << '\n';
}

RewardModelParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IntegrityError("cannot read " + path.string());
  try {
    return params_from_json(Json::parse(in));
  } catch (const Json::exception& e) {
    throw IntegrityError(path.string() + ": " + e.what());
  }
}

}  // namespace prefpipe
