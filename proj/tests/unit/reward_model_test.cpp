#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

#include "prefpipe/errors.hpp"
#include "prefpipe/reward_model.hpp"
#include "test_support.hpp"

namespace prefpipe {
namespace {

using testing::TempDir;

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

RewardModelParams random_params(std::mt19937_64& rng, std::size_t dim, std::size_t hidden) {
  RewardModelParams p = RewardModelParams::init(dim, hidden, rng());
  auto flat = random_vector(rng, p.num_params(), 0.5);
  p.unflatten(flat);
  return p;
}

// Separable toy set: chosen = rejected + a fixed positive direction plus noise.
std::vector<FeaturePair> separable_pairs(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto direction = random_vector(rng, dim);
  std::vector<FeaturePair> out;
  for (std::size_t i = 0; i < n; ++i) {
    FeaturePair p;
    p.rejected = random_vector(rng, dim);
    p.chosen = p.rejected;
    const auto noise = random_vector(rng, dim, 0.1);
    for (std::size_t k = 0; k < dim; ++k) p.chosen[k] += 0.5 * direction[k] + noise[k];
    out.push_back(std::move(p));
  }
  return out;
}

// Loss -----------------------------------------------------------------------

TEST(PairLossTest, ZeroMarginCostsLogTwo) {
  EXPECT_NEAR(neg_log_sigmoid(0.0), std::numbers::ln2, 1e-12);
  const RewardModelParams p = RewardModelParams::init(4, 0, 1);
  const std::vector<double> x{1, 2, 3, 4};
  EXPECT_NEAR(pair_loss(p, x, x).loss, std::numbers::ln2, 1e-12);
}

TEST(PairLossTest, MatchesHighPrecisionOracle) {
  for (double d : {-40.0, -20.0, -3.5, -1e-3, 1e-3, 0.7, 20.0, 40.0, 700.0}) {
    const long double ld = d;
    const long double oracle =
        ld >= 0 ? std::log1p(std::exp(-ld)) : -ld + std::log1p(std::exp(ld));
    const double got = neg_log_sigmoid(d);
    EXPECT_NEAR(got, static_cast<double>(oracle), 1e-15 + 1e-13 * std::fabs(got)) << d;
  }
  // 20 units of margin: loss ~2.06e-9, and it must not collapse to zero.
  EXPECT_NEAR(neg_log_sigmoid(20.0), 2.061153620314381e-9, 1e-21);
  EXPECT_TRUE(std::isfinite(neg_log_sigmoid(-1e6)));
  EXPECT_DOUBLE_EQ(neg_log_sigmoid(-1e6), 1e6);
}

TEST(PairLossTest, AntisymmetricMarginAndLossIdentity) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto p = random_params(rng, 6, i % 2 ? 3 : 0);
    const auto a = random_vector(rng, 6), b = random_vector(rng, 6);
    const PairLoss ab = pair_loss(p, a, b);
    const PairLoss ba = pair_loss(p, b, a);
    EXPECT_NEAR(ab.margin, -ba.margin, 1e-12);
    // softplus(-d) - softplus(d) = -d
    EXPECT_NEAR(ab.loss - ba.loss, -ab.margin, 1e-10);
  }
}

// Finite-difference check of the analytic gradient over many random instances.
void check_gradient(std::size_t hidden) {
  std::mt19937_64 rng(17 + hidden);
  int checked = 0;
  for (int inst = 0; inst < 120; ++inst) {
    const std::size_t dim = 3 + inst % 5;
    const auto p = random_params(rng, dim, hidden);
    const auto plus = random_vector(rng, dim), minus = random_vector(rng, dim);
    const PairLoss pl = pair_loss(p, plus, minus);
    const auto theta = p.flatten();
    std::vector<double> fd(theta.size());
    const double h = 1e-5;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      auto up = theta, down = theta;
      up[k] += h;
      down[k] -= h;
      RewardModelParams pu = p, pd = p;
      pu.unflatten(up);
      pd.unflatten(down);
      fd[k] = (pair_loss(pu, plus, minus).loss - pair_loss(pd, plus, minus).loss) / (2 * h);
    }
    double diff = 0, norm_a = 0, norm_f = 0;
    for (std::size_t k = 0; k < fd.size(); ++k) {
      diff += (pl.gradient[k] - fd[k]) * (pl.gradient[k] - fd[k]);
      norm_a += pl.gradient[k] * pl.gradient[k];
      norm_f += fd[k] * fd[k];
    }
    const double denom = std::max({std::sqrt(norm_a), std::sqrt(norm_f), 1e-8});
    EXPECT_LE(std::sqrt(diff) / denom, 1e-4) << "instance " << inst;
    ++checked;
  }
  EXPECT_GE(checked, 100);
}

TEST(PairLossTest, GradientMatchesFiniteDifferencesLinear) { check_gradient(0); }
TEST(PairLossTest, GradientMatchesFiniteDifferencesHidden) { check_gradient(4); }

TEST(PairLossTest, LinearLossIsConvexAlongLines) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 100; ++i) {
    const auto p = random_params(rng, 5, 0);
    const auto q = random_params(rng, 5, 0);
    const auto a = random_vector(rng, 5), b = random_vector(rng, 5);
    auto mid_flat = p.flatten();
    const auto qf = q.flatten();
    for (std::size_t k = 0; k < mid_flat.size(); ++k) mid_flat[k] = 0.5 * (mid_flat[k] + qf[k]);
    RewardModelParams mid = p;
    mid.unflatten(mid_flat);
    EXPECT_LE(pair_loss(mid, a, b).loss,
              0.5 * (pair_loss(p, a, b).loss + pair_loss(q, a, b).loss) + 1e-12);
  }
}

// Reward ---------------------------------------------------------------------

TEST(RewardTest, WorkedExamples) {
  RewardModelParams p = RewardModelParams::init(3, 0, 0);
  p.weights = {3.0, -1.0, 0.5};
  EXPECT_EQ(reward(p, std::vector<double>{0, 0, 0}), 0.0);
  EXPECT_EQ(reward(p, std::vector<double>{1, 0, 0}), 3.0);
  p.bias = 0.25;
  EXPECT_EQ(reward(p, std::vector<double>{0, 2, 2}), -2.0 + 1.0 + 0.25);
}

TEST(RewardTest, DimensionMismatchAndNonFinite) {
  const RewardModelParams p = RewardModelParams::init(3, 0, 0);
  EXPECT_THROW(reward(p, std::vector<double>{1, 2}), ValidationError);
  EXPECT_THROW(pair_loss(p, std::vector<double>{1, 2, 3}, std::vector<double>{1, 2}),
               ValidationError);
  RewardModelParams q = p;
  q.weights = {1e308, 1e308, 0};
  EXPECT_THROW(reward(q, std::vector<double>{1e308, 1e308, 0}), NumericError);
}

TEST(RewardTest, BiasCancelsInPairs) {
  std::mt19937_64 rng(4);
  auto p = random_params(rng, 4, 2);
  const auto a = random_vector(rng, 4), b = random_vector(rng, 4);
  const double before = pair_loss(p, a, b).loss;
  p.bias += 123.0;
  EXPECT_NEAR(pair_loss(p, a, b).loss, before, 1e-9);
}

// Training -------------------------------------------------------------------

TEST(TrainTest, SeparableSetReachesHighAccuracy) {
  const auto data = separable_pairs(200, 16, 11);
  TrainConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.epochs = 500;
  cfg.seed = 1;
  const TrainResult r = train(data, 16, cfg);
  EXPECT_GE(eval_pairwise_accuracy(r.params, data), 0.95);
  ASSERT_EQ(r.epoch_loss.size(), 500u);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
}

TEST(TrainTest, SinglePairOverfits) {
  const auto data = separable_pairs(1, 8, 5);
  TrainConfig cfg;
  cfg.learning_rate = 1.0;
  cfg.epochs = 2000;
  cfg.batch_size = 1;
  const TrainResult r = train(data, 8, cfg);
  EXPECT_LT(r.epoch_loss.back(), 0.01);
}

TEST(TrainTest, SameSeedIsBitIdentical) {
  const auto data = separable_pairs(120, 10, 21);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 16;
  cfg.hidden = 3;
  cfg.l2 = 1e-3;
  cfg.seed = 77;
  const auto a = train(data, 10, cfg).params.flatten();
  const auto b = train(data, 10, cfg).params.flatten();
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
  cfg.seed = 78;
  EXPECT_NE(train(data, 10, cfg).params.flatten(), a);
}

TEST(TrainTest, EmptyDatasetAndBadConfig) {
  TrainConfig cfg;
  EXPECT_THROW(train(std::vector<FeaturePair>{}, 4, cfg), ValidationError);
  cfg.learning_rate = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.learning_rate = 0.1;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

// Evaluation -----------------------------------------------------------------

TEST(EvalTest, ZeroModelScoresOneHalf) {
  const auto data = separable_pairs(50, 6, 2);
  EXPECT_EQ(eval_pairwise_accuracy(RewardModelParams::init(6, 0, 0), data), 0.5);
}

TEST(EvalTest, RandomModelIsNearChance) {
  // Pairs drawn symmetrically: any fixed model is right half the time.
  std::mt19937_64 rng(8);
  std::vector<FeaturePair> data;
  for (int i = 0; i < 4000; ++i) data.push_back({random_vector(rng, 6), random_vector(rng, 6)});
  const auto p = random_params(rng, 6, 0);
  // sd = 0.5 / sqrt(4000) ~ 0.0079
  EXPECT_NEAR(eval_pairwise_accuracy(p, data), 0.5, 3 * 0.0079);
}

TEST(EvalTest, TextBenchmarkThroughExtractor) {
  const FeatureExtractor fx(64, FeatureMode::kHashedBagOfTokens, 3);
  std::vector<PreferenceExample> rows;
  for (int i = 0; i < 40; ++i) {
    rows.push_back({"t" + std::to_string(i), "p", "question " + std::to_string(i),
                    "careful helpful answer", "rude reply", {}, {}});
  }
  TrainConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.epochs = 20;
  const auto r = train(rows, fx, cfg);
  EXPECT_EQ(eval_pairwise_accuracy(r.params, fx, rows), 1.0);
}

// Features -------------------------------------------------------------------

TEST(FeatureTest, TokenizerLowercasesAndSplits) {
  EXPECT_EQ(tokenize("Hello, World! 42x"), (std::vector<std::string>{"hello", "world", "42x"}));
  EXPECT_EQ(tokenize("naïve café"), (std::vector<std::string>{"naïve", "café"}));
  EXPECT_TRUE(tokenize("  ...  ").empty());
}

TEST(FeatureTest, ExtractorIsDeterministicAndSeeded) {
  const FeatureExtractor a(128, FeatureMode::kHashedBagOfTokens, 1);
  const FeatureExtractor b(128, FeatureMode::kHashedBagOfTokens, 1);
  const FeatureExtractor c(128, FeatureMode::kHashedBagOfTokens, 2);
  const auto fa = a.extract("what is two plus two", "four");
  EXPECT_EQ(fa.size(), 128u);
  EXPECT_EQ(fa, b.extract("what is two plus two", "four"));
  EXPECT_NE(fa, c.extract("what is two plus two", "four"));
  EXPECT_NE(fa, a.extract("what is two plus two", "five"));
  // Prompt and response tokens hash to separate namespaces.
  EXPECT_NE(a.extract("four", ""), a.extract("", "four"));
  const FeatureExtractor ext(8, FeatureMode::kExternal, 0);
  EXPECT_ANY_THROW(ext.extract("x", "y"));
}

TEST(FeatureTest, ExternalModeUsesSuppliedFeatures) {
  const FeatureExtractor ext(2, FeatureMode::kExternal, 0);
  std::vector<PreferenceExample> rows{
      {"t", "p", "x", "c", "r", std::vector<double>{1, 0}, std::vector<double>{0, 1}}};
  const auto pairs = featurize(rows, ext);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].chosen, (std::vector<double>{1, 0}));
  rows[0].rejected_features.reset();
  EXPECT_THROW(featurize(rows, ext), ValidationError);
}

// Persistence ----------------------------------------------------------------

TEST(PersistenceTest, SaveLoadRoundTripIsExact) {
  TempDir dir;
  std::mt19937_64 rng(12);
  auto p = random_params(rng, 7, 2);
  p.feature_seed = 99;
  save_params(dir / "rm.json", p);
  EXPECT_EQ(load_params(dir / "rm.json"), p);
  EXPECT_EQ(params_from_json(to_json(p)), p);
  Json bad = to_json(p);
  bad["format"] = "something-else";
  EXPECT_ANY_THROW(params_from_json(bad));
  EXPECT_ANY_THROW(load_params(dir / "missing.json"));
}

}  // namespace
}  // namespace prefpipe
