#include <gtest/gtest.h>

#include "scenestress/classical.hpp"
#include "scenestress/synthgen.hpp"
#include "world.hpp"

using namespace scenestress;

namespace {

// Frame-level occupancy vectors drawn straight from the generator, class-balanced.
std::vector<FeatureTrainingSample> generator_samples(const GeneratorConfig& cfg, std::size_t per_class,
                                                     std::uint64_t seed) {
  std::vector<FeatureTrainingSample> out;
  for (std::size_t r = 0; r < cfg.regimes.size(); ++r) {
    const double seconds = static_cast<double>(per_class - 1) / cfg.fps;
    const auto s = generate_session(derive_seed(seed, std::to_string(r)), "d", {{r, 0.0, seconds}}, cfg);
    for (const auto& m : s.masks) out.push_back({occupancy_vector(m), cfg.regimes[r].target});
  }
  return out;
}

FeatureClassifierSpec spec(FeatureClassifierKind k, std::uint64_t seed = 1) {
  FeatureClassifierSpec s;
  s.kind = k;
  s.seed = seed;
  if (k == FeatureClassifierKind::tree_ensemble) s.hyperparameters["n_trees"] = 50;
  return s;
}

std::vector<OccupancyVector> xs(const std::vector<FeatureTrainingSample>& v) {
  std::vector<OccupancyVector> out;
  for (const auto& s : v) out.push_back(s.x);
  return out;
}

double accuracy(const TrainedFeatureClassifier& m, const std::vector<FeatureTrainingSample>& v) {
  const auto p = m.predict(xs(v));
  std::size_t ok = 0;
  for (std::size_t i = 0; i < v.size(); ++i) ok += p[i].label == v[i].y;
  return static_cast<double>(ok) / static_cast<double>(v.size());
}

const FeatureClassifierKind kKinds[] = {FeatureClassifierKind::tree_ensemble,
                                        FeatureClassifierKind::linear_max_margin,
                                        FeatureClassifierKind::rbf_max_margin};

}  // namespace

TEST(ClassicalSpec, DefaultsAndValidation) {
  FeatureClassifierSpec s;
  EXPECT_EQ(s.resolved().at("n_trees"), 200);
  s.hyperparameters["C"] = 1.0;
  EXPECT_THROW(s.resolved(), ConfigError);
  s = spec(FeatureClassifierKind::rbf_max_margin);
  s.hyperparameters["C"] = -1;
  EXPECT_THROW(s.resolved(), ConfigError);
  EXPECT_EQ(parse_classifier_kind("rf"), FeatureClassifierKind::tree_ensemble);
  EXPECT_THROW(parse_classifier_kind("knn"), ConfigError);
}

TEST(Classical, SeparableTrainingAccuracyIsOne) {
  warnings_enabled() = false;
  const auto train = generator_samples(GeneratorConfig::standard(), 60, 1);
  for (auto k : kKinds) {
    const auto m = TrainedFeatureClassifier::train(spec(k), train);
    EXPECT_EQ(m.metadata().at("train_accuracy").get<double>(), 1.0) << to_string(k);
    EXPECT_EQ(m.metadata().at("seed").get<std::uint64_t>(), 1u);
  }
}

TEST(Classical, EveryBackendBeatsRandomByPointTwo) {
  auto cfg = GeneratorConfig::standard();
  cfg.ambiguous_fraction = 0.2;
  const auto train = generator_samples(cfg, 150, 2), test = generator_samples(cfg, 150, 3);
  for (auto k : kKinds) {
    const auto m = TrainedFeatureClassifier::train(spec(k), train);
    EXPECT_GE(accuracy(m, test), 1.0 / 3.0 + 0.2) << to_string(k);
  }
}

TEST(Classical, TreeEnsembleNearBayesRate) {
  auto cfg = GeneratorConfig::placement_free();
  cfg.ambiguous_fraction = 0.4;
  const double bayes = bayes_accuracy(cfg.regimes, cfg.ambiguous_fraction, cfg.object_cells);
  const auto train = generator_samples(cfg, 1000, 4);
  auto test = generator_samples(cfg, 334, 5);
  test.resize(1000);
  const auto m = TrainedFeatureClassifier::train(spec(FeatureClassifierKind::tree_ensemble), train);
  EXPECT_NEAR(accuracy(m, test), bayes, 0.05) << "bayes " << bayes;
}

TEST(Classical, DeterministicAndPure) {
  const auto train = generator_samples(GeneratorConfig::standard(), 40, 6);
  const auto probe = xs(generator_samples(GeneratorConfig::standard(), 20, 7));
  for (auto k : kKinds) {
    const auto a = TrainedFeatureClassifier::train(spec(k, 9), train);
    const auto b = TrainedFeatureClassifier::train(spec(k, 9), train);
    const auto pa = a.predict(probe), pa2 = a.predict(probe), pb = b.predict(probe);
    for (std::size_t i = 0; i < probe.size(); ++i) {
      EXPECT_EQ(pa[i].label, pb[i].label);
      EXPECT_EQ(pa[i].scores, pa2[i].scores);
    }
  }
}

TEST(Classical, ScoresFormSimplexAndZeroVectorIsTotal) {
  const auto train = generator_samples(GeneratorConfig::standard(), 40, 8);
  OccupancyVector zero{};
  for (auto k : kKinds) {
    const auto m = TrainedFeatureClassifier::train(spec(k), train);
    const auto p = m.predict(std::vector<OccupancyVector>{zero, train.front().x});
    for (const auto& q : p) {
      double s = 0.0;
      for (double v : q.scores) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Classical, TreeEnsembleScaleInvariant) {
  const auto train = generator_samples(GeneratorConfig::standard(), 50, 10);
  auto scaled = train;
  for (auto& s : scaled)
    for (auto& v : s.x) v *= 4.0;  // a power of two keeps float conversion exact
  const auto probe = generator_samples(GeneratorConfig::standard(), 30, 11);
  auto probe_scaled = probe;
  for (auto& s : probe_scaled)
    for (auto& v : s.x) v *= 4.0;
  const auto a = TrainedFeatureClassifier::train(spec(FeatureClassifierKind::tree_ensemble), train);
  const auto b = TrainedFeatureClassifier::train(spec(FeatureClassifierKind::tree_ensemble), scaled);
  const auto pa = a.predict(xs(probe)), pb = b.predict(xs(probe_scaled));
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].label, pb[i].label);
}

TEST(Classical, MemorizesTrainingVectors) {
  const auto train = generator_samples(GeneratorConfig::standard(), 30, 12);
  const auto m = TrainedFeatureClassifier::train(spec(FeatureClassifierKind::tree_ensemble), train);
  EXPECT_EQ(accuracy(m, train), 1.0);
}

TEST(Classical, ErrorsAndSerialization) {
  std::vector<FeatureTrainingSample> one_class(5, {OccupancyVector{}, StressClass::low});
  EXPECT_THROW(TrainedFeatureClassifier::train(spec(FeatureClassifierKind::tree_ensemble), one_class), DataError);
  EXPECT_THROW(TrainedFeatureClassifier::train(spec(FeatureClassifierKind::tree_ensemble), {}), DataError);
  TrainedFeatureClassifier unfitted;
  EXPECT_THROW(unfitted.predict(std::vector<OccupancyVector>{OccupancyVector{}}), ConfigError);

  const auto train = generator_samples(GeneratorConfig::standard(), 30, 13);
  const auto probe = xs(generator_samples(GeneratorConfig::standard(), 10, 14));
  for (auto k : kKinds) {
    const auto m = TrainedFeatureClassifier::train(spec(k), train);
    const auto back = TrainedFeatureClassifier::from_json(m.to_json());
    const auto p = m.predict(probe), q = back.predict(probe);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i].label, q[i].label);
    EXPECT_EQ(back.taxonomy_version(), CategoryTaxonomy::mapillary_vistas().version());
  }
}

TEST(Classical, UnbalancedTrainingWarnsButTrains) {
  auto train = generator_samples(GeneratorConfig::standard(), 20, 15);
  train.pop_back();
  EXPECT_NO_THROW(TrainedFeatureClassifier::train(spec(FeatureClassifierKind::linear_max_margin), train));
}
