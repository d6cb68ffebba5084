#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/ml.hpp>

#include "scenestress/common.hpp"
#include "scenestress/features.hpp"
#include "scenestress/taxonomy.hpp"

namespace scenestress {

// Occupancy-vector classifiers. The solvers are OpenCV's ml module (random
// forest and C-SVC); this layer owns hyperparameter validation, seeding,
// standardization and the archive format.

enum class FeatureClassifierKind { tree_ensemble, linear_max_margin, rbf_max_margin };

constexpr std::string_view to_string(FeatureClassifierKind k) noexcept {
  switch (k) {
    case FeatureClassifierKind::tree_ensemble: return "tree_ensemble";
    case FeatureClassifierKind::linear_max_margin: return "linear_max_margin";
    case FeatureClassifierKind::rbf_max_margin: return "rbf_max_margin";
  }
  return "?";
}

inline FeatureClassifierKind parse_classifier_kind(std::string_view s) {
  if (s == "tree_ensemble" || s == "rf" || s == "random_forest") return FeatureClassifierKind::tree_ensemble;
  if (s == "linear_max_margin" || s == "linear_svm") return FeatureClassifierKind::linear_max_margin;
  if (s == "rbf_max_margin" || s == "rbf_svm") return FeatureClassifierKind::rbf_max_margin;
  throw ConfigError("unknown classifier kind '" + std::string(s) + "'");
}

struct FeatureClassifierSpec {
  FeatureClassifierKind kind = FeatureClassifierKind::tree_ensemble;
  std::map<std::string, double> hyperparameters;
  std::uint64_t seed = 0;

  static std::map<std::string, double> defaults(FeatureClassifierKind kind) {
    switch (kind) {
      case FeatureClassifierKind::tree_ensemble:
        return {{"n_trees", 200}, {"max_depth", 30}, {"min_samples", 2}, {"active_vars", 0}};
      case FeatureClassifierKind::linear_max_margin:
        return {{"C", 1.0}};
      case FeatureClassifierKind::rbf_max_margin:
        return {{"C", 1.0}, {"gamma", 0.0}};  // gamma 0: median-distance heuristic
    }
    return {};
  }

  /// Defaults merged with the given overrides; unknown keys are rejected.
  std::map<std::string, double> resolved() const {
    auto out = defaults(kind);
    for (const auto& [k, v] : hyperparameters) {
      auto it = out.find(k);
      if (it == out.end())
        throw ConfigError("hyperparameter '" + k + "' is not valid for " + std::string(to_string(kind)));
      it->second = v;
    }
    const auto positive = [&](const char* key) {
      if (!(out.at(key) > 0.0)) throw ConfigError(std::string(key) + " must be positive");
    };
    if (kind == FeatureClassifierKind::tree_ensemble) {
      positive("n_trees");
      positive("max_depth");
      positive("min_samples");
      if (out.at("active_vars") < 0) throw ConfigError("active_vars must be >= 0");
    } else {
      positive("C");
      if (kind == FeatureClassifierKind::rbf_max_margin && out.at("gamma") < 0)
        throw ConfigError("gamma must be >= 0");
    }
    return out;
  }

  nlohmann::json to_json() const {
    return {{"kind", std::string(to_string(kind))}, {"hyperparameters", resolved()}, {"seed", seed}};
  }
};

struct ClassPrediction {
  StressClass label = StressClass::low;
  std::array<double, kNumClasses> scores{};  // simplex
};

struct FeatureTrainingSample {
  OccupancyVector x{};
  StressClass y = StressClass::low;
};

class TrainedFeatureClassifier {
 public:
  const FeatureClassifierSpec& spec() const noexcept { return spec_; }
  const nlohmann::json& metadata() const noexcept { return metadata_; }
  const std::string& taxonomy_version() const noexcept { return taxonomy_version_; }
  bool fitted() const noexcept { return !model_.empty() && model_->isTrained(); }

  static TrainedFeatureClassifier train(const FeatureClassifierSpec& spec,
                                        std::span<const FeatureTrainingSample> samples,
                                        const std::string& taxonomy_version =
                                            CategoryTaxonomy::mapillary_vistas().version()) {
    const auto hp = spec.resolved();
    if (samples.empty()) throw DataError("no training samples");
    std::array<std::size_t, kNumClasses> counts{};
    for (const auto& s : samples) ++counts[index_of(s.y)];
    const auto present = std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; });
    if (present < 2) throw DataError("training data contains a single class; nothing to learn");
    if (counts[0] != counts[1] || counts[1] != counts[2])
      warn("training partition is not class-balanced (" + std::to_string(counts[0]) + "/" +
           std::to_string(counts[1]) + "/" + std::to_string(counts[2]) + ")");

    TrainedFeatureClassifier m;
    m.spec_ = spec;
    m.taxonomy_version_ = taxonomy_version;

    // Row order is permuted by the seed; OpenCV's forest RNG is fixed internally.
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(spec.seed);
    shuffle_range(order.begin(), order.end(), rng);

    const bool margin = spec.kind != FeatureClassifierKind::tree_ensemble;
    m.mean_.assign(kNumCategories, 0.0);
    m.scale_.assign(kNumCategories, 1.0);
    if (margin) {
      for (const auto& s : samples)
        for (std::size_t i = 0; i < kNumCategories; ++i) m.mean_[i] += s.x[i];
      for (auto& v : m.mean_) v /= static_cast<double>(samples.size());
      std::vector<double> var(kNumCategories, 0.0);
      for (const auto& s : samples)
        for (std::size_t i = 0; i < kNumCategories; ++i) var[i] += (s.x[i] - m.mean_[i]) * (s.x[i] - m.mean_[i]);
      for (std::size_t i = 0; i < kNumCategories; ++i) {
        const double sd = std::sqrt(var[i] / static_cast<double>(samples.size()));
        m.scale_[i] = sd > 1e-12 ? 1.0 / sd : 1.0;
      }
    }

    cv::Mat x(static_cast<int>(samples.size()), static_cast<int>(kNumCategories), CV_32F);
    cv::Mat y(static_cast<int>(samples.size()), 1, CV_32S);
    for (std::size_t r = 0; r < order.size(); ++r) {
      const auto& s = samples[order[r]];
      m.fill_row(s.x, x.ptr<float>(static_cast<int>(r)));
      y.at<int>(static_cast<int>(r)) = static_cast<int>(index_of(s.y));
    }
    auto data = cv::ml::TrainData::create(x, cv::ml::ROW_SAMPLE, y);

    nlohmann::json used = hp;
    if (spec.kind == FeatureClassifierKind::tree_ensemble) {
      auto rf = cv::ml::RTrees::create();
      rf->setMaxDepth(static_cast<int>(hp.at("max_depth")));
      rf->setMinSampleCount(static_cast<int>(hp.at("min_samples")));
      rf->setRegressionAccuracy(0.0f);
      rf->setUseSurrogates(false);
      rf->setCVFolds(0);
      rf->setActiveVarCount(static_cast<int>(hp.at("active_vars")));
      rf->setCalculateVarImportance(false);
      rf->setTermCriteria(cv::TermCriteria(cv::TermCriteria::MAX_ITER,
                                           static_cast<int>(hp.at("n_trees")), 0.0));
      rf->train(data);
      m.model_ = rf;
    } else {
      auto svm = cv::ml::SVM::create();
      svm->setType(cv::ml::SVM::C_SVC);
      svm->setC(hp.at("C"));
      svm->setTermCriteria(cv::TermCriteria(cv::TermCriteria::MAX_ITER + cv::TermCriteria::EPS,
                                            100000, 1e-6));
      if (spec.kind == FeatureClassifierKind::linear_max_margin) {
        svm->setKernel(cv::ml::SVM::LINEAR);
      } else {
        double gamma = hp.at("gamma");
        if (gamma == 0.0) gamma = median_heuristic_gamma(x, spec.seed);
        used["gamma"] = gamma;
        svm->setKernel(cv::ml::SVM::RBF);
        svm->setGamma(gamma);
      }
      svm->train(data);
      m.model_ = svm;
    }
    if (!m.fitted()) throw TrainingError("classifier training did not produce a model");

    std::vector<OccupancyVector> xs;
    xs.reserve(samples.size());
    for (const auto& s : samples) xs.push_back(s.x);
    const auto pred = m.predict(xs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) correct += pred[i].label == samples[i].y;
    m.metadata_ = {{"train_counts", counts},
                   {"seed", spec.seed},
                   {"taxonomy_version", taxonomy_version},
                   {"hyperparameters", used},
                   {"train_accuracy", static_cast<double>(correct) / static_cast<double>(samples.size())}};
    return m;
  }

  std::vector<ClassPrediction> predict(std::span<const OccupancyVector> vectors) const {
    if (!fitted()) throw ConfigError("classifier is not fitted");
    std::vector<ClassPrediction> out;
    if (vectors.empty()) return out;
    cv::Mat x(static_cast<int>(vectors.size()), static_cast<int>(kNumCategories), CV_32F);
    for (std::size_t r = 0; r < vectors.size(); ++r) fill_row(vectors[r], x.ptr<float>(static_cast<int>(r)));
    out.resize(vectors.size());
    if (spec_.kind == FeatureClassifierKind::tree_ensemble) {
      auto rf = model_.dynamicCast<cv::ml::RTrees>();
      cv::Mat votes;
      rf->getVotes(x, votes, 0);
      // Row 0 holds the class labels of the vote columns.
      for (std::size_t r = 0; r < vectors.size(); ++r) {
        std::array<double, kNumClasses> v{};
        double total = 0.0;
        for (int c = 0; c < votes.cols; ++c) {
          const int label = votes.at<int>(0, c);
          const double n = votes.at<int>(static_cast<int>(r) + 1, c);
          if (label >= 0 && label < static_cast<int>(kNumClasses)) v[static_cast<std::size_t>(label)] += n;
          total += n;
        }
        auto& p = out[r];
        std::size_t best = 0;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
          p.scores[c] = total > 0 ? v[c] / total : 1.0 / kNumClasses;
          if (v[c] > v[best]) best = c;
        }
        p.label = class_at(best);
      }
    } else {
      cv::Mat labels;
      model_->predict(x, labels);
      for (std::size_t r = 0; r < vectors.size(); ++r) {
        const int l = std::clamp(static_cast<int>(std::lround(labels.at<float>(static_cast<int>(r)))), 0, 2);
        out[r].label = class_at(static_cast<std::size_t>(l));
        out[r].scores[static_cast<std::size_t>(l)] = 1.0;
      }
    }
    return out;
  }

  nlohmann::json to_json() const {
    if (!fitted()) throw ConfigError("classifier is not fitted");
    cv::FileStorage fs(".json", cv::FileStorage::WRITE | cv::FileStorage::MEMORY | cv::FileStorage::FORMAT_JSON);
    fs << "model" << "{";
    model_->write(fs);
    fs << "}";
    return {{"format", "scenestress-feature-classifier/1"},
            {"spec", spec_.to_json()},
            {"taxonomy_version", taxonomy_version_},
            {"metadata", metadata_},
            {"standardize_mean", mean_},
            {"standardize_scale", scale_},
            {"backend", fs.releaseAndGetString()}};
  }

  static TrainedFeatureClassifier from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "scenestress-feature-classifier/1")
      throw DataError("not a feature-classifier archive");
    TrainedFeatureClassifier m;
    const auto& s = j.at("spec");
    m.spec_.kind = parse_classifier_kind(s.at("kind").get<std::string>());
    m.spec_.hyperparameters = s.at("hyperparameters").get<std::map<std::string, double>>();
    m.spec_.seed = s.at("seed").get<std::uint64_t>();
    m.taxonomy_version_ = j.at("taxonomy_version").get<std::string>();
    m.metadata_ = j.at("metadata");
    m.mean_ = j.at("standardize_mean").get<std::vector<double>>();
    m.scale_ = j.at("standardize_scale").get<std::vector<double>>();
    const auto text = j.at("backend").get<std::string>();
    cv::FileStorage fs(text, cv::FileStorage::READ | cv::FileStorage::MEMORY | cv::FileStorage::FORMAT_JSON);
    if (m.spec_.kind == FeatureClassifierKind::tree_ensemble)
      m.model_ = cv::ml::RTrees::create();
    else
      m.model_ = cv::ml::SVM::create();
    m.model_->read(fs["model"]);
    if (!m.fitted()) throw DataError("classifier archive holds no fitted model");
    return m;
  }

 private:
  void fill_row(const OccupancyVector& v, float* row) const {
    for (std::size_t i = 0; i < kNumCategories; ++i)
      row[i] = static_cast<float>((v[i] - mean_[i]) * scale_[i]);
  }

  // gamma = 1 / (2 * median pairwise distance^2), over at most 500 seeded rows.
  static double median_heuristic_gamma(const cv::Mat& x, std::uint64_t seed) {
    std::vector<int> rows(static_cast<std::size_t>(x.rows));
    std::iota(rows.begin(), rows.end(), 0);
    Rng rng(derive_seed(seed, "median-heuristic"));
    shuffle_range(rows.begin(), rows.end(), rng);
    if (rows.size() > 500) rows.resize(500);
    std::vector<double> d2;
    for (std::size_t a = 0; a < rows.size(); ++a)
      for (std::size_t b = a + 1; b < rows.size(); ++b) {
        const double d = cv::norm(x.row(rows[a]), x.row(rows[b]), cv::NORM_L2SQR);
        d2.push_back(d);
      }
    if (d2.empty()) return 1.0;
    auto mid = d2.begin() + static_cast<std::ptrdiff_t>(d2.size() / 2);
    std::nth_element(d2.begin(), mid, d2.end());
    return *mid > 0.0 ? 1.0 / (2.0 * *mid) : 1.0;
  }

  FeatureClassifierSpec spec_;
  std::string taxonomy_version_;
  nlohmann::json metadata_;
  std::vector<double> mean_;
  std::vector<double> scale_;
  cv::Ptr<cv::ml::StatModel> model_;
};

}  // namespace scenestress
