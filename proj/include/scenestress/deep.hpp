#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "scenestress/classical.hpp"
#include "scenestress/common.hpp"
#include "scenestress/ingestion.hpp"
#include "scenestress/nn/network.hpp"
#include "scenestress/splits.hpp"

namespace scenestress {

/// First-frame index of each of K near-equal contiguous segments of m frames:
/// segment k covers [floor(k*m/K), floor((k+1)*m/K)).
inline std::vector<std::size_t> segment_sample(std::size_t frame_count, std::size_t segments) {
  if (segments == 0) throw ConfigError("segment count must be at least 1");
  if (frame_count < segments)
    throw DataError("clip has " + std::to_string(frame_count) + " frames, fewer than the " +
                    std::to_string(segments) + " segments requested");
  std::vector<std::size_t> idx(segments);
  for (std::size_t k = 0; k < segments; ++k) idx[k] = k * frame_count / segments;
  return idx;
}

/// Resize (shorter side) + center crop to the network resolution, then per-channel
/// standardization in RGB order.
struct Preprocess {
  int width = 224;
  int height = 224;
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};

  /// Crop rectangle in frame coordinates that maps onto the network input.
  cv::Rect2d crop_region(int frame_width, int frame_height) const {
    const double scale = std::max(static_cast<double>(width) / frame_width,
                                  static_cast<double>(height) / frame_height);
    const double cw = width / scale, ch = height / scale;
    return {(frame_width - cw) / 2.0, (frame_height - ch) / 2.0, cw, ch};
  }

  nn::FeatureMap operator()(const cv::Mat& bgr) const {
    if (bgr.empty() || bgr.type() != CV_8UC3)
      throw DataError("expected an 8-bit 3-channel frame");
    cv::Mat img = bgr;
    if (img.cols != width || img.rows != height) {
      const double scale = std::max(static_cast<double>(width) / img.cols,
                                    static_cast<double>(height) / img.rows);
      cv::Mat resized;
      cv::resize(img, resized,
                 cv::Size(std::max(width, static_cast<int>(std::lround(img.cols * scale))),
                          std::max(height, static_cast<int>(std::lround(img.rows * scale)))),
                 0, 0, cv::INTER_LINEAR);
      img = resized(cv::Rect((resized.cols - width) / 2, (resized.rows - height) / 2, width, height)).clone();
    }
    nn::FeatureMap out(3, height, width);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const auto& px = img.at<cv::Vec3b>(y, x);
        for (int c = 0; c < 3; ++c)
          out.data(c, y * width + x) = (px[2 - c] / 255.0 - mean[static_cast<std::size_t>(c)]) /
                                       stddev[static_cast<std::size_t>(c)];
      }
    return out;
  }

  nlohmann::json to_json() const {
    return {{"width", width}, {"height", height}, {"mean", mean}, {"std", stddev}};
  }

  static Preprocess from_json(const nlohmann::json& j) {
    Preprocess p;
    p.width = j.value("width", p.width);
    p.height = j.value("height", p.height);
    if (j.contains("mean")) p.mean = j.at("mean").get<std::array<double, 3>>();
    if (j.contains("std")) p.stddev = j.at("std").get<std::array<double, 3>>();
    return p;
  }
};

enum class ModelKind { image, tsn };

constexpr std::string_view to_string(ModelKind k) noexcept {
  return k == ModelKind::image ? "image" : "tsn";
}

struct TsnConfig {
  int segments = 8;
  double window_seconds = 20.0;
  // Use min(segments, frames in window) instead of rejecting short windows.
  bool clamp_segments = false;

  void validate() const {
    if (segments < 1) throw ConfigError("TSN needs at least one segment");
    if (!(window_seconds > 0.0)) throw ConfigError("TSN window must be positive");
  }
};

struct TrainingConfig {
  double learning_rate = 1e-5;
  double rho = 0.9;
  double epsilon = 1e-7;
  int batch_size = 4;
  int max_epochs = 10;
  int patience = 3;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0) || batch_size < 1 || max_epochs < 1 || patience < 1)
      throw ConfigError("training rates and sizes must be positive");
  }
};

struct ModelConfig {
  ModelKind kind = ModelKind::tsn;
  nn::BackboneSpec backbone = nn::BackboneSpec::vgg16();
  nn::ImageHeadSpec head{};
  Preprocess preprocess{};
  TsnConfig tsn{};
  TrainingConfig training{};

  /// Desk-scale configuration for synthetic 16x16 frames.
  static ModelConfig tiny(ModelKind kind, int side = 16) {
    ModelConfig c;
    c.kind = kind;
    c.backbone = nn::BackboneSpec::tiny();
    c.backbone.input_width = c.backbone.input_height = side;
    c.head.hidden_units = 64;
    c.preprocess.width = c.backbone.input_width;
    c.preprocess.height = c.backbone.input_height;
    c.preprocess.mean = {0.0, 0.0, 0.0};
    c.preprocess.stddev = {1.0, 1.0, 1.0};
    c.training.learning_rate = 1e-3;
    return c;
  }

  void validate() const {
    backbone.validate();
    head.validate();
    tsn.validate();
    training.validate();
    if (preprocess.width != backbone.input_width || preprocess.height != backbone.input_height)
      throw ConfigError("preprocess resolution must match the backbone input");
  }

  nlohmann::json to_json() const {
    return {{"kind", std::string(to_string(kind))},
            {"backbone", backbone.to_json()},
            {"head", head.to_json()},
            {"preprocess", preprocess.to_json()},
            {"tsn", {{"segments", tsn.segments}, {"window_seconds", tsn.window_seconds},
                     {"clamp_segments", tsn.clamp_segments}}},
            {"training", {{"optimizer", "rmsprop"}, {"learning_rate", training.learning_rate},
                          {"rho", training.rho}, {"epsilon", training.epsilon},
                          {"batch_size", training.batch_size}, {"max_epochs", training.max_epochs},
                          {"patience", training.patience}, {"seed", training.seed}}}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c = tiny(ModelKind::tsn);
    const auto kind = j.value("kind", std::string("tsn"));
    if (kind != "image" && kind != "tsn") throw ConfigError("model kind must be image or tsn");
    c.kind = kind == "image" ? ModelKind::image : ModelKind::tsn;
    if (j.contains("backbone")) c.backbone = nn::BackboneSpec::from_json(j.at("backbone"));
    if (j.contains("head")) c.head = nn::ImageHeadSpec::from_json(j.at("head"));
    if (j.contains("preprocess")) c.preprocess = Preprocess::from_json(j.at("preprocess"));
    if (j.contains("tsn")) {
      const auto& t = j.at("tsn");
      c.tsn.segments = t.value("segments", c.tsn.segments);
      c.tsn.window_seconds = t.value("window_seconds", c.tsn.window_seconds);
      c.tsn.clamp_segments = t.value("clamp_segments", c.tsn.clamp_segments);
    }
    if (j.contains("training")) {
      const auto& t = j.at("training");
      c.training.learning_rate = t.value("learning_rate", c.training.learning_rate);
      c.training.rho = t.value("rho", c.training.rho);
      c.training.epsilon = t.value("epsilon", c.training.epsilon);
      c.training.batch_size = t.value("batch_size", c.training.batch_size);
      c.training.max_epochs = t.value("max_epochs", c.training.max_epochs);
      c.training.patience = t.value("patience", c.training.patience);
      c.training.seed = t.value("seed", c.training.seed);
    }
    return c;
  }
};

// ---------------------------------------------------------------------------

/// Preprocessed network inputs for the frames of labeled sessions, plus a
/// cache of frozen-prefix activations (valid while the frozen weights are).
class FrameStore {
 public:
  FrameStore(const std::vector<LabeledSession>& sessions, const FrameSource& source,
             Preprocess preprocess, std::size_t max_cached = 200000)
      : sessions_(&sessions), source_(&source), preprocess_(std::move(preprocess)), max_cached_(max_cached) {}

  const std::vector<LabeledSession>& sessions() const noexcept { return *sessions_; }
  const Preprocess& preprocess() const noexcept { return preprocess_; }

  const LabeledFrame& frame(std::size_t session, std::size_t index) const {
    return sessions_->at(session).frames.at(index);
  }

  cv::Mat image(std::size_t session, std::size_t index) const {
    return source_->load(frame(session, index).ref);
  }

  const nn::FeatureMap& input(std::size_t session, std::size_t index) {
    const auto key = make_key(session, index);
    if (auto it = inputs_.find(key); it != inputs_.end()) return it->second;
    if (inputs_.size() >= max_cached_) inputs_.clear();
    return inputs_.emplace(key, preprocess_(image(session, index))).first->second;
  }

  /// Output of blocks [0, end_block) of `net`. `net_key` identifies the frozen weights.
  const nn::FeatureMap& prefix(std::size_t session, std::size_t index, const nn::FrameNet& net,
                               int end_block, std::uint64_t net_key) {
    if (net_key != prefix_key_ || end_block != prefix_block_) {
      prefixes_.clear();
      prefix_key_ = net_key;
      prefix_block_ = end_block;
    }
    const auto key = make_key(session, index);
    if (auto it = prefixes_.find(key); it != prefixes_.end()) return it->second;
    if (prefixes_.size() >= max_cached_) prefixes_.clear();
    auto fm = net.forward_prefix(input(session, index), end_block);
    return prefixes_.emplace(key, std::move(fm)).first->second;
  }

 private:
  static std::uint64_t make_key(std::size_t session, std::size_t index) {
    return (static_cast<std::uint64_t>(session) << 40) | index;
  }

  const std::vector<LabeledSession>* sessions_;
  const FrameSource* source_;
  Preprocess preprocess_;
  std::size_t max_cached_;
  std::unordered_map<std::uint64_t, nn::FeatureMap> inputs_;
  std::unordered_map<std::uint64_t, nn::FeatureMap> prefixes_;
  std::uint64_t prefix_key_ = 0;
  int prefix_block_ = -1;
};

/// Single-frame CNN or Temporal Segment Network over a shared frame network F:
/// TSN(T_1..T_K) = softmax(mean_k F(T_k)).
class StressModel {
 public:
  StressModel() = default;

  explicit StressModel(ModelConfig config)
      : config_(std::move(config)) {
    config_.validate();
    net_ = nn::FrameNet(config_.backbone, config_.head, derive_seed(config_.training.seed, "init"));
    if (!config_.backbone.weights.empty()) {
      const auto j = read_checkpoint(config_.backbone.weights);
      net_.load_parameters(j.contains("network") ? j.at("network").at("parameters") : j.at("parameters"));
    }
  }

  const ModelConfig& config() const noexcept { return config_; }
  ModelConfig& config() noexcept { return config_; }
  nn::FrameNet& net() noexcept { return net_; }
  const nn::FrameNet& net() const noexcept { return net_; }

  /// Frame indices (into the clip's session) that the model looks at.
  std::vector<std::size_t> sampled_frames(const ClipSample& clip, const LabeledSession& session) const {
    if (config_.kind == ModelKind::image) return {clip.end_frame};
    const double t_end = session.frames.at(clip.end_frame).timestamp;
    std::size_t first = clip.end_frame;
    while (first > clip.first_frame &&
           session.frames[first - 1].timestamp > t_end - config_.tsn.window_seconds + 1e-9)
      --first;
    const std::size_t m = clip.end_frame - first + 1;
    std::size_t k = static_cast<std::size_t>(config_.tsn.segments);
    if (config_.tsn.clamp_segments) k = std::min(k, m);
    auto idx = segment_sample(m, k);
    for (auto& i : idx) i += first;
    return idx;
  }

  /// Average of per-frame pre-softmax scores over preprocessed inputs.
  nn::Vector consensus_logits(std::span<const nn::FeatureMap* const> inputs, int start_block,
                              nn::Mode mode = nn::Mode::eval, Rng* rng = nullptr,
                              std::vector<nn::FrameTrace>* traces = nullptr) const {
    if (inputs.empty()) throw DataError("no frames to classify");
    if (traces) traces->assign(inputs.size(), {});
    nn::Vector sum = nn::Vector::Zero(config_.head.classes);
    for (std::size_t k = 0; k < inputs.size(); ++k)
      sum += net_.forward(*inputs[k], start_block, mode, rng, traces ? &(*traces)[k] : nullptr);
    return sum / static_cast<double>(inputs.size());
  }

  /// Class probabilities for a single frame (eval mode).
  nn::Vector image_forward(const cv::Mat& frame) const {
    check_frame(frame);
    const auto x = config_.preprocess(frame);
    const nn::FeatureMap* in[] = {&x};
    return nn::softmax(consensus_logits(in, 0));
  }

  /// Class probabilities for a clip given its frames in time order; K frames are
  /// taken with segment_sample over the whole span passed in.
  nn::Vector tsn_forward(std::span<const cv::Mat> clip_frames) const {
    const std::size_t m = clip_frames.size();
    std::size_t k = static_cast<std::size_t>(config_.tsn.segments);
    if (config_.tsn.clamp_segments) k = std::min(k, m);
    const auto idx = segment_sample(m, k);
    std::vector<nn::FeatureMap> xs;
    xs.reserve(idx.size());
    for (auto i : idx) {
      check_frame(clip_frames[i]);
      xs.push_back(config_.preprocess(clip_frames[i]));
    }
    std::vector<const nn::FeatureMap*> ptrs;
    for (const auto& x : xs) ptrs.push_back(&x);
    return nn::softmax(consensus_logits(ptrs, 0));
  }

  ClassPrediction predict(const ClipSample& clip, FrameStore& store) const {
    const auto& session = store.sessions().at(clip.session);
    const auto idx = sampled_frames(clip, session);
    const int start = net_.first_trainable_block();
    const auto key = net_.checksum(true);
    std::vector<const nn::FeatureMap*> ptrs;
    for (auto i : idx) ptrs.push_back(&store.prefix(clip.session, i, net_, start, key));
    return to_prediction(nn::softmax(consensus_logits(ptrs, start)));
  }

  std::vector<ClassPrediction> predict(std::span<const ClipSample> clips, FrameStore& store) const {
    std::vector<ClassPrediction> out;
    out.reserve(clips.size());
    const int start = net_.first_trainable_block();
    const auto key = net_.checksum(true);
    for (const auto& clip : clips) {
      const auto idx = sampled_frames(clip, store.sessions().at(clip.session));
      std::vector<const nn::FeatureMap*> ptrs;
      for (auto i : idx) ptrs.push_back(&store.prefix(clip.session, i, net_, start, key));
      out.push_back(to_prediction(nn::softmax(consensus_logits(ptrs, start))));
    }
    return out;
  }

  nlohmann::json to_json(const nlohmann::json& extra = {}) const {
    nlohmann::json j{{"format", "scenestress-checkpoint/1"},
                     {"config", config_.to_json()},
                     {"network", net_.to_json()}};
    if (!extra.is_null()) j["meta"] = extra;
    return j;
  }

  static StressModel from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "scenestress-checkpoint/1") throw DataError("not a model checkpoint");
    StressModel m;
    m.config_ = ModelConfig::from_json(j.at("config"));
    m.config_.backbone.weights.clear();
    m.net_ = nn::FrameNet::from_json(j.at("network"));
    return m;
  }

  static void write_checkpoint(const std::string& path, const nlohmann::json& j) {
    const auto bytes = nlohmann::json::to_cbor(j);
    write_text_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  }

  static nlohmann::json read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
      return nlohmann::json::from_cbor(bytes);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ": " + e.what());
    }
  }

  static ClassPrediction to_prediction(const nn::Vector& probs) {
    ClassPrediction p;
    Eigen::Index best = 0;
    probs.maxCoeff(&best);
    p.label = class_at(static_cast<std::size_t>(best));
    for (std::size_t c = 0; c < kNumClasses; ++c) p.scores[c] = probs(static_cast<Eigen::Index>(c));
    return p;
  }

 private:
  void check_frame(const cv::Mat& frame) const {
    if (frame.empty() || frame.type() != CV_8UC3)
      throw DataError("frame must be 8-bit with 3 channels");
    if (frame.cols != config_.preprocess.width || frame.rows != config_.preprocess.height)
      throw DataError("frame is " + std::to_string(frame.cols) + "x" + std::to_string(frame.rows) +
                      ", model expects " + std::to_string(config_.preprocess.width) + "x" +
                      std::to_string(config_.preprocess.height));
  }

  ModelConfig config_;
  nn::FrameNet net_;
};

// ---------------------------------------------------------------------------
// Training.

struct EpochRecord {
  int epoch = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainingResult {
  StressModel model;
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::uint64_t frozen_checksum_before = 0;
  std::uint64_t frozen_checksum_after = 0;
  std::vector<std::string> warnings;

  std::string log_csv() const {
    std::string out = "epoch,split,loss,accuracy\n";
    for (const auto& r : log)
      out += std::to_string(r.epoch) + "," + r.split + "," + format_double(r.loss) + "," +
             format_double(r.accuracy) + "\n";
    return out;
  }
};

namespace detail {

inline std::pair<double, double> loss_and_accuracy(const StressModel& model, std::span<const ClipSample> clips,
                                                   FrameStore& store) {
  const auto preds = model.predict(clips, store);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    loss -= std::log(std::max(preds[i].scores[index_of(clips[i].label)], 1e-300));
    correct += preds[i].label == clips[i].label;
  }
  const double n = static_cast<double>(std::max<std::size_t>(clips.size(), 1));
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace detail

/// Cross-entropy training with RMSprop; keeps the parameters of the epoch with
/// the best validation accuracy and stops after `patience` epochs without gain.
inline TrainingResult train_model(const ModelConfig& config, FrameStore& store,
                                  std::span<const ClipSample> train,
                                  std::span<const ClipSample> val) {
  if (train.empty()) throw DataError("empty training partition");
  if (val.empty()) throw DataError("empty validation partition");
  TrainingResult result;
  result.model = StressModel(config);
  auto& model = result.model;
  auto& net = model.net();
  const auto& tc = config.training;
  const int start = net.first_trainable_block();
  const std::uint64_t frozen_key = net.checksum(true);
  result.frozen_checksum_before = frozen_key;

  Rng rng(derive_seed(tc.seed, "train"));
  nn::RmsProp opt(tc.learning_rate, tc.rho, tc.epsilon);
  auto params = net.parameters();
  std::vector<nn::Matrix> best_params;
  for (auto* p : params) best_params.push_back(p->value);
  double best_acc = -1.0;
  int since_best = 0;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> train_losses;

  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    shuffle_range(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(tc.batch_size));
      net.zero_grad();
      for (std::size_t bi = b0; bi < b1; ++bi) {
        const auto& clip = train[order[bi]];
        const auto idx = model.sampled_frames(clip, store.sessions().at(clip.session));
        std::vector<const nn::FeatureMap*> ptrs;
        for (auto i : idx) ptrs.push_back(&store.prefix(clip.session, i, net, start, frozen_key));
        std::vector<nn::FrameTrace> traces;
        const nn::Vector z = model.consensus_logits(ptrs, start, nn::Mode::train, &rng, &traces);
        const nn::Vector p = nn::softmax(z);
        const auto y = static_cast<Eigen::Index>(index_of(clip.label));
        const double loss = -std::log(std::max(p(y), 1e-300));
        if (!std::isfinite(loss) || !z.allFinite())
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", clip " + clip.key() +
                              " (logits " + format_double(z(0)) + ", " + format_double(z(1)) + ", " +
                              format_double(z(2)) + "); lower the learning rate");
        loss_sum += loss;
        Eigen::Index arg = 0;
        p.maxCoeff(&arg);
        correct += arg == y;
        nn::Vector dz = p;
        dz(y) -= 1.0;
        dz /= static_cast<double>(traces.size());
        for (auto& t : traces) net.backward(dz, t);
      }
      opt.step(params, 1.0 / static_cast<double>(b1 - b0));
    }
    const double n = static_cast<double>(train.size());
    train_losses.push_back(loss_sum / n);
    result.log.push_back({epoch, "train", loss_sum / n, static_cast<double>(correct) / n});
    const auto [val_loss, val_acc] = detail::loss_and_accuracy(model, val, store);
    if (!std::isfinite(val_loss)) throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    result.log.push_back({epoch, "val", val_loss, val_acc});

    if (val_acc > best_acc) {
      best_acc = val_acc;
      result.best_epoch = epoch;
      for (std::size_t i = 0; i < params.size(); ++i) best_params[i] = params[i]->value;
      since_best = 0;
    } else if (++since_best >= tc.patience) {
      break;
    }
  }
  if (train_losses.size() >= 3 && !(train_losses[1] < train_losses[0] && train_losses[2] < train_losses[1])) {
    result.warnings.push_back("training loss did not decrease monotonically over the first 3 epochs");
    warn(result.warnings.back());
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_params[i];
  result.best_val_accuracy = best_acc;
  result.frozen_checksum_after = net.checksum(true);
  return result;
}

struct SweepRow {
  double window_seconds = 0.0;
  int segments = 0;  // segments actually used (clamped to the window's frames)
  double accuracy = 0.0;
  std::string error;
};

/// Trains one TSN per window length on the same partitions and scores the test partition.
inline std::vector<SweepRow> window_sweep(const ModelConfig& base, FrameStore& store,
                                          std::span<const ClipSample> train, std::span<const ClipSample> val,
                                          std::span<const ClipSample> test, std::span<const double> windows) {
  std::vector<SweepRow> rows;
  for (double n : windows) {
    SweepRow row;
    row.window_seconds = n;
    try {
      ModelConfig cfg = base;
      cfg.kind = ModelKind::tsn;
      cfg.tsn.window_seconds = n;
      cfg.tsn.clamp_segments = true;
      auto res = train_model(cfg, store, train, val);
      if (!test.empty()) {
        row.segments = static_cast<int>(
            res.model.sampled_frames(test.front(), store.sessions().at(test.front().session)).size());
      }
      row.accuracy = detail::loss_and_accuracy(res.model, test, store).second;
    } catch (const std::exception& e) {
      row.error = e.what();
      warn("window " + format_double(n) + " s failed: " + row.error);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "window_seconds,segments,accuracy,error\n";
  for (const auto& r : rows)
    out += format_double(r.window_seconds) + "," + std::to_string(r.segments) + "," +
           (r.error.empty() ? format_double(r.accuracy) : std::string()) + "," + r.error + "\n";
  return out;
}

}  // namespace scenestress
