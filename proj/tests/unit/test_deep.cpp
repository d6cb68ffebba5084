#include <gtest/gtest.h>

#include <algorithm>

#include "scenestress/deep.hpp"
#include "world.hpp"

using namespace scenestress;

namespace {

nn::FeatureMap random_input(Rng& rng, int c, int h, int w) {
  nn::FeatureMap x(c, h, w);
  for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = uniform_real(rng, -1.0, 1.0);
  return x;
}

cv::Mat random_frame(Rng& rng, int side) {
  cv::Mat m(side, side, CV_8UC3);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int c = 0; c < 3; ++c) m.at<cv::Vec3b>(y, x)[c] = static_cast<std::uint8_t>(uniform_index(rng, 256));
  return m;
}

/// Cross-entropy of softmax(mean_k F(x_k)) against `label`, eval mode.
double consensus_loss(const StressModel& m, const std::vector<nn::FeatureMap>& xs, int label) {
  std::vector<const nn::FeatureMap*> p;
  for (const auto& x : xs) p.push_back(&x);
  return -std::log(nn::softmax(m.consensus_logits(p, 0))(label));
}

ExperimentConfig short_config() {
  ExperimentConfig cfg;
  cfg.synth = GeneratorConfig::standard(0.0);  // no lag: the end frame alone decides the label
  cfg.synth.min_segment_seconds = 40;
  cfg.synth.max_segment_seconds = 60;
  return cfg;
}

}  // namespace

TEST(SegmentSample, WorkedExample) {
  EXPECT_EQ(segment_sample(12, 8), (std::vector<std::size_t>{0, 1, 3, 4, 6, 7, 9, 10}));
  EXPECT_EQ(segment_sample(8, 8), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(segment_sample(40, 1), (std::vector<std::size_t>{0}));
}

TEST(SegmentSample, MatchesFloorFormula) {
  for (std::size_t m = 8; m <= 64; ++m)
    for (std::size_t k = 1; k <= 8; ++k) {
      const auto idx = segment_sample(m, k);
      ASSERT_EQ(idx.size(), k);
      for (std::size_t j = 0; j < k; ++j) {
        // largest f with f * k <= j * m
        std::size_t f = 0;
        while ((f + 1) * k <= j * m) ++f;
        EXPECT_EQ(idx[j], f) << m << "," << k;
      }
      EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
      EXPECT_LT(idx.back(), m);
    }
}

TEST(SegmentSample, Errors) {
  EXPECT_THROW(segment_sample(10, 0), ConfigError);
  EXPECT_THROW(segment_sample(3, 8), DataError);
}

TEST(Consensus, AveragesPreSoftmaxScores) {
  // One-pixel-wide probe net: a single conv filter reading channel 0, no hidden layers.
  ModelConfig c = ModelConfig::tiny(ModelKind::tsn, 2);
  c.backbone.blocks = {{1}};
  c.backbone.trainable_from_block = 0;
  c.head.hidden_layers = 0;
  StressModel m(c);
  auto params = m.net().parameters();
  params[0]->value.setZero();
  params[0]->value(0, 4) = 1.0;  // centre tap of channel 0
  params[2]->value = (nn::Matrix(3, 1) << 1.0, -1.0, 0.0).finished();
  params[3]->value = (nn::Matrix(3, 1) << 0.0, 1.0, 0.0).finished();
  nn::FeatureMap a(3, 2, 2), b(3, 2, 2);
  a.data(0, 0) = 1.0;
  const nn::FeatureMap* ab[] = {&a, &b};
  const nn::FeatureMap* only_a[] = {&a};
  const nn::FeatureMap* only_b[] = {&b};
  EXPECT_TRUE(m.consensus_logits(only_a, 0).isApprox(nn::Vector::Unit(3, 0)));
  EXPECT_TRUE(m.consensus_logits(only_b, 0).isApprox(nn::Vector::Unit(3, 1)));
  const auto z = m.consensus_logits(ab, 0);
  EXPECT_DOUBLE_EQ(z(0), 0.5);
  EXPECT_DOUBLE_EQ(z(1), 0.5);
  EXPECT_DOUBLE_EQ(z(2), 0.0);
}

TEST(Consensus, MatchesPerFrameLoopAndIsPermutationInvariant) {
  Rng rng(41);
  StressModel m(ModelConfig::tiny(ModelKind::tsn));
  std::vector<cv::Mat> frames;
  for (int i = 0; i < 24; ++i) frames.push_back(random_frame(rng, 16));
  const auto idx = segment_sample(frames.size(), 8);
  nn::Vector sum = nn::Vector::Zero(3);
  for (auto i : idx) sum += m.net().forward(m.config().preprocess(frames[i]), 0, nn::Mode::eval, nullptr, nullptr);
  const nn::Vector oracle = nn::softmax(sum / 8.0);
  EXPECT_LT((m.tsn_forward(frames) - oracle).cwiseAbs().maxCoeff(), 1e-12);

  std::vector<nn::FeatureMap> xs;
  for (auto i : idx) xs.push_back(m.config().preprocess(frames[i]));
  std::vector<const nn::FeatureMap*> p;
  for (const auto& x : xs) p.push_back(&x);
  const nn::Vector z = m.consensus_logits(p, 0);
  for (int t = 0; t < 10; ++t) {
    shuffle_range(p.begin(), p.end(), rng);
    EXPECT_LT((m.consensus_logits(p, 0) - z).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Consensus, IdenticalFramesEqualSingleFrame) {
  Rng rng(42);
  StressModel m(ModelConfig::tiny(ModelKind::tsn));
  const auto f = random_frame(rng, 16);
  const std::vector<cv::Mat> same(16, f);
  EXPECT_LT((m.tsn_forward(same) - m.image_forward(f)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Consensus, SharedWeightsAcrossSegments) {
  Rng rng(43);
  StressModel m(ModelConfig::tiny(ModelKind::tsn));
  std::vector<cv::Mat> frames;
  for (int i = 0; i < 8; ++i) frames.push_back(random_frame(rng, 16));
  std::vector<nn::Vector> before;
  for (const auto& f : frames) before.push_back(m.image_forward(f));
  const auto sum_before = m.net().checksum();
  m.net().parameters().back()->value(0, 0) += 0.5;  // one update to the shared head
  EXPECT_NE(m.net().checksum(), sum_before);
  for (std::size_t i = 0; i < frames.size(); ++i) EXPECT_FALSE(m.image_forward(frames[i]).isApprox(before[i]));
}

TEST(Consensus, EvalModeIsBitStable) {
  Rng rng(44);
  StressModel m(ModelConfig::tiny(ModelKind::tsn));
  std::vector<cv::Mat> frames;
  for (int i = 0; i < 10; ++i) frames.push_back(random_frame(rng, 16));
  const auto a = m.tsn_forward(frames), b = m.tsn_forward(frames);
  EXPECT_EQ(a, b);
}

TEST(Consensus, WrongResolutionRejected) {
  Rng rng(45);
  StressModel m(ModelConfig::tiny(ModelKind::image));
  EXPECT_THROW(m.image_forward(random_frame(rng, 8)), DataError);
  EXPECT_THROW(m.image_forward(cv::Mat(16, 16, CV_8UC1)), DataError);
}

TEST(Gradients, HeadMatchesCentralDifferences) {
  Rng rng(46);
  auto c = ModelConfig::tiny(ModelKind::tsn, 8);
  c.head.hidden_units = 12;
  StressModel m(c);
  std::vector<nn::FeatureMap> xs;
  for (int k = 0; k < 3; ++k) xs.push_back(random_input(rng, 3, 8, 8));
  const int label = 2;

  std::vector<const nn::FeatureMap*> p;
  for (const auto& x : xs) p.push_back(&x);
  auto& net = m.net();
  net.zero_grad();
  std::vector<nn::FrameTrace> traces;
  const nn::Vector z = m.consensus_logits(p, 0, nn::Mode::eval, nullptr, &traces);
  nn::Vector dz = nn::softmax(z);
  dz(label) -= 1.0;
  dz /= static_cast<double>(xs.size());
  for (auto& t : traces) net.backward(dz, t);

  std::vector<nn::Param*> head;
  for (auto* q : net.parameters())
    if (q->name.rfind("fc", 0) == 0 || q->name.rfind("predictions", 0) == 0) head.push_back(q);
  ASSERT_EQ(head.size(), 6u);
  int checked = 0;
  for (int probe = 0; checked < 20 && probe < 200; ++probe) {
    auto* q = head[uniform_index(rng, head.size())];
    const auto i = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(q->value.size())));
    const double analytic = q->grad.data()[i];
    const double h = 1e-6, w0 = q->value.data()[i];
    q->value.data()[i] = w0 + h;
    const double up = consensus_loss(m, xs, label);
    q->value.data()[i] = w0 - h;
    const double down = consensus_loss(m, xs, label);
    q->value.data()[i] = w0;
    const double numeric = (up - down) / (2 * h);
    if (std::abs(analytic) < 1e-7 && std::abs(numeric) < 1e-7) continue;  // dead unit, nothing to compare
    const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
    EXPECT_LT(rel, 1e-4) << q->name << "[" << i << "] analytic " << analytic << " numeric " << numeric;
    ++checked;
  }
  EXPECT_EQ(checked, 20);
}

TEST(Gradients, FrozenBlocksGetNoGradient) {
  Rng rng(47);
  StressModel m(ModelConfig::tiny(ModelKind::image));
  auto& net = m.net();
  net.zero_grad();
  const auto x = random_input(rng, 3, 16, 16);
  nn::FrameTrace t;
  net.forward(x, 0, nn::Mode::eval, nullptr, &t);
  net.backward(nn::Vector::Ones(3), t);
  for (const auto* q : net.parameters())
    if (!q->trainable) EXPECT_EQ(q->grad.cwiseAbs().maxCoeff(), 0.0) << q->name;
}

TEST(ModelConfig, JsonRoundTripAndValidation) {
  auto c = ModelConfig::tiny(ModelKind::image, 32);
  c.training.seed = 99;
  c.tsn.segments = 5;
  const auto back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  c.preprocess.width = 20;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(ModelConfig::from_json({{"kind", "lstm"}}), ConfigError);
  auto d = ModelConfig::tiny(ModelKind::tsn);
  d.training.batch_size = 0;
  EXPECT_THROW(d.validate(), ConfigError);
  EXPECT_TRUE(ModelConfig{}.backbone.conv_bias);
  EXPECT_EQ(ModelConfig{}.training.learning_rate, 1e-5);
}

TEST(Preprocess, ResizeShorterSideThenCenterCrop) {
  Preprocess p;
  p.width = p.height = 4;
  p.mean = {0, 0, 0};
  p.stddev = {1, 1, 1};
  cv::Mat f(4, 8, CV_8UC3, cv::Scalar(0, 0, 0));
  f(cv::Rect(2, 0, 4, 4)).setTo(cv::Scalar(255, 0, 0));  // blue centre, BGR order
  const auto x = p(f);
  EXPECT_EQ(x.channels, 3);
  EXPECT_EQ(x.width, 4);
  // centre crop keeps the blue square; channel 2 is blue in RGB order
  EXPECT_NEAR(x.data(2, 1 * 4 + 1), 1.0, 1e-12);
  EXPECT_NEAR(x.data(0, 1 * 4 + 1), 0.0, 1e-12);
  const auto r = p.crop_region(8, 4);
  EXPECT_DOUBLE_EQ(r.x, 2.0);
  EXPECT_DOUBLE_EQ(r.width, 4.0);
}

class DeepTraining : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    warnings_enabled() = false;
    world_ = new testing_support::World(testing_support::make_world(short_config(), false));
    split_ = new SplitData(make_split_data(world_->labeled, find_plan(lodo_plan(first_drive_ids()), "D_1"), world_->cfg));
  }
  static void TearDownTestSuite() {
    delete split_;
    delete world_;
    warnings_enabled() = true;
  }
  static testing_support::World* world_;
  static SplitData* split_;
};
testing_support::World* DeepTraining::world_ = nullptr;
SplitData* DeepTraining::split_ = nullptr;

TEST_F(DeepTraining, SeparableScenesReachHighValidationAccuracy) {
  FrameStore store(world_->labeled, world_->frames, ModelConfig::tiny(ModelKind::image).preprocess);
  auto c = ModelConfig::tiny(ModelKind::image);
  c.training.seed = 1;
  const auto r = train_model(c, store, split_->train.samples, split_->val.samples);
  EXPECT_GE(r.best_val_accuracy, 0.9);
  EXPECT_EQ(r.frozen_checksum_before, r.frozen_checksum_after);
  EXPECT_GE(r.best_epoch, 1);
  // log: one train and one val row per epoch run
  EXPECT_EQ(r.log.size() % 2, 0u);
  EXPECT_EQ(r.log_csv().substr(0, 26), "epoch,split,loss,accuracy\n");
  // the restored parameters are those of the best epoch
  const auto preds = r.model.predict(split_->val.samples, store);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) ok += preds[i].label == split_->val.samples[i].label;
  EXPECT_DOUBLE_EQ(static_cast<double>(ok) / static_cast<double>(preds.size()), r.best_val_accuracy);
}

TEST_F(DeepTraining, DeterministicForSeed) {
  FrameStore store(world_->labeled, world_->frames, ModelConfig::tiny(ModelKind::tsn).preprocess);
  auto c = ModelConfig::tiny(ModelKind::tsn);
  c.training.max_epochs = 2;
  c.training.seed = 5;
  const std::span<const ClipSample> train(split_->train.samples.data(), 120);
  const auto a = train_model(c, store, train, split_->val.samples);
  const auto b = train_model(c, store, train, split_->val.samples);
  EXPECT_EQ(a.model.net().checksum(), b.model.net().checksum());
  EXPECT_EQ(a.log_csv(), b.log_csv());
}

TEST_F(DeepTraining, OverfitsTwelveFrames) {
  FrameStore store(world_->labeled, world_->frames, ModelConfig::tiny(ModelKind::image).preprocess);
  std::vector<ClipSample> few;
  for (auto c : kAllClasses) {
    int n = 0;
    for (const auto& s : split_->train.samples)
      if (s.label == c && n < 4) {
        few.push_back(s);
        ++n;
      }
  }
  ASSERT_EQ(few.size(), 12u);
  auto c = ModelConfig::tiny(ModelKind::image);
  c.head.dropout = 0.0;
  c.training.max_epochs = 40;
  c.training.patience = 40;
  const auto r = train_model(c, store, few, few);
  EXPECT_EQ(r.best_val_accuracy, 1.0);
  // three-clip sanity: either the first three epochs improve or a warning is logged
  std::vector<double> losses;
  for (const auto& e : r.log)
    if (e.split == "train") losses.push_back(e.loss);
  const bool monotone = losses[1] < losses[0] && losses[2] < losses[1];
  EXPECT_TRUE(monotone || !r.warnings.empty());
}

TEST_F(DeepTraining, NonFiniteLossAborts) {
  FrameStore store(world_->labeled, world_->frames, ModelConfig::tiny(ModelKind::image).preprocess);
  auto c = ModelConfig::tiny(ModelKind::image);
  c.training.learning_rate = 1e200;
  const std::span<const ClipSample> train(split_->train.samples.data(), 40);
  EXPECT_THROW(train_model(c, store, train, split_->val.samples), TrainingError);
  EXPECT_THROW(train_model(c, store, {}, split_->val.samples), DataError);
}

TEST_F(DeepTraining, CheckpointRoundTrip) {
  FrameStore store(world_->labeled, world_->frames, ModelConfig::tiny(ModelKind::tsn).preprocess);
  auto c = ModelConfig::tiny(ModelKind::tsn);
  c.training.max_epochs = 1;
  const std::span<const ClipSample> train(split_->train.samples.data(), 60);
  const auto r = train_model(c, store, train, split_->val.samples);
  const auto dir = testing_support::temp_dir("ckpt");
  const auto path = (dir / "m.cbor").string();
  StressModel::write_checkpoint(path, r.model.to_json({{"note", "x"}}));
  const auto back = StressModel::from_json(StressModel::read_checkpoint(path));
  const auto p = r.model.predict(split_->test.samples, store), q = back.predict(split_->test.samples, store);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i].scores, q[i].scores);

  // a backbone initialized from the checkpoint carries its frozen weights
  auto warm = c;
  warm.backbone.weights = path;
  warm.training.seed = 1234;
  EXPECT_EQ(StressModel(warm).net().checksum(true), r.model.net().checksum(true));
  EXPECT_THROW(StressModel::read_checkpoint((dir / "missing").string()), DataError);
}

TEST_F(DeepTraining, SampledFramesFollowWindow) {
  auto c = ModelConfig::tiny(ModelKind::tsn);
  c.tsn.window_seconds = 20;
  StressModel tsn(c);
  StressModel img(ModelConfig::tiny(ModelKind::image));
  const auto& clip = split_->test.samples.front();
  const auto& session = world_->labeled[clip.session];
  const auto idx = tsn.sampled_frames(clip, session);
  ASSERT_EQ(idx.size(), 8u);
  EXPECT_GT(session.frames[idx.front()].timestamp, session.frames[clip.end_frame].timestamp - 20.0);
  EXPECT_EQ(img.sampled_frames(clip, session), std::vector<std::size_t>{clip.end_frame});
  c.tsn.window_seconds = 2;  // 4 frames < 8 segments
  EXPECT_THROW(StressModel(c).sampled_frames(clip, session), DataError);
  c.tsn.clamp_segments = true;
  EXPECT_EQ(StressModel(c).sampled_frames(clip, session).size(), 4u);
}

TEST_F(DeepTraining, WindowSweepShapeAndErrorRows) {
  FrameStore store(world_->labeled, world_->frames, ModelConfig::tiny(ModelKind::tsn).preprocess);
  auto c = ModelConfig::tiny(ModelKind::tsn);
  c.training.max_epochs = 1;
  const std::span<const ClipSample> train(split_->train.samples.data(), 30);
  const std::vector<double> windows{1, -3, 8};
  const auto rows = window_sweep(c, store, train, split_->val.samples, split_->test.samples, windows);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_TRUE(rows[0].error.empty());
  EXPECT_EQ(rows[0].segments, 2);
  EXPECT_FALSE(rows[1].error.empty());
  EXPECT_TRUE(rows[2].error.empty());
  EXPECT_EQ(rows[2].segments, 8);
  const auto csv = sweep_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}
