#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "scenestress/ingestion.hpp"
#include "world.hpp"

using namespace scenestress;

namespace {

StressSignal ramp(std::size_t n, double dt = 0.25) {
  StressSignal s;
  for (std::size_t i = 0; i < n; ++i) {
    s.timestamps.push_back(static_cast<double>(i) * dt);
    s.values.push_back(static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return s;
}

DriveSession session_with_frames(double fps, double seconds, StressSignal stress) {
  DriveSession s;
  s.driver_id = "d";
  s.fps = fps;
  const auto n = static_cast<std::size_t>(std::llround(seconds * fps)) + 1;
  for (std::size_t i = 0; i < n; ++i)
    s.frames.push_back({static_cast<double>(i) / fps, "f" + std::to_string(i)});
  s.stress = std::move(stress);
  return s;
}

}  // namespace

TEST(Discretize, ThresholdExamples) {
  EXPECT_EQ(discretize(0.39), StressClass::low);
  EXPECT_EQ(discretize(0.76), StressClass::high);
  EXPECT_EQ(discretize(0.0), StressClass::low);
  EXPECT_EQ(discretize(1.0), StressClass::high);
  EXPECT_EQ(discretize(0.40), StressClass::medium);
  EXPECT_EQ(discretize(0.75), StressClass::medium);
}

TEST(Discretize, RejectsOutOfRange) {
  EXPECT_THROW(discretize(-0.01), DataError);
  EXPECT_THROW(discretize(1.01), DataError);
  EXPECT_THROW(discretize(std::nan("")), DataError);
}

TEST(Discretize, GridSweepMatchesRule) {
  for (int k = 0; k <= 100; ++k) {
    // k/100 compared in integer hundredths so the oracle has no rounding of its own
    const double s = k / 100.0;
    const StressClass want = k < 40 ? StressClass::low : k <= 75 ? StressClass::medium : StressClass::high;
    EXPECT_EQ(discretize(s), want) << "score " << s;
  }
}

TEST(Discretize, MonotoneOnRandomPairs) {
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    double a = uniform01(rng), b = uniform01(rng);
    if (a > b) std::swap(a, b);
    EXPECT_LE(index_of(discretize(a)), index_of(discretize(b)));
  }
}

TEST(Thresholds, Validation) {
  EXPECT_THROW((Thresholds{0.8, 0.4}.validate()), ConfigError);
  EXPECT_THROW((Thresholds{0.0, 0.4}.validate()), ConfigError);
  EXPECT_NO_THROW(Thresholds{}.validate());
}

TEST(NormalizeStress, MapsToUnitRange) {
  StressSignal s{{0, 1, 2, 3}, {0.2, 0.4, 0.3, 0.6}};
  auto n = normalize_stress(s);
  EXPECT_DOUBLE_EQ(n.values[0], 0.0);
  EXPECT_DOUBLE_EQ(n.values[3], 1.0);
  EXPECT_NEAR(n.values[1], 0.5, 1e-12);
  EXPECT_EQ(n.timestamps, s.timestamps);
}

TEST(NormalizeStress, ConstantSignalRejected) {
  StressSignal s{{0, 1, 2}, {0.5, 0.5, 0.5}};
  EXPECT_THROW(normalize_stress(s), DataError);
}

TEST(NormalizeStress, IdempotentOnRandomSignals) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    StressSignal s;
    const std::size_t n = 2 + uniform_index(rng, 50);
    for (std::size_t i = 0; i < n; ++i) {
      s.timestamps.push_back(static_cast<double>(i));
      s.values.push_back(uniform01(rng));
    }
    s.values[0] = 0.1;
    s.values[1] = 0.9;
    const auto once = normalize_stress(s);
    const auto twice = normalize_stress(once);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(once.values[i], twice.values[i], 1e-15);
  }
}

TEST(StressSignal, ValidationErrors) {
  EXPECT_THROW((StressSignal{{0, 1}, {0.1}}.validate()), DataError);
  EXPECT_THROW((StressSignal{{0, 0}, {0.1, 0.2}}.validate()), DataError);
  EXPECT_THROW((StressSignal{{0, 1}, {0.1, 1.2}}.validate()), DataError);
  EXPECT_THROW((StressSignal{{0}, {0.1}}.validate()), DataError);
}

TEST(ResampleFrames, TwentyFiveToTwo) {
  auto s = session_with_frames(25.0, 10.0, ramp(41));
  auto r = resample_frames(s, 2.0);
  ASSERT_EQ(r.frames.size(), 21u);
  EXPECT_DOUBLE_EQ(r.fps, 2.0);
  for (std::size_t k = 0; k < r.frames.size(); ++k) {
    // nearest source frame to 0.5 k, earlier one on a tie
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.frames.size(); ++i)
      if (std::abs(s.frames[i].timestamp - 0.5 * k) < std::abs(s.frames[best].timestamp - 0.5 * k) - 1e-12) best = i;
    EXPECT_EQ(r.frames[k].ref, s.frames[best].ref) << k;
    EXPECT_EQ(r.frames[k].timestamp, s.frames[best].timestamp);
  }
  EXPECT_EQ(r.frames[1].ref, "f12");  // 0.5 s sits between 0.48 and 0.52
}

TEST(ResampleFrames, NearestFrameTiesTowardEarlier) {
  DriveSession s;
  s.driver_id = "d";
  s.fps = 4.0;
  s.stress = ramp(10);
  // grid at 2 fps: 0, 0.5, 1.0; 0.5 is equidistant from 0.4 and 0.6
  for (double t : {0.0, 0.4, 0.6, 1.0}) s.frames.push_back({t, std::to_string(t)});
  auto r = resample_frames(s, 2.0);
  ASSERT_EQ(r.frames.size(), 3u);
  EXPECT_DOUBLE_EQ(r.frames[1].timestamp, 0.4);
}

TEST(ResampleFrames, IdempotentAtSameRate) {
  auto s = session_with_frames(25.0, 7.3, ramp(40));
  auto once = resample_frames(s, 2.0);
  auto twice = resample_frames(once, 2.0);
  EXPECT_EQ(once, twice);
}

TEST(ResampleFrames, RejectsUpsampling) {
  auto s = session_with_frames(2.0, 5.0, ramp(30));
  EXPECT_THROW(resample_frames(s, 25.0), ConfigError);
  EXPECT_THROW(resample_frames(s, 0.0), ConfigError);
}

TEST(AlignLabels, NearestNeighborExample) {
  DriveSession s;
  s.driver_id = "d";
  s.fps = 2.0;
  s.frames = {{5.0, "a"}};
  s.stress = {{4.9, 5.2}, {0.3, 0.9}};
  auto l = align_labels(s);
  ASSERT_EQ(l.size(), 1u);
  EXPECT_DOUBLE_EQ(l[0].normalized_score, 0.3);
  EXPECT_EQ(l[0].stress_class, StressClass::low);
}

TEST(AlignLabels, ExactHitAndTies) {
  DriveSession s;
  s.driver_id = "d";
  s.fps = 2.0;
  s.frames = {{1.0, "a"}, {1.5, "b"}};
  s.stress = {{1.0, 2.0}, {0.1, 0.8}};
  auto l = align_labels(s);
  EXPECT_DOUBLE_EQ(l[0].normalized_score, 0.1);
  EXPECT_DOUBLE_EQ(l[1].normalized_score, 0.1);  // 1.5 is a tie between 1.0 and 2.0
}

TEST(AlignLabels, MatchesBruteForceScan) {
  Rng rng(5);
  DriveSession s;
  s.driver_id = "d";
  s.fps = 2.0;
  double t = 0.0;
  for (int i = 0; i < 100; ++i) {
    t += 0.01 + uniform01(rng);
    s.stress.timestamps.push_back(t);
    s.stress.values.push_back(uniform01(rng));
  }
  const double lo = s.stress.timestamps.front(), hi = s.stress.timestamps.back();
  std::vector<double> ft;
  for (int i = 0; i < 100; ++i) ft.push_back(uniform_real(rng, lo, hi));
  std::sort(ft.begin(), ft.end());
  ft.erase(std::unique(ft.begin(), ft.end()), ft.end());
  for (double f : ft) s.frames.push_back({f, ""});
  const auto l = align_labels(s);
  ASSERT_EQ(l.size(), s.frames.size());
  for (std::size_t i = 0; i < l.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < s.stress.size(); ++j)
      if (std::abs(s.stress.timestamps[j] - ft[i]) < std::abs(s.stress.timestamps[best] - ft[i])) best = j;
    EXPECT_EQ(l[i].normalized_score, s.stress.values[best]);
    EXPECT_EQ(l[i].stress_class, discretize(l[i].normalized_score));
  }
}

TEST(AlignLabels, CoverageGapNamed) {
  DriveSession s;
  s.driver_id = "drv";
  s.fps = 2.0;
  s.frames = {{0.0, "a"}, {10.0, "b"}};
  s.stress = {{0.0, 5.0}, {0.1, 0.2}};
  try {
    align_labels(s, 1.0);
    FAIL() << "expected a coverage error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("gap"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("drv"), std::string::npos);
  }
  EXPECT_NO_THROW(align_labels(s, 5.0));
}

TEST(LabelSession, LengthAndConsistency) {
  auto s = session_with_frames(25.0, 20.0, ramp(81));
  const auto l = label_session(s);
  EXPECT_EQ(l.size(), 41u);
  for (const auto& f : l) EXPECT_EQ(f.stress_class, discretize(f.normalized_score));
}

TEST(StressCsv, RoundTripAndErrors) {
  StressSignal s{{0.0, 0.25, 0.5}, {0.1, 0.5, 0.9}};
  std::stringstream ss;
  write_stress_csv(ss, s);
  auto back = parse_stress_csv(ss);
  EXPECT_EQ(back.timestamps, s.timestamps);
  EXPECT_EQ(back.values, s.values);

  std::istringstream bad_header("t,score\n0,0.1\n1,0.2\n");
  EXPECT_THROW(parse_stress_csv(bad_header), DataError);
  std::istringstream bad_row("timestamp_s,score\n0,0.1,3\n1,0.2\n");
  EXPECT_THROW(parse_stress_csv(bad_row), DataError);
  std::istringstream crlf("timestamp_s,score\r\n0,0.1\r\n1,0.2\r\n");
  EXPECT_EQ(parse_stress_csv(crlf).size(), 2u);
}

TEST(SessionManifest, LoadFromDisk) {
  const auto dir = testing_support::temp_dir("manifest");
  SessionManifest m;
  m.driver_id = "1.Drv1-1";
  m.fps = 2.0;
  m.stress_csv = "stress.csv";
  m.frames = {{0.0, "frames/0.png"}, {0.5, "frames/500.png"}};
  write_text_file(dir / "manifest.json", m.to_json().dump());
  write_text_file(dir / "stress.csv", "timestamp_s,score\n0,0.2\n0.5,0.4\n");
  const auto s = load_session(dir / "manifest.json");
  EXPECT_EQ(s.driver_id, "1.Drv1-1");
  ASSERT_EQ(s.frames.size(), 2u);
  EXPECT_EQ(s.frames[1].ref, (dir / "frames/500.png").string());

  write_text_file(dir / "bad.json", R"({"driver_id": "x"})");
  EXPECT_THROW(load_session(dir / "bad.json"), DataError);
}
