#include <gtest/gtest.h>

#include <map>
#include <set>

#include "scenestress/splits.hpp"
#include "world.hpp"

using namespace scenestress;

namespace {

std::vector<LabeledFrame> frames_at(double fps, double seconds, const std::string& driver = "d") {
  std::vector<LabeledFrame> out;
  const auto n = static_cast<std::size_t>(std::llround(seconds * fps)) + 1;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledFrame f;
    f.driver_id = driver;
    f.timestamp = static_cast<double>(i) / fps;
    f.stress_class = class_at(i % kNumClasses);
    out.push_back(f);
  }
  return out;
}

struct Item {
  int id;
  StressClass c;
};

std::vector<Item> items(std::size_t low, std::size_t med, std::size_t high) {
  std::vector<Item> v;
  int id = 0;
  for (std::size_t i = 0; i < low; ++i) v.push_back({id++, StressClass::low});
  for (std::size_t i = 0; i < med; ++i) v.push_back({id++, StressClass::medium});
  for (std::size_t i = 0; i < high; ++i) v.push_back({id++, StressClass::high});
  return v;
}

auto class_of = [](const Item& i) { return i.c; };

}  // namespace

TEST(LodoPlan, MatchesFixtureBytes) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& p : lodo_plan(first_drive_ids())) arr.push_back(p.to_json());
  EXPECT_EQ(arr.dump(2) + "\n", testing_support::read_file(SCENESTRESS_FIXTURES "/lodo_plan.json"));
}

TEST(LodoPlan, KnownValidationPairs) {
  const auto plans = lodo_plan(first_drive_ids());
  ASSERT_EQ(plans.size(), 9u);
  const auto& d1 = find_plan(plans, "D_1");
  EXPECT_EQ(d1.val_drivers, (std::vector<std::string>{"2.Drv2-1", "10.Drv8-1"}));
  EXPECT_EQ(d1.test_driver, "1.Drv1-1");
  const auto& d11 = find_plan(plans, "D_11");
  EXPECT_EQ(d11.val_drivers, (std::vector<std::string>{"3.Drv3-1", "4.Drv4-1"}));
  EXPECT_EQ(d11.test_driver, "11.Drv9-1");
  EXPECT_THROW(find_plan(plans, "D_6"), ConfigError);
}

TEST(LodoPlan, EachDriverTestedOnceAndRolesDisjoint) {
  const auto plans = lodo_plan(first_drive_ids());
  std::map<std::string, int> tested;
  for (const auto& p : plans) {
    ++tested[p.test_driver];
    EXPECT_EQ(p.train_drivers.size(), 6u);
    std::set<std::string> all(p.train_drivers.begin(), p.train_drivers.end());
    all.insert(p.val_drivers.begin(), p.val_drivers.end());
    all.insert(p.test_driver);
    EXPECT_EQ(all.size(), 9u);
    EXPECT_NO_THROW(p.validate(first_drive_ids()));
    EXPECT_EQ(SplitPlan::from_json(p.to_json()).to_json(), p.to_json());
  }
  EXPECT_EQ(tested.size(), 9u);
  for (const auto& [d, n] : tested) EXPECT_EQ(n, 1) << d;
}

TEST(LodoPlan, RejectsIncompleteOrUnknownCorpus) {
  auto ids = first_drive_ids();
  ids.pop_back();
  EXPECT_THROW(lodo_plan(ids), DataError);
  ids.push_back("12.Drv10-1");
  EXPECT_THROW(lodo_plan(ids), DataError);
  auto dup = first_drive_ids();
  dup.push_back(dup.front());
  EXPECT_THROW(lodo_plan(dup), DataError);
}

TEST(BuildClips, HundredSecondDrive) {
  const auto f = frames_at(2.0, 100.0);
  const auto clips = build_clips(f, 32.0, 0.5);
  // brute force: window ends e with e - 32 >= 0 and e <= 100 on the 0.5 s grid
  std::vector<double> ends;
  for (int k = 0; k <= 200; ++k)
    if (k * 0.5 >= 32.0 && k * 0.5 <= 100.0) ends.push_back(k * 0.5);
  ASSERT_EQ(clips.size(), ends.size());
  EXPECT_EQ(clips.size(), 137u);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    EXPECT_DOUBLE_EQ(clips[i].end_timestamp, ends[i]);
    EXPECT_EQ(clips[i].frame_count(), 64u);
    EXPECT_EQ(clips[i].label, f[clips[i].end_frame].stress_class);
  }
}

TEST(BuildClips, WindowLongerThanDriveGivesNone) {
  warnings_enabled() = false;
  EXPECT_TRUE(build_clips(frames_at(2.0, 10.0), 32.0, 0.5).empty());
  warnings_enabled() = true;
  EXPECT_THROW(build_clips(frames_at(2.0, 10.0), 0.0, 0.5), ConfigError);
  EXPECT_THROW(build_clips(frames_at(2.0, 10.0), 1.0, -1.0), ConfigError);
}

TEST(BuildClips, FrameCountIsWindowTimesFps) {
  for (double n : {1.0, 2.0, 7.5, 20.0}) {
    const auto clips = build_clips(frames_at(2.0, 60.0), n, 2.0);
    ASSERT_FALSE(clips.empty());
    for (const auto& c : clips) EXPECT_EQ(c.frame_count(), static_cast<std::size_t>(n * 2.0));
  }
}

TEST(Balance, TrainUpsamplesToMax) {
  const auto v = items(12, 33, 55);
  const auto b = balance(v, PartitionRole::train, 9, class_of);
  EXPECT_EQ(b.counts_after, (ClassCounts{55, 55, 55}));
  EXPECT_EQ(b.counts_before, (ClassCounts{12, 33, 55}));
  // every original sample is kept
  std::set<int> ids;
  for (const auto& s : b.samples) ids.insert(s.id);
  EXPECT_EQ(ids.size(), 100u);
}

TEST(Balance, EvalDownsamplesToMinAsSubset) {
  const auto v = items(10, 20, 30);
  for (auto role : {PartitionRole::val, PartitionRole::test}) {
    const auto b = balance(v, role, 4, class_of);
    EXPECT_EQ(b.counts_after, (ClassCounts{10, 10, 10}));
    std::set<int> ids;
    for (const auto& s : b.samples) {
      EXPECT_TRUE(ids.insert(s.id).second) << "duplicate in " << to_string(role);
      EXPECT_EQ(v[static_cast<std::size_t>(s.id)].c, s.c);
    }
  }
}

TEST(Balance, AlreadyBalancedIsIdentityUpToOrder) {
  const auto v = items(7, 7, 7);
  for (auto role : {PartitionRole::train, PartitionRole::test}) {
    const auto b = balance(v, role, 1, class_of);
    std::multiset<int> got, want;
    for (const auto& s : b.samples) got.insert(s.id);
    for (const auto& s : v) want.insert(s.id);
    EXPECT_EQ(got, want);
  }
}

TEST(Balance, DeterministicForSeed) {
  const auto v = items(5, 40, 17);
  for (auto role : {PartitionRole::train, PartitionRole::val}) {
    const auto a = balance(v, role, 123, class_of), b = balance(v, role, 123, class_of);
    ASSERT_EQ(a.samples.size(), b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_EQ(a.samples[i].id, b.samples[i].id);
  }
  const auto a = balance(v, PartitionRole::val, 1, class_of), c = balance(v, PartitionRole::val, 2, class_of);
  bool differs = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) differs |= a.samples[i].id != c.samples[i].id;
  EXPECT_TRUE(differs);
}

TEST(Balance, MissingClassNamed) {
  const auto v = items(3, 0, 2);
  try {
    balance(v, PartitionRole::train, 0, class_of);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("medium"), std::string::npos);
  }
}

TEST(Balance, RandomBaselineNearOneThird) {
  const auto v = items(100, 250, 400);
  const auto b = balance(v, PartitionRole::test, 77, class_of);
  ASSERT_GE(b.samples.size(), 300u);
  Rng rng(78);
  std::size_t correct = 0;
  for (const auto& s : b.samples) correct += class_at(uniform_index(rng, 3)) == s.c;
  EXPECT_NEAR(static_cast<double>(correct) / static_cast<double>(b.samples.size()), 1.0 / 3.0, 0.05);
}

TEST(SplitData, PartitionsNeverShareDrivers) {
  ExperimentConfig cfg;
  cfg.synth.min_segment_seconds = 40;
  cfg.synth.max_segment_seconds = 60;
  const auto w = testing_support::make_world(cfg, false);
  for (const auto& plan : lodo_plan(first_drive_ids())) {
    const auto d = make_split_data(w.labeled, plan, cfg);
    std::set<std::string> roles[3];
    for (const auto& c : d.train.samples) roles[0].insert(c.driver_id);
    for (const auto& c : d.val.samples) roles[1].insert(c.driver_id);
    for (const auto& c : d.test.samples) roles[2].insert(c.driver_id);
    EXPECT_EQ(roles[2], std::set<std::string>{plan.test_driver});
    EXPECT_EQ(roles[1], std::set<std::string>(plan.val_drivers.begin(), plan.val_drivers.end()));
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b)
        for (const auto& id : roles[a]) EXPECT_FALSE(roles[b].count(id)) << plan.split_id << " " << id;
    const auto m = partition_manifest(plan.split_id, d.test);
    EXPECT_EQ(m.at("seed").get<std::uint64_t>(), d.test.seed);
    EXPECT_EQ(m.at("samples").size(), d.test.samples.size());
  }
}
