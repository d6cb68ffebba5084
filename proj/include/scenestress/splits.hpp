#pragma once

#include <algorithm>
#include <array>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenestress/common.hpp"
#include "scenestress/ingestion.hpp"

namespace scenestress {

/// The nine first-drive driver codes, in corpus order.
inline const std::vector<std::string>& first_drive_ids() {
  static const std::vector<std::string> ids{"1.Drv1-1", "2.Drv2-1",  "3.Drv3-1",
                                            "4.Drv4-1", "5.Drv5-1",  "7.Drv6-1",
                                            "9.Drv7-1", "10.Drv8-1", "11.Drv9-1"};
  return ids;
}

struct SplitPlan {
  std::string split_id;
  std::vector<std::string> train_drivers;  // corpus order
  std::vector<std::string> val_drivers;    // fixed pair, listed order
  std::string test_driver;

  std::string role_of(const std::string& driver) const {
    if (driver == test_driver) return "test";
    if (std::find(val_drivers.begin(), val_drivers.end(), driver) != val_drivers.end()) return "val";
    if (std::find(train_drivers.begin(), train_drivers.end(), driver) != train_drivers.end())
      return "train";
    return "";
  }

  void validate(std::span<const std::string> corpus) const {
    std::set<std::string> seen;
    auto add = [&](const std::string& d) {
      if (!seen.insert(d).second)
        throw DataError(split_id + ": driver " + d + " assigned to more than one role");
    };
    for (const auto& d : train_drivers) add(d);
    for (const auto& d : val_drivers) add(d);
    add(test_driver);
    if (seen != std::set<std::string>(corpus.begin(), corpus.end()))
      throw DataError(split_id + ": roles do not cover the corpus exactly");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["split_id"] = split_id;
    j["train_drivers"] = train_drivers;
    j["val_drivers"] = val_drivers;
    j["test_driver"] = test_driver;
    return j;
  }

  static SplitPlan from_json(const nlohmann::json& j) {
    try {
      return {j.at("split_id").get<std::string>(),
              j.at("train_drivers").get<std::vector<std::string>>(),
              j.at("val_drivers").get<std::vector<std::string>>(),
              j.at("test_driver").get<std::string>()};
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed split plan: ") + e.what());
    }
  }
};

/// Leave-one-driver-out plan with fixed validation pairs.
inline std::vector<SplitPlan> lodo_plan(std::span<const std::string> corpus) {
  const auto& ids = first_drive_ids();
  const std::set<std::string> expected(ids.begin(), ids.end());
  const std::set<std::string> given(corpus.begin(), corpus.end());
  if (given.size() != corpus.size()) throw DataError("corpus lists a driver more than once");
  for (const auto& d : given)
    if (!expected.count(d)) throw DataError("unknown driver id '" + d + "'");
  for (const auto& d : expected)
    if (!given.count(d)) throw DataError("corpus is missing driver '" + d + "'");

  struct Row {
    const char* split;
    std::array<const char*, 2> val;
    const char* test;
  };
  static constexpr std::array<Row, 9> table{{
      {"D_1", {"2.Drv2-1", "10.Drv8-1"}, "1.Drv1-1"},
      {"D_2", {"3.Drv3-1", "11.Drv9-1"}, "2.Drv2-1"},
      {"D_3", {"1.Drv1-1", "9.Drv7-1"}, "3.Drv3-1"},
      {"D_4", {"9.Drv7-1", "2.Drv2-1"}, "4.Drv4-1"},
      {"D_5", {"1.Drv1-1", "11.Drv9-1"}, "5.Drv5-1"},
      {"D_7", {"4.Drv4-1", "10.Drv8-1"}, "7.Drv6-1"},
      {"D_9", {"3.Drv3-1", "5.Drv5-1"}, "9.Drv7-1"},
      {"D_10", {"7.Drv6-1", "5.Drv5-1"}, "10.Drv8-1"},
      {"D_11", {"3.Drv3-1", "4.Drv4-1"}, "11.Drv9-1"},
  }};

  std::vector<SplitPlan> plans;
  for (const auto& row : table) {
    SplitPlan p;
    p.split_id = row.split;
    p.val_drivers = {row.val[0], row.val[1]};
    p.test_driver = row.test;
    for (const auto& d : ids)
      if (d != p.test_driver && d != p.val_drivers[0] && d != p.val_drivers[1])
        p.train_drivers.push_back(d);
    p.validate(ids);
    plans.push_back(std::move(p));
  }
  return plans;
}

inline const SplitPlan& find_plan(std::span<const SplitPlan> plans, std::string_view split_id) {
  for (const auto& p : plans)
    if (p.split_id == split_id) return p;
  throw ConfigError("unknown split '" + std::string(split_id) + "'");
}

// ---------------------------------------------------------------------------
// Clips: a window of n seconds ending at a labeled frame.

struct ClipSample {
  std::string driver_id;
  std::size_t session = 0;      // index of the labeled session the frames belong to
  std::size_t first_frame = 0;  // inclusive
  std::size_t end_frame = 0;    // inclusive; the labeled frame
  double end_timestamp = 0.0;
  double window_seconds = 0.0;
  StressClass label = StressClass::low;

  std::size_t frame_count() const noexcept { return end_frame - first_frame + 1; }
  std::string key() const { return driver_id + "@" + std::to_string(timestamp_ms(end_timestamp)); }
};

/// Clips whose full window (end - n, end] lies inside the drive, one per stride step.
inline std::vector<ClipSample> build_clips(std::span<const LabeledFrame> frames,
                                           double window_seconds, double stride_seconds,
                                           std::size_t session_index = 0) {
  if (!(window_seconds > 0.0)) throw ConfigError("clip window must be positive");
  if (!(stride_seconds > 0.0)) throw ConfigError("clip stride must be positive");
  std::vector<ClipSample> clips;
  if (frames.empty()) return clips;
  constexpr double eps = 1e-9;
  const double t_first = frames.front().timestamp;
  const double t_last = frames.back().timestamp;
  if (t_last - t_first < window_seconds - eps) {
    warn("drive " + frames.front().driver_id + " (" + format_double(t_last - t_first) +
         " s) is shorter than the " + format_double(window_seconds) + " s clip window");
    return clips;
  }
  std::size_t first = 0;
  std::size_t end = 0;
  for (std::size_t k = 0;; ++k) {
    const double e = t_first + window_seconds + static_cast<double>(k) * stride_seconds;
    if (e > t_last + eps) break;
    while (end + 1 < frames.size() && frames[end + 1].timestamp <= e + eps) ++end;
    std::size_t pick = end;
    if (end + 1 < frames.size() &&
        frames[end + 1].timestamp - e < e - frames[end].timestamp)
      pick = end + 1;
    if (!clips.empty() && clips.back().end_frame == pick) continue;
    const double t_end = frames[pick].timestamp;
    if (t_end - window_seconds < t_first - eps) continue;
    while (frames[first].timestamp <= t_end - window_seconds + eps) ++first;
    ClipSample c;
    c.driver_id = frames[pick].driver_id;
    c.session = session_index;
    c.first_frame = first;
    c.end_frame = pick;
    c.end_timestamp = t_end;
    c.window_seconds = window_seconds;
    c.label = frames[pick].stress_class;
    clips.push_back(std::move(c));
  }
  return clips;
}

// ---------------------------------------------------------------------------
// Class balancing.

enum class PartitionRole { train, val, test };

constexpr std::string_view to_string(PartitionRole r) noexcept {
  switch (r) {
    case PartitionRole::train: return "train";
    case PartitionRole::val: return "val";
    case PartitionRole::test: return "test";
  }
  return "?";
}

using ClassCounts = std::array<std::size_t, kNumClasses>;

template <typename Sample>
struct BalancedPartition {
  PartitionRole role = PartitionRole::train;
  std::vector<Sample> samples;
  std::uint64_t seed = 0;
  ClassCounts counts_before{};
  ClassCounts counts_after{};
};

template <typename Sample, typename ClassOf>
ClassCounts count_classes(std::span<const Sample> samples, ClassOf class_of) {
  ClassCounts c{};
  for (const auto& s : samples) ++c[index_of(class_of(s))];
  return c;
}

/// Train: upsample every class with replacement to the largest class count.
/// Val/test: downsample every class without replacement to the smallest count.
template <typename Sample, typename ClassOf>
BalancedPartition<Sample> balance(std::span<const Sample> samples, PartitionRole role,
                                  std::uint64_t seed, ClassOf class_of) {
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i)
    by_class[index_of(class_of(samples[i]))].push_back(i);
  for (auto c : kAllClasses)
    if (by_class[index_of(c)].empty())
      throw DataError(std::string(to_string(role)) + " partition has no '" +
                      std::string(to_string(c)) + "' samples; cannot balance");

  BalancedPartition<Sample> out;
  out.role = role;
  out.seed = seed;
  for (std::size_t p = 0; p < kNumClasses; ++p) out.counts_before[p] = by_class[p].size();
  Rng rng(seed);

  if (role == PartitionRole::train) {
    const std::size_t target = *std::max_element(out.counts_before.begin(), out.counts_before.end());
    for (const auto& idx : by_class) {
      for (auto i : idx) out.samples.push_back(samples[i]);
      for (std::size_t k = idx.size(); k < target; ++k)
        out.samples.push_back(samples[idx[uniform_index(rng, idx.size())]]);
    }
  } else {
    const std::size_t target = *std::min_element(out.counts_before.begin(), out.counts_before.end());
    for (auto idx : by_class) {
      for (std::size_t k = 0; k < target; ++k) {
        const std::size_t j = k + uniform_index(rng, idx.size() - k);
        std::swap(idx[k], idx[j]);
      }
      idx.resize(target);
      std::sort(idx.begin(), idx.end());
      for (auto i : idx) out.samples.push_back(samples[i]);
    }
  }
  out.counts_after = count_classes<Sample>(out.samples, class_of);
  return out;
}

template <typename Sample, typename ClassOf>
BalancedPartition<Sample> balance(const std::vector<Sample>& samples, PartitionRole role,
                                  std::uint64_t seed, ClassOf class_of) {
  return balance(std::span<const Sample>(samples), role, seed, class_of);
}

inline nlohmann::ordered_json partition_manifest(const std::string& split_id,
                                                 const BalancedPartition<ClipSample>& part) {
  nlohmann::ordered_json j;
  j["split_id"] = split_id;
  j["role"] = std::string(to_string(part.role));
  j["seed"] = part.seed;
  j["counts_before"] = part.counts_before;
  j["counts"] = part.counts_after;
  auto& keys = j["samples"] = nlohmann::ordered_json::array();
  for (const auto& s : part.samples)
    keys.push_back({{"key", s.key()}, {"label", std::string(to_string(s.label))}});
  return j;
}

}  // namespace scenestress
