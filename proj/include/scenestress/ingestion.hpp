#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "scenestress/common.hpp"

namespace scenestress {

/// Continuous stress annotation: strictly increasing timestamps (s), values in [0,1].
struct StressSignal {
  std::vector<double> timestamps;
  std::vector<double> values;

  std::size_t size() const noexcept { return timestamps.size(); }

  void validate() const {
    if (timestamps.size() != values.size())
      throw DataError("stress signal: timestamp/value length mismatch");
    if (timestamps.size() < 2) throw DataError("stress signal needs at least 2 samples");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!(values[i] >= 0.0 && values[i] <= 1.0))
        throw DataError("stress value " + format_double(values[i]) + " at t=" +
                        format_double(timestamps[i]) + " is outside [0,1]");
      if (i > 0 && !(timestamps[i] > timestamps[i - 1]))
        throw DataError("stress timestamps not strictly increasing at t=" +
                        format_double(timestamps[i]));
    }
  }
};

struct FrameRef {
  double timestamp = 0.0;
  std::string ref;  // frame file path (relative to the session root) or store key

  bool operator==(const FrameRef&) const = default;
};

struct DriveSession {
  std::string driver_id;
  std::vector<FrameRef> frames;
  StressSignal stress;
  double fps = 0.0;

  void validate() const {
    if (driver_id.empty()) throw DataError("session without driver_id");
    if (!(fps > 0.0)) throw DataError("session " + driver_id + ": fps must be positive");
    for (std::size_t i = 1; i < frames.size(); ++i)
      if (!(frames[i].timestamp > frames[i - 1].timestamp))
        throw DataError("session " + driver_id + ": frame timestamps not strictly increasing");
    stress.validate();
  }

  bool operator==(const DriveSession& o) const {
    return driver_id == o.driver_id && frames == o.frames && fps == o.fps &&
           stress.timestamps == o.stress.timestamps && stress.values == o.stress.values;
  }
};

/// Class boundaries on the normalized score: low [0, lower), medium [lower, upper],
/// high (upper, 1].
struct Thresholds {
  double lower = 0.4;
  double upper = 0.75;

  void validate() const {
    if (!(0.0 < lower && lower < upper && upper < 1.0))
      throw ConfigError("thresholds must satisfy 0 < lower < upper < 1");
  }
};

struct LabeledFrame {
  std::string driver_id;
  double timestamp = 0.0;
  std::string ref;
  double normalized_score = 0.0;
  StressClass stress_class = StressClass::low;
};

// ---------------------------------------------------------------------------

inline StressClass discretize(double score, const Thresholds& th = {}) {
  if (!(score >= 0.0 && score <= 1.0))
    throw DataError("score " + format_double(score) + " is outside [0,1]");
  if (score < th.lower) return StressClass::low;
  if (score <= th.upper) return StressClass::medium;
  return StressClass::high;
}

/// Per-driver min-max normalization.
inline StressSignal normalize_stress(const StressSignal& signal) {
  signal.validate();
  const auto [lo_it, hi_it] = std::minmax_element(signal.values.begin(), signal.values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) throw DataError("cannot normalize a constant stress signal");
  StressSignal out = signal;
  const double range = hi - lo;
  for (double& v : out.values) v = (v - lo) / range;
  return out;
}

/// Keeps, for each point of the grid t0 + k/target_fps, the nearest source frame
/// (ties toward the earlier frame). Equal rates return the session unchanged.
inline DriveSession resample_frames(const DriveSession& session, double target_fps) {
  if (!(target_fps > 0.0)) throw ConfigError("target fps must be positive");
  if (target_fps > session.fps)
    throw ConfigError("target fps " + format_double(target_fps) + " exceeds source fps " +
                      format_double(session.fps) + " of session " + session.driver_id +
                      "; upsampling frames is not supported");
  if (target_fps == session.fps || session.frames.empty()) {
    DriveSession same = session;
    same.fps = target_fps;
    return same;
  }
  DriveSession out = session;
  out.fps = target_fps;
  out.frames.clear();

  const auto& frames = session.frames;
  const double t0 = frames.front().timestamp;
  const double t_last = frames.back().timestamp;
  const double step = 1.0 / target_fps;
  std::size_t cursor = 0;
  for (std::size_t k = 0;; ++k) {
    const double g = t0 + static_cast<double>(k) * step;
    if (g > t_last + 1e-9) break;
    while (cursor + 1 < frames.size() && frames[cursor + 1].timestamp <= g) ++cursor;
    std::size_t pick = cursor;
    if (cursor + 1 < frames.size()) {
      const double before = g - frames[cursor].timestamp;
      const double after = frames[cursor + 1].timestamp - g;
      if (after < before) pick = cursor + 1;
    }
    if (out.frames.empty() || out.frames.back().timestamp < frames[pick].timestamp)
      out.frames.push_back(frames[pick]);
  }
  return out;
}

/// Nearest stress sample per frame (ties toward the earlier sample). The signal
/// must cover the frame range up to `slack_seconds` at either end.
inline std::vector<LabeledFrame> align_labels(const DriveSession& session,
                                              double slack_seconds = 1.0,
                                              const Thresholds& th = {}) {
  session.stress.validate();
  std::vector<LabeledFrame> out;
  if (session.frames.empty()) return out;
  const auto& ts = session.stress.timestamps;
  const double first_frame = session.frames.front().timestamp;
  const double last_frame = session.frames.back().timestamp;
  if (ts.front() > first_frame + slack_seconds)
    throw DataError("session " + session.driver_id + ": stress signal starts at " +
                    format_double(ts.front()) + " s but frames start at " +
                    format_double(first_frame) + " s (gap " +
                    format_double(ts.front() - first_frame) + " s exceeds slack)");
  if (ts.back() < last_frame - slack_seconds)
    throw DataError("session " + session.driver_id + ": stress signal ends at " +
                    format_double(ts.back()) + " s but frames end at " +
                    format_double(last_frame) + " s (gap " +
                    format_double(last_frame - ts.back()) + " s exceeds slack)");

  out.reserve(session.frames.size());
  for (const auto& f : session.frames) {
    auto it = std::lower_bound(ts.begin(), ts.end(), f.timestamp);
    std::size_t j;
    if (it == ts.end()) {
      j = ts.size() - 1;
    } else if (it == ts.begin()) {
      j = 0;
    } else {
      j = static_cast<std::size_t>(it - ts.begin());
      if (f.timestamp - ts[j - 1] <= ts[j] - f.timestamp) j = j - 1;
    }
    const double v = session.stress.values[j];
    out.push_back({session.driver_id, f.timestamp, f.ref, v, discretize(v, th)});
  }
  return out;
}

/// A drive after resampling and labeling; clips index into `frames`.
struct LabeledSession {
  std::string driver_id;
  double fps = 0.0;
  std::vector<LabeledFrame> frames;
};

struct LabelingOptions {
  double target_fps = 2.0;
  double coverage_slack = 1.0;
  bool normalize = true;
  Thresholds thresholds{};
};

/// resample -> per-driver normalization -> nearest-sample alignment.
inline std::vector<LabeledFrame> label_session(const DriveSession& session,
                                               const LabelingOptions& opt = {}) {
  DriveSession s = resample_frames(session, std::min(opt.target_fps, session.fps));
  if (opt.normalize) s.stress = normalize_stress(s.stress);
  return align_labels(s, opt.coverage_slack, opt.thresholds);
}

// ---------------------------------------------------------------------------
// Files: stress CSV (`timestamp_s,score`) and the per-drive JSON manifest.

inline StressSignal parse_stress_csv(std::istream& in, const std::string& origin = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw DataError(origin + ": empty stress CSV");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "timestamp_s,score")
    throw DataError(origin + ": expected header 'timestamp_s,score', got '" + line + "'");
  StressSignal s;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
      throw DataError(origin + ":" + std::to_string(lineno) + ": expected two columns");
    try {
      s.timestamps.push_back(parse_double(std::string_view(line).substr(0, comma)));
      s.values.push_back(parse_double(std::string_view(line).substr(comma + 1)));
    } catch (const DataError& e) {
      throw DataError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  s.validate();
  return s;
}

inline StressSignal read_stress_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open stress CSV " + path.string());
  return parse_stress_csv(in, path.string());
}

inline void write_stress_csv(std::ostream& out, const StressSignal& s) {
  out << "timestamp_s,score\n";
  for (std::size_t i = 0; i < s.size(); ++i)
    out << format_double(s.timestamps[i]) << ',' << format_double(s.values[i]) << '\n';
}

struct SessionManifest {
  std::string driver_id;
  double fps = 0.0;
  std::string stress_csv;
  std::string masks_dir;  // optional; masks named <timestamp_ms>.png
  std::vector<FrameRef> frames;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["driver_id"] = driver_id;
    j["fps"] = fps;
    j["stress_csv"] = stress_csv;
    if (!masks_dir.empty()) j["masks_dir"] = masks_dir;
    auto& arr = j["frames"] = nlohmann::ordered_json::array();
    for (const auto& f : frames) arr.push_back({{"t", f.timestamp}, {"path", f.ref}});
    return j;
  }

  static SessionManifest from_json(const nlohmann::json& j) {
    SessionManifest m;
    try {
      m.driver_id = j.at("driver_id").get<std::string>();
      m.fps = j.at("fps").get<double>();
      m.stress_csv = j.at("stress_csv").get<std::string>();
      m.masks_dir = j.value("masks_dir", std::string{});
      for (const auto& f : j.at("frames"))
        m.frames.push_back({f.at("t").get<double>(), f.at("path").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed session manifest: ") + e.what());
    }
    return m;
  }
};

inline std::int64_t timestamp_ms(double t) { return std::llround(t * 1000.0); }

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

/// Loads a manifest and its stress CSV. Frame refs are resolved to paths
/// relative to the manifest's directory.
inline DriveSession load_session(const std::filesystem::path& manifest_path) {
  const auto m = SessionManifest::from_json(read_json_file(manifest_path));
  const auto root = manifest_path.parent_path();
  DriveSession s;
  s.driver_id = m.driver_id;
  s.fps = m.fps;
  s.stress = read_stress_csv(root / m.stress_csv);
  s.frames.reserve(m.frames.size());
  for (const auto& f : m.frames) s.frames.push_back({f.timestamp, (root / f.ref).string()});
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Frame access. Frames are BGR 8-bit cv::Mat.

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual cv::Mat load(const std::string& ref) const = 0;
};

class DiskFrameSource final : public FrameSource {
 public:
  cv::Mat load(const std::string& ref) const override {
    cv::Mat img = cv::imread(ref, cv::IMREAD_COLOR);
    if (img.empty()) throw DataError("cannot read frame image " + ref);
    return img;
  }
};

class MemoryFrameSource final : public FrameSource {
 public:
  void put(std::string ref, cv::Mat image) { frames_[std::move(ref)] = std::move(image); }
  bool contains(const std::string& ref) const { return frames_.count(ref) != 0; }
  std::size_t size() const noexcept { return frames_.size(); }

  cv::Mat load(const std::string& ref) const override {
    auto it = frames_.find(ref);
    if (it == frames_.end()) throw DataError("no frame stored under " + ref);
    return it->second;
  }

 private:
  std::map<std::string, cv::Mat> frames_;
};

}  // namespace scenestress
