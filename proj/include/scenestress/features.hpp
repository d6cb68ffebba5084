#pragma once

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "scenestress/common.hpp"
#include "scenestress/ingestion.hpp"
#include "scenestress/taxonomy.hpp"

namespace scenestress {

/// Per-pixel category indices (0..65, or 255 for void), row-major.
struct SegmentationMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> labels;

  SegmentationMask() = default;
  SegmentationMask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), labels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  std::uint8_t& at(int x, int y) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t pixel_count() const noexcept { return labels.size(); }

  void validate() const {
    if (width <= 0 || height <= 0 || labels.empty()) throw DataError("empty segmentation mask");
    if (labels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
      throw DataError("mask size does not match its dimensions");
    for (auto l : labels)
      if (l >= kNumCategories && l != kVoidLabel)
        throw DataError("mask contains category index " + std::to_string(l) +
                        " outside the 66-category taxonomy");
  }

  bool operator==(const SegmentationMask&) const = default;

  cv::Mat to_mat() const {
    cv::Mat m(height, width, CV_8UC1);
    std::copy(labels.begin(), labels.end(), m.ptr<std::uint8_t>(0));
    return m;
  }

  static SegmentationMask from_mat(const cv::Mat& m) {
    if (m.empty()) throw DataError("empty segmentation mask image");
    if (m.type() != CV_8UC1) throw DataError("segmentation mask must be single-channel 8-bit");
    SegmentationMask out(m.cols, m.rows);
    for (int y = 0; y < m.rows; ++y) {
      const auto* row = m.ptr<std::uint8_t>(y);
      std::copy(row, row + m.cols, out.labels.begin() + static_cast<std::ptrdiff_t>(y) * m.cols);
    }
    return out;
  }
};

inline SegmentationMask read_mask_png(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw DataError("cannot read mask " + path.string());
  auto mask = SegmentationMask::from_mat(m);
  mask.validate();
  return mask;
}

inline void write_mask_png(const std::filesystem::path& path, const SegmentationMask& mask) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mask.to_mat())) throw DataError("cannot write " + path.string());
}

// ---------------------------------------------------------------------------

using OccupancyVector = std::array<double, kNumCategories>;

struct OccupancyCounts {
  std::array<std::uint64_t, kNumCategories> counts{};
  std::uint64_t void_count = 0;
  std::uint64_t total = 0;
};

inline OccupancyCounts occupancy_counts(const SegmentationMask& mask) {
  mask.validate();
  OccupancyCounts c;
  for (auto l : mask.labels) {
    if (l == kVoidLabel)
      ++c.void_count;
    else
      ++c.counts[l];
  }
  c.total = mask.pixel_count();
  return c;
}

/// Fraction of the image area per category; void pixels only enlarge the denominator.
inline OccupancyVector occupancy_vector(const SegmentationMask& mask) {
  const auto c = occupancy_counts(mask);
  OccupancyVector v{};
  const double total = static_cast<double>(c.total);
  for (std::size_t i = 0; i < kNumCategories; ++i)
    v[i] = static_cast<double>(c.counts[i]) / total;
  return v;
}

// ---------------------------------------------------------------------------
// Segmenter adapters. An adapter turns a frame into a mask over the taxonomy.

struct FrameView {
  std::string driver_id;
  double timestamp = 0.0;
  std::string ref;
  const FrameSource* frames = nullptr;  // may be null for adapters that ignore pixels
};

class SegmenterAdapter {
 public:
  virtual ~SegmenterAdapter() = default;
  virtual std::string name() const = 0;
  /// Raw adapter output; callers go through segment_checked().
  virtual SegmentationMask segment(const FrameView& frame) const = 0;
  virtual bool reads_pixels() const { return true; }

  SegmentationMask segment_checked(const FrameView& frame) const {
    SegmentationMask m = segment(frame);
    m.validate();
    if (reads_pixels() && frame.frames != nullptr) {
      const cv::Mat img = frame.frames->load(frame.ref);
      if (img.cols != m.width || img.rows != m.height)
        throw DataError(name() + ": mask " + std::to_string(m.width) + "x" +
                        std::to_string(m.height) + " does not match frame " +
                        std::to_string(img.cols) + "x" + std::to_string(img.rows) + " (" +
                        frame.ref + ")");
    }
    return m;
  }
};

/// Color table used to render synthetic frames: one flat color per category.
/// Road is black; every other category gets a distinct non-black color.
inline const std::array<cv::Vec3b, kNumCategories>& synthetic_palette() {
  static const auto table = [] {
    std::array<cv::Vec3b, kNumCategories> t{};
    for (std::size_t i = 0; i < kNumCategories; ++i) {
      const std::size_t code = i + 1;
      const auto b = static_cast<std::uint8_t>((code % 5) * 63);
      const auto g = static_cast<std::uint8_t>(((code / 5) % 5) * 63);
      const auto r = static_cast<std::uint8_t>((code / 25) * 63);
      t[i] = cv::Vec3b(b, g, r);
    }
    t[CategoryTaxonomy::mapillary_vistas().index("Road")] = cv::Vec3b(0, 0, 0);
    return t;
  }();
  return table;
}

/// Inverts the synthetic palette; unknown colors become void.
class SyntheticSegmenter final : public SegmenterAdapter {
 public:
  std::string name() const override { return "synthetic"; }

  SegmentationMask segment(const FrameView& frame) const override {
    if (frame.frames == nullptr) throw DataError("synthetic segmenter needs frame pixels");
    return segment_image(frame.frames->load(frame.ref));
  }

  static SegmentationMask segment_image(const cv::Mat& bgr) {
    if (bgr.empty() || bgr.type() != CV_8UC3) throw DataError("synthetic segmenter expects BGR 8-bit");
    std::map<std::uint32_t, std::uint8_t> lookup;
    const auto& pal = synthetic_palette();
    for (std::size_t i = 0; i < pal.size(); ++i) lookup[pack(pal[i])] = static_cast<std::uint8_t>(i);
    SegmentationMask m(bgr.cols, bgr.rows);
    for (int y = 0; y < bgr.rows; ++y)
      for (int x = 0; x < bgr.cols; ++x) {
        auto it = lookup.find(pack(bgr.at<cv::Vec3b>(y, x)));
        m.at(x, y) = it == lookup.end() ? kVoidLabel : it->second;
      }
    return m;
  }

 private:
  static std::uint32_t pack(const cv::Vec3b& c) {
    return (std::uint32_t{c[2]} << 16) | (std::uint32_t{c[1]} << 8) | c[0];
  }
};

/// Masks precomputed on disk as <dir>/<timestamp_ms>.png, one directory per driver.
class CachedMaskSegmenter final : public SegmenterAdapter {
 public:
  explicit CachedMaskSegmenter(std::map<std::string, std::filesystem::path> dirs_by_driver)
      : dirs_(std::move(dirs_by_driver)) {}

  std::string name() const override { return "cached"; }
  bool reads_pixels() const override { return false; }

  std::filesystem::path path_for(const FrameView& frame) const {
    auto it = dirs_.find(frame.driver_id);
    if (it == dirs_.end()) throw DataError("no mask directory for driver " + frame.driver_id);
    return it->second / (std::to_string(timestamp_ms(frame.timestamp)) + ".png");
  }

  SegmentationMask segment(const FrameView& frame) const override {
    const auto p = path_for(frame);
    if (!std::filesystem::exists(p))
      throw DataError("missing mask for frame " + frame.driver_id + " t=" +
                      format_double(frame.timestamp) + " (" + p.string() + ")");
    cv::Mat m = cv::imread(p.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw DataError("cannot read mask " + p.string());
    return SegmentationMask::from_mat(m);
  }

 private:
  std::map<std::string, std::filesystem::path> dirs_;
};

/// Runs an external command per frame. `{in}` and `{out}` in the template are
/// replaced by the frame path and a temporary mask path.
class ExternalSegmenter final : public SegmenterAdapter {
 public:
  explicit ExternalSegmenter(std::string command_template)
      : template_(std::move(command_template)) {
    if (template_.find("{in}") == std::string::npos || template_.find("{out}") == std::string::npos)
      throw ConfigError("external segmenter command must contain {in} and {out}");
  }

  std::string name() const override { return "external"; }

  SegmentationMask segment(const FrameView& frame) const override {
    const auto out = std::filesystem::temp_directory_path() /
                     ("scenestress_mask_" + hex64(fnv1a64(frame.ref)) + ".png");
    std::string cmd = template_;
    replace(cmd, "{in}", frame.ref);
    replace(cmd, "{out}", out.string());
    if (std::system(cmd.c_str()) != 0) throw DataError("external segmenter failed: " + cmd);
    cv::Mat m = cv::imread(out.string(), cv::IMREAD_UNCHANGED);
    std::filesystem::remove(out);
    if (m.empty()) throw DataError("external segmenter produced no mask for " + frame.ref);
    return SegmentationMask::from_mat(m);
  }

 private:
  static void replace(std::string& s, std::string_view from, const std::string& to) {
    for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
      s.replace(pos, from.size(), to);
  }
  std::string template_;
};

// ---------------------------------------------------------------------------
// Feature table.

struct FeatureRow {
  std::string driver_id;
  double timestamp = 0.0;
  StressClass stress_class = StressClass::low;
  OccupancyVector values{};

  bool operator==(const FeatureRow&) const = default;
};

struct FeatureTable {
  std::vector<FeatureRow> rows;

  /// (driver_id, timestamp) -> row index.
  std::map<std::pair<std::string, std::int64_t>, std::size_t> index() const {
    std::map<std::pair<std::string, std::int64_t>, std::size_t> idx;
    for (std::size_t i = 0; i < rows.size(); ++i)
      idx.emplace(std::pair{rows[i].driver_id, timestamp_ms(rows[i].timestamp)}, i);
    return idx;
  }

  void write_csv(std::ostream& out) const {
    out << "driver_id,timestamp_s,stress_class";
    char name[8];
    for (std::size_t i = 0; i < kNumCategories; ++i) {
      std::snprintf(name, sizeof(name), "f%02zu", i);
      out << ',' << name;
    }
    out << '\n';
    for (const auto& r : rows) {
      out << r.driver_id << ',' << format_double(r.timestamp) << ',' << to_string(r.stress_class);
      for (double v : r.values) out << ',' << format_double(v);
      out << '\n';
    }
  }

  static FeatureTable read_csv(std::istream& in) {
    FeatureTable t;
    std::string line;
    while (std::getline(in, line) && line.rfind('#', 0) == 0) {
    }
    if (line.rfind("driver_id,timestamp_s,stress_class,f00", 0) != 0)
      throw DataError("feature CSV: unexpected header");
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<std::string_view> cols;
      std::string_view rest(line);
      for (;;) {
        auto c = rest.find(',');
        cols.push_back(rest.substr(0, c));
        if (c == std::string_view::npos) break;
        rest.remove_prefix(c + 1);
      }
      if (cols.size() != 3 + kNumCategories) throw DataError("feature CSV: wrong column count");
      FeatureRow r;
      r.driver_id = std::string(cols[0]);
      r.timestamp = parse_double(cols[1]);
      r.stress_class = parse_stress_class(cols[2]);
      for (std::size_t i = 0; i < kNumCategories; ++i) r.values[i] = parse_double(cols[3 + i]);
      t.rows.push_back(std::move(r));
    }
    return t;
  }
};

/// One occupancy row per labeled frame, in input order.
inline FeatureTable extract_features(std::span<const LabeledFrame> frames,
                                     const SegmenterAdapter& segmenter,
                                     const FrameSource* frame_source = nullptr) {
  FeatureTable table;
  table.rows.reserve(frames.size());
  for (const auto& f : frames) {
    FrameView view{f.driver_id, f.timestamp, f.ref, frame_source};
    const SegmentationMask mask = segmenter.segment_checked(view);
    table.rows.push_back({f.driver_id, f.timestamp, f.stress_class, occupancy_vector(mask)});
  }
  return table;
}

}  // namespace scenestress
