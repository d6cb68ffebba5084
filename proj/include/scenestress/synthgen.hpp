#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "scenestress/common.hpp"
#include "scenestress/features.hpp"
#include "scenestress/ingestion.hpp"
#include "scenestress/splits.hpp"
#include "scenestress/taxonomy.hpp"

namespace scenestress {

// Synthetic drives: frames are a grid of flat-colored cells over a black road.
// A frame shows a regime's objects in a regime-specific part of the grid; the
// stress label follows the regime with a delay.

struct SyntheticRegime {
  std::string name;
  StressClass target = StressClass::low;
  double band_center = 0.2;
  double lag_seconds = 10.0;  // the label follows a change of scene after this delay
  std::vector<std::pair<std::size_t, double>> objects;  // category -> probability per object cell
  std::vector<int> cells;  // grid cells (row * grid + col) where objects may appear

  void validate() const {
    double s = 0.0;
    for (const auto& [c, p] : objects) {
      if (c >= kNumCategories || !(p >= 0.0)) throw ConfigError("regime " + name + ": bad object entry");
      s += p;
    }
    if (objects.empty() || std::abs(s - 1.0) > 1e-9)
      throw ConfigError("regime " + name + ": object probabilities must sum to 1");
    if (cells.empty()) throw ConfigError("regime " + name + ": no object cells");
    if (!(band_center >= 0.0 && band_center <= 1.0)) throw ConfigError("regime " + name + ": band outside [0,1]");
    if (!(lag_seconds >= 0.0)) throw ConfigError("regime " + name + ": negative lag");
  }
};

struct GeneratorConfig {
  int grid = 4;          // grid x grid cells
  int cell_pixels = 4;   // frame side = grid * cell_pixels
  int object_cells = 6;  // cells per frame that show an object
  double ambiguous_fraction = 0.0;  // frames whose objects come uniformly from all regimes
  double fps = 2.0;
  double stress_rate = 4.0;  // annotation samples per second
  double noise = 0.05;       // uniform half-width around the band center
  double min_segment_seconds = 80.0;
  double max_segment_seconds = 120.0;
  int repeats = 2;  // times each regime appears in a drive
  std::vector<SyntheticRegime> regimes;

  int frame_side() const noexcept { return grid * cell_pixels; }

  /// parking_z -> low, highway -> medium, city -> high, lag `lag` seconds.
  static GeneratorConfig standard(double lag = 10.0) {
    const auto& tx = CategoryTaxonomy::mapillary_vistas();
    auto uniform = [&](std::initializer_list<const char*> names) {
      std::vector<std::pair<std::size_t, double>> v;
      for (const char* n : names) v.emplace_back(tx.index(n), 1.0 / static_cast<double>(names.size()));
      std::sort(v.begin(), v.end());  // taxonomy order, so a JSON round trip keeps the sampling order
      return v;
    };
    GeneratorConfig g;
    std::vector<int> left, right, bottom;
    for (int r = 0; r < g.grid; ++r)
      for (int c = 0; c < g.grid; ++c) {
        if (c < g.grid / 2) left.push_back(r * g.grid + c);
        if (c >= g.grid / 2) right.push_back(r * g.grid + c);
        if (r >= g.grid / 2) bottom.push_back(r * g.grid + c);
      }
    g.regimes = {
        {"parking_z", StressClass::low, 0.2, lag,
         uniform({"Parking", "Fence", "Crosswalk - Plain", "Trash Can", "Person", "Traffic Light"}), left},
        {"highway", StressClass::medium, 0.575, lag,
         uniform({"Tunnel", "Guard Rail", "Bridge", "Terrain", "Traffic Sign (Front)"}), right},
        {"city", StressClass::high, 0.875, lag,
         uniform({"Motorcycle", "Bicycle", "Bicyclist", "Banner", "Bus", "Truck"}), bottom},
    };
    return g;
  }

  /// Objects may appear in any cell, so only their categories tell regimes
  /// apart; larger cells for attribution checks.
  static GeneratorConfig placement_free(double lag = 10.0, int cell_pixels = 8) {
    GeneratorConfig g = standard(lag);
    g.cell_pixels = cell_pixels;
    for (auto& r : g.regimes) {
      r.cells.clear();
      for (int c = 0; c < g.grid * g.grid; ++c) r.cells.push_back(c);
    }
    return g;
  }

  void validate() const {
    if (grid < 1 || cell_pixels < 1) throw ConfigError("grid and cell size must be positive");
    if (regimes.empty()) throw ConfigError("generator has no regimes");
    std::set<StressClass> targets;
    for (const auto& r : regimes) {
      r.validate();
      if (static_cast<int>(r.cells.size()) < object_cells)
        throw ConfigError("regime " + r.name + " has fewer cells than object_cells");
      for (int c : r.cells)
        if (c < 0 || c >= grid * grid) throw ConfigError("regime " + r.name + ": cell outside the grid");
      if (!targets.insert(r.target).second) throw ConfigError("two regimes map to the same stress class");
    }
    if (object_cells < 0) throw ConfigError("object_cells must be non-negative");
    if (!(ambiguous_fraction >= 0.0 && ambiguous_fraction <= 1.0))
      throw ConfigError("ambiguous_fraction must be in [0,1]");
    if (!(fps > 0.0) || !(stress_rate > 0.0)) throw ConfigError("rates must be positive");
    if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
    if (!(min_segment_seconds > 0.0 && max_segment_seconds >= min_segment_seconds))
      throw ConfigError("segment duration range is invalid");
    if (repeats < 1) throw ConfigError("repeats must be at least 1");
  }

  /// Categories any regime can show, sorted.
  std::vector<std::size_t> object_support() const {
    std::set<std::size_t> s;
    for (const auto& r : regimes)
      for (const auto& [c, p] : r.objects)
        if (p > 0.0) s.insert(c);
    return {s.begin(), s.end()};
  }

  /// Expected per-pixel occupancy of each category in frames of regime `r`.
  OccupancyVector composition(std::size_t r) const {
    OccupancyVector v{};
    const double obj_share = static_cast<double>(object_cells) / static_cast<double>(grid * grid);
    const auto support = object_support();
    for (const auto& [c, p] : regimes.at(r).objects) v[c] += obj_share * (1.0 - ambiguous_fraction) * p;
    for (auto c : support) v[c] += obj_share * ambiguous_fraction / static_cast<double>(support.size());
    v[CategoryTaxonomy::mapillary_vistas().index("Road")] += 1.0 - obj_share;
    return v;
  }

  nlohmann::ordered_json to_json() const {
    const auto& tx = CategoryTaxonomy::mapillary_vistas();
    nlohmann::ordered_json j;
    j["grid"] = grid;
    j["cell_pixels"] = cell_pixels;
    j["object_cells"] = object_cells;
    j["ambiguous_fraction"] = ambiguous_fraction;
    j["fps"] = fps;
    j["stress_rate"] = stress_rate;
    j["noise"] = noise;
    j["min_segment_seconds"] = min_segment_seconds;
    j["max_segment_seconds"] = max_segment_seconds;
    j["repeats"] = repeats;
    auto& arr = j["regimes"] = nlohmann::ordered_json::array();
    for (const auto& r : regimes) {
      nlohmann::ordered_json rj;
      rj["name"] = r.name;
      rj["class"] = std::string(to_string(r.target));
      rj["band_center"] = r.band_center;
      rj["lag_seconds"] = r.lag_seconds;
      auto& o = rj["objects"] = nlohmann::ordered_json::object();
      for (const auto& [c, p] : r.objects) o[tx.name(c)] = p;
      rj["cells"] = r.cells;
      arr.push_back(std::move(rj));
    }
    return j;
  }

  static GeneratorConfig from_json(const nlohmann::json& j) {
    const auto& tx = CategoryTaxonomy::mapillary_vistas();
    GeneratorConfig g = standard(j.value("lag_seconds", 10.0));
    g.grid = j.value("grid", g.grid);
    g.cell_pixels = j.value("cell_pixels", g.cell_pixels);
    g.object_cells = j.value("object_cells", g.object_cells);
    g.ambiguous_fraction = j.value("ambiguous_fraction", g.ambiguous_fraction);
    g.fps = j.value("fps", g.fps);
    g.stress_rate = j.value("stress_rate", g.stress_rate);
    g.noise = j.value("noise", g.noise);
    g.min_segment_seconds = j.value("min_segment_seconds", g.min_segment_seconds);
    g.max_segment_seconds = j.value("max_segment_seconds", g.max_segment_seconds);
    g.repeats = j.value("repeats", g.repeats);
    if (j.contains("regimes")) {
      g.regimes.clear();
      for (const auto& rj : j.at("regimes")) {
        SyntheticRegime r;
        r.name = rj.at("name").get<std::string>();
        r.target = parse_stress_class(rj.at("class").get<std::string>());
        r.band_center = rj.at("band_center").get<double>();
        r.lag_seconds = rj.value("lag_seconds", 10.0);
        for (auto it = rj.at("objects").begin(); it != rj.at("objects").end(); ++it)
          r.objects.emplace_back(tx.index(it.key()), it.value().get<double>());
        std::sort(r.objects.begin(), r.objects.end());
        r.cells = rj.at("cells").get<std::vector<int>>();
        g.regimes.push_back(std::move(r));
      }
    }
    g.validate();
    return g;
  }
};

struct ScheduleEntry {
  std::size_t regime = 0;  // index into GeneratorConfig::regimes
  double start = 0.0;
  double end = 0.0;
};

/// Each regime `repeats` times in seeded order with no regime following itself,
/// durations uniform in the configured range.
inline std::vector<ScheduleEntry> random_schedule(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  std::vector<std::size_t> order;
  for (int k = 0; k < cfg.repeats; ++k)
    for (std::size_t r = 0; r < cfg.regimes.size(); ++r) order.push_back(r);
  for (int attempt = 0;; ++attempt) {
    shuffle_range(order.begin(), order.end(), rng);
    bool ok = true;
    for (std::size_t i = 1; i < order.size(); ++i) ok = ok && order[i] != order[i - 1];
    if (ok || cfg.regimes.size() < 2 || attempt > 10000) break;
  }
  std::vector<ScheduleEntry> out;
  double t = 0.0;
  for (auto r : order) {
    const double d = std::round(uniform_real(rng, cfg.min_segment_seconds, cfg.max_segment_seconds));
    out.push_back({r, t, t + d});
    t += d;
  }
  return out;
}

struct SyntheticSession {
  DriveSession session;                     // frame refs are "<driver>/frames/<ms>.png"
  std::vector<cv::Mat> images;              // parallel to session.frames
  std::vector<SegmentationMask> masks;      // parallel to session.frames
  std::vector<std::size_t> scene_regime;    // regime shown in each frame
  std::vector<bool> ambiguous;              // frame drew its objects from all regimes
  std::vector<ScheduleEntry> schedule;

  void add_to(MemoryFrameSource& source) const {
    for (std::size_t i = 0; i < images.size(); ++i) source.put(session.frames[i].ref, images[i]);
  }

  /// Pixels of frame i that show an object rather than road.
  std::vector<bool> object_pixels(std::size_t i) const {
    const auto road = static_cast<std::uint8_t>(CategoryTaxonomy::mapillary_vistas().index("Road"));
    std::vector<bool> in(masks[i].labels.size());
    for (std::size_t p = 0; p < in.size(); ++p) in[p] = masks[i].labels[p] != road;
    return in;
  }
};

inline std::string synthetic_frame_name(double t) { return std::to_string(timestamp_ms(t)) + ".png"; }

/// Renders one drive. Frames cover [0, end of schedule] at cfg.fps.
inline SyntheticSession generate_session(std::uint64_t seed, const std::string& driver_id,
                                         const std::vector<ScheduleEntry>& schedule,
                                         const GeneratorConfig& cfg) {
  cfg.validate();
  if (schedule.empty()) throw ConfigError("empty regime schedule");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const auto& e = schedule[i];
    if (e.regime >= cfg.regimes.size()) throw ConfigError("schedule names an unknown regime");
    if (!(e.end > e.start)) throw ConfigError("schedule entry with non-positive duration");
    if (i > 0 && std::abs(e.start - schedule[i - 1].end) > 1e-9)
      throw ConfigError("schedule has gaps or overlaps");
  }
  const double t0 = schedule.front().start, t1 = schedule.back().end;
  const auto palette = synthetic_palette();
  const auto road = static_cast<std::uint8_t>(CategoryTaxonomy::mapillary_vistas().index("Road"));
  const auto support = cfg.object_support();
  const int side = cfg.frame_side();

  SyntheticSession out;
  out.schedule = schedule;
  out.session.driver_id = driver_id;
  out.session.fps = cfg.fps;

  // Scene regime at t: the entry containing t (the last one includes its end).
  auto scene_at = [&](double t) {
    for (const auto& e : schedule)
      if (t < e.end) return e.regime;
    return schedule.back().regime;
  };
  // Label regime at t: entry i takes over at start_i + lag of its regime.
  auto label_at = [&](double t) {
    std::size_t r = schedule.front().regime;
    for (std::size_t i = 1; i < schedule.size(); ++i)
      if (t >= schedule[i].start + cfg.regimes[schedule[i].regime].lag_seconds) r = schedule[i].regime;
    return r;
  };

  Rng frame_rng(derive_seed(seed, "frames"));
  const auto n_frames = static_cast<std::size_t>(std::floor((t1 - t0) * cfg.fps + 1e-9)) + 1;
  for (std::size_t k = 0; k < n_frames; ++k) {
    const double t = t0 + static_cast<double>(k) / cfg.fps;
    const std::size_t r = scene_at(t);
    const auto& regime = cfg.regimes[r];
    const bool amb = uniform01(frame_rng) < cfg.ambiguous_fraction;

    std::vector<int> cells = regime.cells;
    for (int i = 0; i < cfg.object_cells; ++i) {
      const std::size_t j = static_cast<std::size_t>(i) + uniform_index(frame_rng, cells.size() - static_cast<std::size_t>(i));
      std::swap(cells[static_cast<std::size_t>(i)], cells[j]);
    }
    SegmentationMask mask(side, side, road);
    for (int i = 0; i < cfg.object_cells; ++i) {
      std::size_t cat;
      if (amb) {
        cat = support[uniform_index(frame_rng, support.size())];
      } else {
        double u = uniform01(frame_rng);
        cat = regime.objects.back().first;
        for (const auto& [c, p] : regime.objects) {
          if (u < p) {
            cat = c;
            break;
          }
          u -= p;
        }
      }
      const int cell = cells[static_cast<std::size_t>(i)];
      const int cy = (cell / cfg.grid) * cfg.cell_pixels, cx = (cell % cfg.grid) * cfg.cell_pixels;
      for (int y = 0; y < cfg.cell_pixels; ++y)
        for (int x = 0; x < cfg.cell_pixels; ++x) mask.at(cx + x, cy + y) = static_cast<std::uint8_t>(cat);
    }
    cv::Mat img(side, side, CV_8UC3);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) img.at<cv::Vec3b>(y, x) = palette[mask.at(x, y)];

    out.session.frames.push_back({t, driver_id + "/frames/" + synthetic_frame_name(t)});
    out.images.push_back(std::move(img));
    out.masks.push_back(std::move(mask));
    out.scene_regime.push_back(r);
    out.ambiguous.push_back(amb);
  }

  Rng stress_rng(derive_seed(seed, "stress"));
  const auto n_stress = static_cast<std::size_t>(std::floor((t1 - t0) * cfg.stress_rate + 1e-9)) + 1;
  for (std::size_t k = 0; k < n_stress; ++k) {
    const double t = t0 + static_cast<double>(k) / cfg.stress_rate;
    const double v = cfg.regimes[label_at(t)].band_center + uniform_real(stress_rng, -cfg.noise, cfg.noise);
    out.session.stress.timestamps.push_back(t);
    out.session.stress.values.push_back(std::clamp(v, 0.0, 1.0));
  }
  out.session.validate();
  return out;
}

struct SyntheticCorpus {
  std::uint64_t seed = 0;
  GeneratorConfig config;
  std::vector<SyntheticSession> sessions;  // first_drive_ids() order

  MemoryFrameSource frame_source() const {
    MemoryFrameSource s;
    for (const auto& ss : sessions) ss.add_to(s);
    return s;
  }

  std::vector<std::string> driver_ids() const {
    std::vector<std::string> ids;
    for (const auto& s : sessions) ids.push_back(s.session.driver_id);
    return ids;
  }
};

/// The nine-driver stand-in corpus.
inline SyntheticCorpus generate_corpus(std::uint64_t seed, const GeneratorConfig& cfg) {
  SyntheticCorpus c;
  c.seed = seed;
  c.config = cfg;
  for (const auto& id : first_drive_ids()) {
    const auto s = derive_seed(seed, id);
    c.sessions.push_back(generate_session(s, id, random_schedule(cfg, derive_seed(s, "schedule")), cfg));
  }
  return c;
}

/// Writes <dir>/corpus.json and, per driver, <dir>/<driver>/{manifest.json,
/// stress.csv, frames/<ms>.png, masks/<ms>.png}.
inline void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus,
                         const nlohmann::json& provenance = {}) {
  nlohmann::ordered_json cj;
  cj["format"] = "scenestress-corpus/1";
  cj["seed"] = corpus.seed;
  cj["taxonomy"] = CategoryTaxonomy::mapillary_vistas().version();
  cj["generator"] = corpus.config.to_json();
  auto& drivers = cj["drivers"] = nlohmann::ordered_json::array();
  for (const auto& s : corpus.sessions) {
    const auto& id = s.session.driver_id;
    const auto root = dir / id;
    std::filesystem::create_directories(root / "frames");
    std::filesystem::create_directories(root / "masks");
    SessionManifest m;
    m.driver_id = id;
    m.fps = s.session.fps;
    m.stress_csv = "stress.csv";
    m.masks_dir = "masks";
    for (std::size_t i = 0; i < s.session.frames.size(); ++i) {
      const double t = s.session.frames[i].timestamp;
      const auto name = synthetic_frame_name(t);
      m.frames.push_back({t, "frames/" + name});
      if (!cv::imwrite((root / "frames" / name).string(), s.images[i]))
        throw DataError("cannot write frame " + (root / "frames" / name).string());
      write_mask_png(root / "masks" / name, s.masks[i]);
    }
    std::ostringstream csv;
    write_stress_csv(csv, s.session.stress);
    write_text_file(root / "stress.csv", csv.str());
    auto mj = m.to_json();
    nlohmann::ordered_json sched = nlohmann::ordered_json::array();
    for (const auto& e : s.schedule)
      sched.push_back({{"regime", corpus.config.regimes[e.regime].name}, {"start", e.start}, {"end", e.end}});
    mj["schedule"] = std::move(sched);
    if (!provenance.is_null()) mj["provenance"] = provenance;
    write_text_file(root / "manifest.json", mj.dump(2) + "\n");
    drivers.push_back({{"driver_id", id}, {"manifest", id + "/manifest.json"}});
  }
  if (!provenance.is_null()) cj["provenance"] = provenance;
  write_text_file(dir / "corpus.json", cj.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

/// Best achievable accuracy (equal priors) for telling regimes apart from a
/// frame's category counts. Each frame draws `object_cells` categories i.i.d.
/// from its regime's objects, or with probability `ambiguous_fraction`
/// uniformly from all regimes' objects. Exhaustive over count vectors.
inline double bayes_accuracy(std::span<const SyntheticRegime> regimes, double ambiguous_fraction, int object_cells) {
  if (regimes.empty()) return 0.0;
  std::set<std::size_t> sup;
  for (const auto& r : regimes)
    for (const auto& [c, p] : r.objects)
      if (p > 0.0) sup.insert(c);
  const std::vector<std::size_t> support(sup.begin(), sup.end());
  const std::size_t S = support.size();
  std::vector<std::vector<double>> probs(regimes.size(), std::vector<double>(S, 0.0));
  for (std::size_t r = 0; r < regimes.size(); ++r)
    for (const auto& [c, p] : regimes[r].objects)
      probs[r][static_cast<std::size_t>(std::lower_bound(support.begin(), support.end(), c) - support.begin())] += p;

  std::vector<double> log_fact(static_cast<std::size_t>(object_cells) + 1, 0.0);
  for (int i = 1; i <= object_cells; ++i) log_fact[static_cast<std::size_t>(i)] = log_fact[static_cast<std::size_t>(i - 1)] + std::log(i);
  const double u = 1.0 / static_cast<double>(S);

  std::vector<int> counts(S, 0);
  double total = 0.0;
  auto visit = [&]() {
    double coef = log_fact[static_cast<std::size_t>(object_cells)];
    for (int n : counts) coef -= log_fact[static_cast<std::size_t>(n)];
    const double p_uniform = std::exp(coef + object_cells * std::log(u));
    double best = 0.0;
    for (std::size_t r = 0; r < regimes.size(); ++r) {
      double lp = coef;
      bool zero = false;
      for (std::size_t i = 0; i < S; ++i) {
        if (counts[i] == 0) continue;
        if (probs[r][i] <= 0.0) {
          zero = true;
          break;
        }
        lp += counts[i] * std::log(probs[r][i]);
      }
      const double p = (1.0 - ambiguous_fraction) * (zero ? 0.0 : std::exp(lp)) + ambiguous_fraction * p_uniform;
      best = std::max(best, p);
    }
    total += best;
  };
  auto rec = [&](auto&& self, std::size_t i, int left) -> void {
    if (i + 1 == S) {
      counts[i] = left;
      visit();
      return;
    }
    for (int n = 0; n <= left; ++n) {
      counts[i] = n;
      self(self, i + 1, left - n);
    }
  };
  rec(rec, 0, object_cells);
  return total / static_cast<double>(regimes.size());
}

}  // namespace scenestress
