#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenestress/classical.hpp"
#include "scenestress/common.hpp"
#include "scenestress/deep.hpp"
#include "scenestress/evaluation.hpp"
#include "scenestress/features.hpp"
#include "scenestress/ingestion.hpp"
#include "scenestress/splits.hpp"
#include "scenestress/synthgen.hpp"

namespace scenestress {

/// Everything a run needs; loaded from JSON, overridden by flags.
struct ExperimentConfig {
  std::string corpus = "corpus";
  std::string artifacts = "artifacts";
  std::uint64_t seed = 7;
  LabelingOptions labeling{};
  std::string segmenter = "synthetic";  // synthetic | masks | external:<command with {in} {out}>
  double clip_seconds = 32.0;  // every method scores the same clip ends
  double stride_seconds = 2.0;
  std::vector<std::string> splits;  // empty = all nine
  std::vector<std::string> classical_kinds{"tree_ensemble", "linear_max_margin", "rbf_max_margin"};
  nlohmann::json classical_hyperparameters = nlohmann::json::object();  // kind -> {name: value}
  ModelConfig deep = ModelConfig::tiny(ModelKind::tsn);
  std::vector<double> sweep_windows{1, 2, 4, 6, 8, 10, 12, 16, 20, 24, 28, 32};
  std::string sweep_split = "D_1";
  int explain_clips = 2;
  std::optional<StressClass> explain_target;  // default: predicted class
  GeneratorConfig synth = GeneratorConfig::standard();

  void validate() const {
    labeling.thresholds.validate();
    if (!(labeling.target_fps > 0.0)) throw ConfigError("fps must be positive");
    if (!(labeling.coverage_slack >= 0.0)) throw ConfigError("coverage_slack must be non-negative");
    if (!(clip_seconds > 0.0) || !(stride_seconds > 0.0)) throw ConfigError("clip window and stride must be positive");
    if (deep.tsn.window_seconds > clip_seconds + 1e-9)
      throw ConfigError("TSN window exceeds clip_seconds");
    for (double n : sweep_windows)
      if (!(n > 0.0) || n > clip_seconds + 1e-9) throw ConfigError("sweep window outside (0, clip_seconds]");
    if (explain_clips < 0) throw ConfigError("explain_clips must be non-negative");
    deep.validate();
    synth.validate();
    const auto plans = lodo_plan(first_drive_ids());
    for (const auto& s : splits) find_plan(plans, s);
    for (const auto& k : classical_kinds) parse_classifier_kind(k);
    if (segmenter != "synthetic" && segmenter != "masks" && segmenter.rfind("external:", 0) != 0)
      throw ConfigError("segmenter must be synthetic, masks or external:<command>");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["corpus"] = corpus;
    j["artifacts"] = artifacts;
    j["seed"] = seed;
    j["fps"] = labeling.target_fps;
    j["thresholds"] = {labeling.thresholds.lower, labeling.thresholds.upper};
    j["coverage_slack"] = labeling.coverage_slack;
    j["normalize"] = labeling.normalize;
    j["segmenter"] = segmenter;
    j["clip_seconds"] = clip_seconds;
    j["stride_seconds"] = stride_seconds;
    j["window_seconds"] = deep.tsn.window_seconds;
    j["segments"] = deep.tsn.segments;
    j["splits"] = splits;
    j["classical_kinds"] = classical_kinds;
    j["classical_hyperparameters"] = classical_hyperparameters;
    j["deep"] = deep.to_json();
    j["sweep_windows"] = sweep_windows;
    j["sweep_split"] = sweep_split;
    j["explain_clips"] = explain_clips;
    j["explain_target"] = explain_target ? std::string(to_string(*explain_target)) : std::string("predicted");
    j["synth"] = synth.to_json();
    return j;
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{
        "corpus", "artifacts", "seed", "fps", "thresholds", "coverage_slack", "normalize",
        "segmenter", "clip_seconds", "stride_seconds", "window_seconds", "segments", "splits",
        "classical_kinds", "classical_hyperparameters", "deep", "sweep_windows", "sweep_split",
        "explain_clips", "explain_target", "synth"};
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!known.count(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
    ExperimentConfig c;
    try {
      c.corpus = j.value("corpus", c.corpus);
      c.artifacts = j.value("artifacts", c.artifacts);
      c.seed = j.value("seed", c.seed);
      c.labeling.target_fps = j.value("fps", c.labeling.target_fps);
      if (j.contains("thresholds")) {
        const auto t = j.at("thresholds").get<std::vector<double>>();
        if (t.size() != 2) throw ConfigError("thresholds must be [lower, upper]");
        c.labeling.thresholds = {t[0], t[1]};
      }
      c.labeling.coverage_slack = j.value("coverage_slack", c.labeling.coverage_slack);
      c.labeling.normalize = j.value("normalize", c.labeling.normalize);
      c.segmenter = j.value("segmenter", c.segmenter);
      c.clip_seconds = j.value("clip_seconds", c.clip_seconds);
      c.stride_seconds = j.value("stride_seconds", c.stride_seconds);
      if (j.contains("deep")) c.deep = ModelConfig::from_json(j.at("deep"));
      c.deep.tsn.window_seconds = j.value("window_seconds", c.deep.tsn.window_seconds);
      c.deep.tsn.segments = j.value("segments", c.deep.tsn.segments);
      c.splits = j.value("splits", c.splits);
      c.classical_kinds = j.value("classical_kinds", c.classical_kinds);
      if (j.contains("classical_hyperparameters")) c.classical_hyperparameters = j.at("classical_hyperparameters");
      c.sweep_windows = j.value("sweep_windows", c.sweep_windows);
      c.sweep_split = j.value("sweep_split", c.sweep_split);
      c.explain_clips = j.value("explain_clips", c.explain_clips);
      if (j.contains("explain_target") && j.at("explain_target") != "predicted")
        c.explain_target = parse_stress_class(j.at("explain_target").get<std::string>());
      if (j.contains("synth")) c.synth = GeneratorConfig::from_json(j.at("synth"));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed experiment config: ") + e.what());
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    c.validate();
    return c;
  }

  /// Hash of the effective config, ignoring where inputs and outputs live.
  std::uint64_t hash() const {
    auto j = to_json();
    j.erase("corpus");
    j.erase("artifacts");
    return fnv1a64(j.dump());
  }

  /// Hash of the settings a trained run depends on; decides whether a run can be reused.
  std::uint64_t training_hash() const {
    auto j = to_json();
    for (const char* k : {"corpus", "artifacts", "splits", "classical_kinds", "sweep_windows", "sweep_split",
                          "explain_clips", "explain_target"})
      j.erase(k);
    return fnv1a64(j.dump());
  }

  /// Seed for one component, derived from the top-level seed.
  std::uint64_t seed_for(std::string_view component) const { return derive_seed(seed, component); }

  std::vector<std::string> selected_splits() const {
    if (!splits.empty()) return splits;
    std::vector<std::string> all;
    for (const auto& p : lodo_plan(first_drive_ids())) all.push_back(p.split_id);
    return all;
  }

  FeatureClassifierSpec classical_spec(const std::string& kind_name, const std::string& split) const {
    FeatureClassifierSpec s;
    s.kind = parse_classifier_kind(kind_name);
    const std::string canonical(to_string(s.kind));
    for (const auto& key : {kind_name, canonical})
      if (classical_hyperparameters.contains(key))
        for (auto it = classical_hyperparameters.at(key).begin(); it != classical_hyperparameters.at(key).end(); ++it)
          s.hyperparameters[it.key()] = it.value().get<double>();
    s.seed = seed_for("classical/" + canonical + "/" + split);
    return s;
  }
};

/// Provenance block embedded in every artifact.
inline nlohmann::ordered_json provenance(const ExperimentConfig& c) {
  nlohmann::ordered_json p;
  p["config_hash"] = hex64(c.hash());
  p["seed"] = c.seed;
  return p;
}

inline std::string provenance_comment(const ExperimentConfig& c) {
  return "# config_hash=" + hex64(c.hash()) + " seed=" + std::to_string(c.seed) + "\n";
}

// ---------------------------------------------------------------------------

/// Drives of a corpus directory plus their labels.
struct LoadedCorpus {
  std::vector<DriveSession> sessions;  // first_drive_ids() order when those ids are present
  std::vector<LabeledSession> labeled;
  std::map<std::string, std::filesystem::path> mask_dirs;
  std::unique_ptr<FrameSource> frames;

  std::vector<std::string> driver_ids() const {
    std::vector<std::string> ids;
    for (const auto& s : sessions) ids.push_back(s.driver_id);
    return ids;
  }
};

inline std::vector<std::filesystem::path> corpus_manifests(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (std::filesystem::exists(dir / "corpus.json")) {
    const auto cj = read_json_file(dir / "corpus.json");
    for (const auto& d : cj.at("drivers")) out.push_back(dir / d.at("manifest").get<std::string>());
    return out;
  }
  if (!std::filesystem::is_directory(dir)) throw DataError("corpus directory " + dir.string() + " does not exist");
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory() && std::filesystem::exists(e.path() / "manifest.json"))
      out.push_back(e.path() / "manifest.json");
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no drive manifests under " + dir.string());
  return out;
}

inline LoadedCorpus load_corpus(const ExperimentConfig& cfg) {
  LoadedCorpus c;
  for (const auto& m : corpus_manifests(cfg.corpus)) {
    auto s = load_session(m);
    const auto mj = read_json_file(m);
    if (mj.contains("masks_dir")) c.mask_dirs[s.driver_id] = m.parent_path() / mj.at("masks_dir").get<std::string>();
    c.sessions.push_back(std::move(s));
  }
  const auto& order = first_drive_ids();
  auto rank = [&](const std::string& id) {
    return std::find(order.begin(), order.end(), id) - order.begin();
  };
  std::stable_sort(c.sessions.begin(), c.sessions.end(),
                   [&](const auto& a, const auto& b) { return rank(a.driver_id) < rank(b.driver_id); });
  for (const auto& s : c.sessions)
    c.labeled.push_back({s.driver_id, std::min(cfg.labeling.target_fps, s.fps), label_session(s, cfg.labeling)});
  c.frames = std::make_unique<DiskFrameSource>();
  return c;
}

inline std::unique_ptr<SegmenterAdapter> make_segmenter(const ExperimentConfig& cfg, const LoadedCorpus& corpus) {
  if (cfg.segmenter == "synthetic") return std::make_unique<SyntheticSegmenter>();
  if (cfg.segmenter == "masks") {
    for (const auto& s : corpus.sessions)
      if (!corpus.mask_dirs.count(s.driver_id)) throw DataError("driver " + s.driver_id + " has no masks_dir");
    return std::make_unique<CachedMaskSegmenter>(corpus.mask_dirs);
  }
  return std::make_unique<ExternalSegmenter>(cfg.segmenter.substr(std::string("external:").size()));
}

inline FeatureTable corpus_features(const LoadedCorpus& corpus, const SegmenterAdapter& seg) {
  FeatureTable all;
  for (const auto& ls : corpus.labeled) {
    auto t = extract_features(ls.frames, seg, corpus.frames.get());
    all.rows.insert(all.rows.end(), t.rows.begin(), t.rows.end());
  }
  return all;
}

/// Balanced clip partitions of one split.
struct SplitData {
  SplitPlan plan;
  BalancedPartition<ClipSample> train, val, test;
};

inline SplitData make_split_data(const std::vector<LabeledSession>& labeled, const SplitPlan& plan,
                                 const ExperimentConfig& cfg) {
  std::vector<ClipSample> by_role[3];
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    const auto role = plan.role_of(labeled[i].driver_id);
    if (role.empty()) continue;
    auto clips = build_clips(labeled[i].frames, cfg.clip_seconds, cfg.stride_seconds, i);
    auto& dst = by_role[role == "train" ? 0 : role == "val" ? 1 : 2];
    dst.insert(dst.end(), clips.begin(), clips.end());
  }
  auto label = [](const ClipSample& c) { return c.label; };
  SplitData d;
  d.plan = plan;
  d.train = balance(by_role[0], PartitionRole::train, cfg.seed_for("balance/" + plan.split_id + "/train"), label);
  d.val = balance(by_role[1], PartitionRole::val, cfg.seed_for("balance/" + plan.split_id + "/val"), label);
  d.test = balance(by_role[2], PartitionRole::test, cfg.seed_for("balance/" + plan.split_id + "/test"), label);
  return d;
}

/// Occupancy rows at the clips' end frames.
inline std::vector<FeatureTrainingSample> clip_features(std::span<const ClipSample> clips,
                                                        const std::vector<LabeledSession>& labeled,
                                                        const FeatureTable& table) {
  const auto idx = table.index();
  std::vector<FeatureTrainingSample> out;
  out.reserve(clips.size());
  for (const auto& c : clips) {
    const auto& f = labeled.at(c.session).frames.at(c.end_frame);
    auto it = idx.find({f.driver_id, timestamp_ms(f.timestamp)});
    if (it == idx.end())
      throw DataError("no feature row for " + f.driver_id + " t=" + format_double(f.timestamp));
    out.push_back({table.rows[it->second].values, c.label});
  }
  return out;
}

struct PredictionRecord {
  std::string key;
  StressClass truth = StressClass::low;
  ClassPrediction pred;
};

inline std::string predictions_csv(std::span<const PredictionRecord> recs, const std::string& header_comment = {}) {
  std::string out = header_comment + "key,true,predicted,p_low,p_medium,p_high\n";
  for (const auto& r : recs) {
    out += r.key + "," + std::string(to_string(r.truth)) + "," + std::string(to_string(r.pred.label));
    for (double s : r.pred.scores) out += "," + format_double(s);
    out += "\n";
  }
  return out;
}

inline std::vector<PredictionRecord> read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 6) throw DataError(path.string() + ": malformed prediction row");
    PredictionRecord r;
    r.key = cols[0];
    r.truth = parse_stress_class(cols[1]);
    r.pred.label = parse_stress_class(cols[2]);
    for (std::size_t k = 0; k < kNumClasses; ++k) r.pred.scores[k] = parse_double(cols[3 + k]);
    out.push_back(std::move(r));
  }
  return out;
}

inline Evaluation evaluate_records(std::span<const PredictionRecord> recs) {
  std::vector<StressClass> t, p;
  for (const auto& r : recs) {
    t.push_back(r.truth);
    p.push_back(r.pred.label);
  }
  return evaluate(t, p);
}

}  // namespace scenestress
