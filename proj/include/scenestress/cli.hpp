#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "scenestress/classical.hpp"
#include "scenestress/deep.hpp"
#include "scenestress/evaluation.hpp"
#include "scenestress/experiment.hpp"
#include "scenestress/interpretability.hpp"
#include "scenestress/scene_analysis.hpp"
#include "scenestress/splits.hpp"
#include "scenestress/synthgen.hpp"

namespace scenestress::cli {

namespace fs = std::filesystem;

inline constexpr const char* kArtifactsEnv = "SCENESTRESS_ARTIFACTS";

inline const std::vector<std::string>& all_methods() {
  static const std::vector<std::string> m{"tree_ensemble", "linear_max_margin", "rbf_max_margin", "image", "tsn"};
  return m;
}

inline std::string canonical_method(const std::string& m) {
  if (m == "image" || m == "cnn") return "image";
  if (m == "tsn" || m == "video") return "tsn";
  return std::string(to_string(parse_classifier_kind(m)));
}

inline bool is_classical(const std::string& method) { return method != "image" && method != "tsn"; }

/// Lazily loaded corpus, features and partitions for one process.
class Session {
 public:
  Session(ExperimentConfig cfg, fs::path root, std::ostream& log) : cfg_(std::move(cfg)), root_(std::move(root)), log_(log) {}

  const ExperimentConfig& cfg() const { return cfg_; }
  const fs::path& root() const { return root_; }
  std::ostream& log() { return log_; }

  LoadedCorpus& corpus() {
    if (!corpus_) corpus_ = load_corpus(cfg_);
    return *corpus_;
  }

  const FeatureTable& features() {
    if (!features_) {
      auto seg = make_segmenter(cfg_, corpus());
      features_ = corpus_features(corpus(), *seg);
    }
    return *features_;
  }

  const SplitData& split(const std::string& id) {
    auto it = splits_.find(id);
    if (it != splits_.end()) return it->second;
    const auto plans = lodo_plan(corpus().driver_ids());
    return splits_.emplace(id, make_split_data(corpus().labeled, find_plan(plans, id), cfg_)).first->second;
  }

  FrameStore& store() {
    if (!store_) store_ = std::make_unique<FrameStore>(corpus().labeled, *corpus().frames, cfg_.deep.preprocess);
    return *store_;
  }

  ModelConfig deep_config(ModelKind kind, const std::string& split) const {
    ModelConfig m = cfg_.deep;
    m.kind = kind;
    m.training.seed = cfg_.seed_for("deep/" + std::string(to_string(kind)) + "/" + split);
    return m;
  }

  fs::path run_dir(const std::string& method, const std::string& split) const {
    return root_ / "models" / method / split;
  }

  /// Test-partition predictions, reusing a finished run with the same config hash.
  std::vector<PredictionRecord> predictions(const std::string& method, const std::string& split) {
    const auto dir = run_dir(method, split);
    if (fs::exists(dir / "metrics.json") && fs::exists(dir / "predictions.csv")) {
      const auto m = read_json_file(dir / "metrics.json");
      if (m.value("training_hash", "") == hex64(cfg_.training_hash()))
        return read_predictions_csv(dir / "predictions.csv");
    }
    return train(method, split);
  }

  std::vector<PredictionRecord> train(const std::string& method, const std::string& split_id) {
    const auto& d = split(split_id);
    const auto dir = run_dir(method, split_id);
    fs::create_directories(dir);
    log_ << "training " << method << " on " << split_id << " (" << d.train.samples.size() << " train / "
         << d.val.samples.size() << " val / " << d.test.samples.size() << " test clips)\n";
    std::vector<PredictionRecord> recs;
    nlohmann::ordered_json metrics;
    metrics["method"] = method;
    metrics["split_id"] = split_id;
    metrics["provenance"] = provenance(cfg_);
    metrics["training_hash"] = hex64(cfg_.training_hash());

    if (is_classical(method)) {
      const auto spec = cfg_.classical_spec(method, split_id);
      const auto train_x = clip_features(d.train.samples, corpus().labeled, features());
      const auto test_x = clip_features(d.test.samples, corpus().labeled, features());
      const auto model = TrainedFeatureClassifier::train(spec, train_x);
      std::vector<OccupancyVector> xs;
      for (const auto& s : test_x) xs.push_back(s.x);
      const auto preds = model.predict(xs);
      for (std::size_t i = 0; i < preds.size(); ++i) recs.push_back({d.test.samples[i].key(), d.test.samples[i].label, preds[i]});
      auto mj = model.to_json();
      mj["provenance"] = provenance(cfg_);
      write_text_file(dir / "model.json", mj.dump() + "\n");
      metrics["classifier"] = spec.to_json();
      metrics["train_accuracy"] = model.metadata().value("train_accuracy", 0.0);
    } else {
      const auto kind = method == "image" ? ModelKind::image : ModelKind::tsn;
      const auto mc = deep_config(kind, split_id);
      auto result = train_model(mc, store(), d.train.samples, d.val.samples);
      const auto preds = result.model.predict(d.test.samples, store());
      for (std::size_t i = 0; i < preds.size(); ++i) recs.push_back({d.test.samples[i].key(), d.test.samples[i].label, preds[i]});
      nlohmann::json meta{{"provenance", provenance(cfg_)}, {"split_id", split_id},
                          {"best_epoch", result.best_epoch}, {"best_val_accuracy", result.best_val_accuracy}};
      StressModel::write_checkpoint((dir / "checkpoint.cbor").string(), result.model.to_json(meta));
      write_text_file(dir / "train_log.csv", provenance_comment(cfg_) + result.log_csv());
      metrics["model"] = mc.to_json();
      metrics["best_epoch"] = result.best_epoch;
      metrics["best_val_accuracy"] = result.best_val_accuracy;
      metrics["frozen_checksum_before"] = hex64(result.frozen_checksum_before);
      metrics["frozen_checksum_after"] = hex64(result.frozen_checksum_after);
      metrics["warnings"] = result.warnings;
    }
    const auto ev = evaluate_records(recs);
    metrics["test_accuracy"] = ev.accuracy;
    metrics["confusion"] = ev.confusion.counts;
    metrics["partition_counts"] = {{"train", d.train.counts_after}, {"val", d.val.counts_after}, {"test", d.test.counts_after}};
    write_text_file(dir / "predictions.csv", predictions_csv(recs, provenance_comment(cfg_)));
    write_text_file(dir / "effective_config.json", cfg_.to_json().dump(2) + "\n");
    write_text_file(dir / "metrics.json", metrics.dump(2) + "\n");
    log_ << "  " << method << " " << split_id << " test accuracy " << format_double(ev.accuracy) << "\n";
    return recs;
  }

  /// Trained model of a deep method for a split (trains when absent or stale).
  StressModel deep_model(const std::string& method, const std::string& split_id) {
    const auto dir = run_dir(method, split_id);
    auto fresh = [&] {
      if (!fs::exists(dir / "checkpoint.cbor") || !fs::exists(dir / "metrics.json")) return false;
      const auto m = read_json_file(dir / "metrics.json");
      return m.value("training_hash", "") == hex64(cfg_.training_hash());
    };
    if (!fresh()) train(method, split_id);
    return StressModel::from_json(StressModel::read_checkpoint((dir / "checkpoint.cbor").string()));
  }

  void archive_config(const fs::path& dir) const {
    write_text_file(dir / "effective_config.json", cfg_.to_json().dump(2) + "\n");
  }

 private:
  ExperimentConfig cfg_;
  fs::path root_;
  std::ostream& log_;
  std::optional<LoadedCorpus> corpus_;
  std::optional<FeatureTable> features_;
  std::map<std::string, SplitData> splits_;
  std::unique_ptr<FrameStore> store_;
};

// ---------------------------------------------------------------------------
// Subcommands.

inline void cmd_synth(Session& s, const std::string& out_dir) {
  const fs::path out = out_dir.empty() ? fs::path(s.cfg().corpus) : fs::path(out_dir);
  const auto corpus = generate_corpus(s.cfg().seed_for("synth"), s.cfg().synth);
  write_corpus(out, corpus, provenance(s.cfg()));
  s.archive_config(out);
  s.log() << "wrote " << corpus.sessions.size() << " drives to " << out.string() << "\n";
}

inline void cmd_ingest(Session& s) {
  const auto dir = s.root() / "labels";
  nlohmann::ordered_json summary;
  summary["provenance"] = provenance(s.cfg());
  auto& drivers = summary["drivers"] = nlohmann::ordered_json::object();
  for (const auto& ls : s.corpus().labeled) {
    std::string csv = provenance_comment(s.cfg()) + "timestamp_s,normalized_score,stress_class\n";
    std::array<std::size_t, kNumClasses> counts{};
    for (const auto& f : ls.frames) {
      csv += format_double(f.timestamp) + "," + format_double(f.normalized_score) + "," +
             std::string(to_string(f.stress_class)) + "\n";
      ++counts[index_of(f.stress_class)];
    }
    write_text_file(dir / (ls.driver_id + ".csv"), csv);
    drivers[ls.driver_id] = {{"frames", ls.frames.size()}, {"counts", counts}};
  }
  write_text_file(dir / "summary.json", summary.dump(2) + "\n");
  s.archive_config(dir);
  s.log() << "labeled " << s.corpus().labeled.size() << " drives\n";
}

inline void cmd_features(Session& s) {
  const auto dir = s.root() / "features";
  std::ostringstream os;
  os << provenance_comment(s.cfg());
  s.features().write_csv(os);
  write_text_file(dir / "features.csv", os.str());
  s.archive_config(dir);
  s.log() << "wrote " << s.features().rows.size() << " feature rows\n";
}

inline void cmd_analyze(Session& s, std::size_t top_k) {
  const auto dir = s.root() / "analysis";
  const auto& tx = CategoryTaxonomy::mapillary_vistas();
  const auto table = representation_ratios(s.features());
  nlohmann::ordered_json j;
  j["provenance"] = provenance(s.cfg());
  j["taxonomy"] = tx.version();
  j["rows"] = table.total_rows;
  j["class_counts"] = table.class_counts;
  auto& cats = j["categories"] = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < kNumCategories; ++i) {
    nlohmann::ordered_json c;
    c["global_mean"] = table.global_mean[i];
    for (auto p : kAllClasses) {
      const auto& r = table.ratio[i][index_of(p)];
      c[std::string(to_string(p))] = r ? nlohmann::ordered_json(*r) : nlohmann::ordered_json(nullptr);
    }
    cats[tx.name(i)] = std::move(c);
  }
  auto& top = j["top"] = nlohmann::ordered_json::object();
  for (auto p : kAllClasses) {
    auto& arr = top[std::string(to_string(p))] = nlohmann::ordered_json::array();
    for (const auto& [i, r] : table.top_k(p, top_k)) arr.push_back({{"category", tx.name(i)}, {"ratio", r}});
  }
  write_text_file(dir / "ratios.json", j.dump(2) + "\n");
  std::ostringstream os;
  os << provenance_comment(s.cfg());
  export_ratio_plot_data(os, table, tx, {});
  write_text_file(dir / "ratio_plot.csv", os.str());
  s.archive_config(dir);
  for (auto p : kAllClasses) {
    s.log() << to_string(p) << ":";
    for (const auto& [i, r] : table.top_k(p, std::min<std::size_t>(top_k, 5))) s.log() << " " << tx.name(i) << "(" << format_double(std::round(r * 100) / 100) << ")";
    s.log() << "\n";
  }
}

inline std::vector<std::string> corpus_driver_ids(const ExperimentConfig& cfg) {
  std::vector<std::string> ids;
  for (const auto& m : corpus_manifests(cfg.corpus)) ids.push_back(read_json_file(m).at("driver_id").get<std::string>());
  return ids;
}

inline void cmd_split(Session& s, bool partitions) {
  const auto dir = s.root() / "splits";
  const auto plans = lodo_plan(corpus_driver_ids(s.cfg()));
  for (const auto& p : plans) {
    auto j = p.to_json();
    j["provenance"] = provenance(s.cfg());
    write_text_file(dir / (p.split_id + ".json"), j.dump(2) + "\n");
    if (partitions) {
      const auto& d = s.split(p.split_id);
      for (const auto* part : {&d.train, &d.val, &d.test}) {
        auto pj = partition_manifest(p.split_id, *part);
        pj["provenance"] = provenance(s.cfg());
        write_text_file(dir / p.split_id / (std::string(to_string(part->role)) + ".json"), pj.dump(2) + "\n");
      }
    }
    s.log() << p.split_id << ": val " << p.val_drivers[0] << ", " << p.val_drivers[1] << "; test " << p.test_driver << "\n";
  }
  s.archive_config(dir);
}

inline std::vector<std::string> resolve_splits(const Session& s, const std::string& split, bool all) {
  if (all || split.empty()) return s.cfg().selected_splits();
  find_plan(lodo_plan(first_drive_ids()), split);
  return {split};
}

inline void cmd_train(Session& s, const std::string& method, const std::vector<std::string>& splits) {
  for (const auto& sp : splits) s.train(method, sp);
}

inline AccuracyReport cmd_evaluate(Session& s, const std::string& method, const std::vector<std::string>& splits) {
  const auto dir = s.root() / "reports";
  AccuracyReport rep;
  rep.method = method;
  std::vector<ConfusionMatrix> mats;
  nlohmann::ordered_json per_split = nlohmann::ordered_json::object();
  for (const auto& sp : splits) {
    const auto recs = s.predictions(method, sp);
    const auto ev = evaluate_records(recs);
    rep.per_split.emplace_back(sp, ev.accuracy);
    mats.push_back(ev.confusion);
    per_split[sp] = {{"accuracy", ev.accuracy}, {"samples", ev.samples}, {"confusion", ev.confusion.counts}};
  }
  const auto avg = average_confusion(mats);
  auto j = rep.to_json();
  j["provenance"] = provenance(s.cfg());
  j["details"] = per_split;
  j["average_confusion"] = avg.to_json();
  write_text_file(dir / (method + ".json"), j.dump(2) + "\n");
  write_text_file(dir / ("confusion_" + method + ".csv"), provenance_comment(s.cfg()) + avg.csv());
  s.archive_config(dir);
  s.log() << method << " mean accuracy " << format_double(rep.mean()) << " over " << splits.size() << " split(s)\n";
  return rep;
}

inline void cmd_report(Session& s, std::vector<std::string> methods) {
  const auto dir = s.root() / "reports";
  if (methods.empty()) methods = all_methods();
  const auto splits = s.cfg().selected_splits();
  std::vector<AccuracyReport> reps;
  for (const auto& m : methods) reps.push_back(cmd_evaluate(s, canonical_method(m), splits));
  const auto table = method_table(reps);
  write_text_file(dir / "table.csv", provenance_comment(s.cfg()) + table.csv());
  write_text_file(dir / "table.txt", provenance_comment(s.cfg()) + table.text());
  nlohmann::ordered_json j;
  j["provenance"] = provenance(s.cfg());
  j["splits"] = splits;
  auto& means = j["mean_accuracy"] = nlohmann::ordered_json::object();
  double best_classical = -1.0;
  std::string best_name;
  for (const auto& r : reps) {
    means[r.method] = r.mean();
    if (is_classical(r.method) && r.mean() > best_classical) {
      best_classical = r.mean();
      best_name = r.method;
    }
  }
  if (best_classical >= 0.0) j["best_classical"] = {{"method", best_name}, {"accuracy", best_classical}};
  j["table"] = {{"columns", table.columns}, {"methods", table.methods}, {"rows", table.rows}};
  write_text_file(dir / "report.json", j.dump(2) + "\n");
  s.log() << table.text();
}

inline void cmd_explain(Session& s, const std::string& split_id, const std::string& method, int clips,
                        std::optional<StressClass> target, const std::string& layer) {
  auto model = s.deep_model(method, split_id);
  const auto& d = s.split(split_id);
  if (d.test.samples.empty()) throw DataError("split " + split_id + " has no test clips");
  const auto dir = s.root() / "explain" / method / split_id;
  Rng rng(s.cfg().seed_for("explain/" + split_id));
  std::vector<std::size_t> idx(d.test.samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  shuffle_range(idx.begin(), idx.end(), rng);
  idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(clips)));
  GradCamOptions opt{target, layer};
  for (auto i : idx) {
    const auto& clip = d.test.samples[i];
    const auto frames = model.sampled_frames(clip, s.store().sessions().at(clip.session));
    const auto maps = cam_for_clip(model, clip, s.store(), opt);
    for (std::size_t k = 0; k < maps.size(); ++k) {
      const cv::Mat img = s.store().image(clip.session, frames[k]);
      std::string key = clip.key();
      std::replace(key.begin(), key.end(), '@', '_');
      const auto& f = s.store().frame(clip.session, frames[k]);
      write_cam(dir / (key + "_seg" + std::to_string(k)), maps[k], clip.key(), &img,
                {{"segment", k}, {"frame_timestamp", f.timestamp}, {"true_class", std::string(to_string(clip.label))},
                 {"provenance", provenance(s.cfg())}});
    }
    s.log() << "explained " << clip.key() << " (" << maps.size() << " maps, target " << to_string(maps.front().target) << ")\n";
  }
  s.archive_config(dir);
}

inline void cmd_sweep(Session& s, const std::string& split_id, std::vector<double> windows) {
  if (windows.empty()) windows = s.cfg().sweep_windows;
  for (double n : windows)
    if (!(n > 0.0) || n > s.cfg().clip_seconds + 1e-9) throw ConfigError("sweep window outside (0, clip_seconds]");
  const auto& d = s.split(split_id);
  auto base = s.deep_config(ModelKind::tsn, split_id);
  const auto rows = window_sweep(base, s.store(), d.train.samples, d.val.samples, d.test.samples, windows);
  const auto dir = s.root() / "sweep";
  write_text_file(dir / (split_id + ".csv"), provenance_comment(s.cfg()) + sweep_csv(rows));
  nlohmann::ordered_json j;
  j["provenance"] = provenance(s.cfg());
  j["split_id"] = split_id;
  auto& arr = j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows)
    arr.push_back({{"window_seconds", r.window_seconds}, {"segments", r.segments},
                   {"accuracy", r.error.empty() ? nlohmann::ordered_json(r.accuracy) : nlohmann::ordered_json(nullptr)},
                   {"error", r.error}});
  write_text_file(dir / (split_id + ".json"), j.dump(2) + "\n");
  s.archive_config(dir);
  s.log() << sweep_csv(rows);
}

// ---------------------------------------------------------------------------

inline std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) {
      try {
        out.push_back(parse_double(item));
      } catch (const DataError&) {
        throw ConfigError("not a number: '" + item + "'");
      }
    }
  return out;
}

/// Parses argv, runs one subcommand, returns the process exit status
/// (0 ok, 2 config, 3 data, 4 training). Errors go to `err` as one JSON line.
inline int run_command(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"scenestress: driver stress from road-scene video"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  std::string config_path, artifacts, corpus;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  app.add_option("--config", config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--artifacts", artifacts, "artifact root (overrides $SCENESTRESS_ARTIFACTS and the config)");
  app.add_option("--corpus", corpus, "corpus directory");
  app.add_option("--seed", seed, "top-level seed");
  app.add_flag("--quiet", quiet, "suppress progress output");

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  std::string synth_out;
  std::optional<double> ambiguous, lag;
  synth->add_option("--out", synth_out, "output directory (default: the config's corpus)");
  synth->add_option("--ambiguous", ambiguous, "fraction of frames with regime-agnostic objects");
  synth->add_option("--lag", lag, "label lag in seconds");

  auto* ingest = app.add_subcommand("ingest", "label frames from the stress signal");
  auto* features = app.add_subcommand("features", "occupancy vectors for every labeled frame");
  auto* analyze = app.add_subcommand("analyze", "category representation ratios per stress class");
  std::size_t top_k = 10;
  analyze->add_option("--top", top_k, "categories listed per class");

  auto* split = app.add_subcommand("split", "write the leave-one-driver-out plan");
  bool plan = false, partitions = false;
  split->add_flag("--plan", plan, "write one manifest per split");
  split->add_flag("--partitions", partitions, "also write balanced clip partitions");

  std::string split_id, kind = "tree_ensemble";
  bool all_splits = false;
  auto* tc = app.add_subcommand("train-classical", "train a classifier on occupancy vectors");
  tc->add_option("--kind", kind, "tree_ensemble|linear_max_margin|rbf_max_margin (rf, linear_svm, rbf_svm)");
  auto* ti = app.add_subcommand("train-image", "train the single-frame CNN");
  auto* tv = app.add_subcommand("train-video", "train the temporal segment network");
  std::optional<double> window;
  std::optional<int> segments;
  tv->add_option("--window", window, "window length n in seconds");
  tv->add_option("--segments", segments, "segment count K");
  for (auto* sc : {tc, ti, tv}) {
    sc->add_option("--split", split_id, "split id (e.g. D_3)");
    sc->add_flag("--all-splits", all_splits, "every selected split");
  }

  auto* ev = app.add_subcommand("evaluate", "accuracy and confusion matrices on test partitions");
  std::string method = "tsn";
  ev->add_option("--method", method, "tree_ensemble|linear_max_margin|rbf_max_margin|image|tsn");
  ev->add_option("--split", split_id, "split id");
  ev->add_flag("--all-splits", all_splits, "every selected split");

  auto* ex = app.add_subcommand("explain", "GradCAM maps for test clips");
  int clips = -1;
  std::string target, layer;
  ex->add_option("--split", split_id, "split id")->required();
  ex->add_option("--method", method, "image|tsn");
  ex->add_option("--clips", clips, "number of random test clips");
  ex->add_option("--target", target, "predicted|low|medium|high");
  ex->add_option("--layer", layer, "convolution name (default: last)");

  auto* report = app.add_subcommand("report", "method comparison table over the selected splits");
  std::vector<std::string> methods;
  report->add_option("--methods", methods, "methods to include (default: all)")->delimiter(',');

  auto* sweep = app.add_subcommand("sweep", "TSN accuracy against window length");
  std::string windows;
  sweep->add_option("--split", split_id, "split id");
  sweep->add_option("--windows", windows, "comma-separated window lengths in seconds");

  auto fail = [&](std::string_view kind_name, const std::string& msg, int code) {
    err << nlohmann::json{{"error", {{"kind", kind_name}, {"message", msg}, {"exit_code", code}}}}.dump() << "\n";
    return code;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);  // --help, including per-subcommand help
      return 0;
    }
    return fail("usage", e.what(), 2);
  }

  std::ostringstream sink;
  std::ostream& log = quiet ? static_cast<std::ostream&>(sink) : out;
  try {
    nlohmann::json cj = nlohmann::json::object();
    if (!config_path.empty()) {
      try {
        cj = read_json_file(config_path);
      } catch (const DataError& e) {
        throw ConfigError(e.what());
      }
    }
    ExperimentConfig cfg = ExperimentConfig::from_json(cj);
    if (const char* env = std::getenv(kArtifactsEnv); env && *env) cfg.artifacts = env;
    if (!artifacts.empty()) cfg.artifacts = artifacts;
    if (!corpus.empty()) cfg.corpus = corpus;
    if (seed) cfg.seed = *seed;
    if (ambiguous) cfg.synth.ambiguous_fraction = *ambiguous;
    if (lag)
      for (auto& r : cfg.synth.regimes) r.lag_seconds = *lag;
    if (window) cfg.deep.tsn.window_seconds = *window;
    if (segments) cfg.deep.tsn.segments = *segments;
    if (clips >= 0) cfg.explain_clips = clips;
    if (!target.empty() && target != "predicted") cfg.explain_target = parse_stress_class(target);
    cfg.validate();

    Session s(cfg, cfg.artifacts, log);
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "synth") {
      cmd_synth(s, synth_out);
    } else if (name == "ingest") {
      cmd_ingest(s);
    } else if (name == "features") {
      cmd_features(s);
    } else if (name == "analyze") {
      cmd_analyze(s, top_k);
    } else if (name == "split") {
      if (!plan && !partitions) throw ConfigError("split: pass --plan and/or --partitions");
      cmd_split(s, partitions);
    } else if (name == "train-classical") {
      cmd_train(s, canonical_method(kind), resolve_splits(s, split_id, all_splits));
    } else if (name == "train-image") {
      cmd_train(s, "image", resolve_splits(s, split_id, all_splits));
    } else if (name == "train-video") {
      cmd_train(s, "tsn", resolve_splits(s, split_id, all_splits));
    } else if (name == "evaluate") {
      cmd_evaluate(s, canonical_method(method), resolve_splits(s, split_id, all_splits));
    } else if (name == "explain") {
      const auto m = canonical_method(method);
      if (is_classical(m)) throw ConfigError("explain needs a deep method (image or tsn)");
      cmd_explain(s, split_id, m, cfg.explain_clips, cfg.explain_target, layer);
    } else if (name == "report") {
      cmd_report(s, methods);
    } else if (name == "sweep") {
      cmd_sweep(s, split_id.empty() ? cfg.sweep_split : split_id, parse_number_list(windows));
    }
    return 0;
  } catch (const Error& e) {
    return fail(e.kind(), e.what(), e.exit_code());
  } catch (const nlohmann::json::exception& e) {
    return fail("data", e.what(), 3);
  } catch (const cv::Exception& e) {
    return fail("data", e.what(), 3);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
}

}  // namespace scenestress::cli
