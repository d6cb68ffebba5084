#pragma once

#include <algorithm>
#include <array>
#include <iomanip>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenestress/common.hpp"

namespace scenestress {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  void add(StressClass truth, StressClass predicted) { ++counts[index_of(truth)][index_of(predicted)]; }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (const auto& r : counts)
      for (auto v : r) s += v;
    return s;
  }
  std::uint64_t trace() const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < kNumClasses; ++i) s += counts[i][i];
    return s;
  }
  double accuracy() const {
    const auto n = total();
    if (n == 0) throw DataError("accuracy of an empty confusion matrix");
    return static_cast<double>(trace()) / static_cast<double>(n);
  }

  nlohmann::json to_json() const { return {{"counts", counts}}; }
};

/// Row-normalized proportions; rows without support stay zero and are flagged.
struct NormalizedConfusion {
  std::array<std::array<double, kNumClasses>, kNumClasses> values{};
  std::array<bool, kNumClasses> zero_support{};

  nlohmann::json to_json() const {
    nlohmann::ordered_json j;
    j["rows"] = "true class";
    j["columns"] = "predicted class";
    j["labels"] = {"low", "medium", "high"};
    j["values"] = values;
    j["zero_support"] = zero_support;
    return j;
  }

  std::string csv() const {
    std::string out = "true\\predicted,low,medium,high\n";
    for (std::size_t r = 0; r < kNumClasses; ++r) {
      out += std::string(to_string(class_at(r)));
      for (std::size_t c = 0; c < kNumClasses; ++c) out += "," + format_double(values[r][c]);
      out += "\n";
    }
    return out;
  }
};

inline NormalizedConfusion normalize_rows(const ConfusionMatrix& m) {
  NormalizedConfusion n;
  for (std::size_t r = 0; r < kNumClasses; ++r) {
    std::uint64_t s = 0;
    for (auto v : m.counts[r]) s += v;
    if (s == 0) {
      n.zero_support[r] = true;
      continue;
    }
    for (std::size_t c = 0; c < kNumClasses; ++c)
      n.values[r][c] = static_cast<double>(m.counts[r][c]) / static_cast<double>(s);
  }
  return n;
}

struct Evaluation {
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::size_t samples = 0;
};

inline Evaluation evaluate(std::span<const StressClass> truth, std::span<const StressClass> predicted) {
  if (truth.empty()) throw DataError("cannot evaluate an empty partition");
  if (truth.size() != predicted.size()) throw std::invalid_argument("truth/prediction length mismatch");
  Evaluation e;
  for (std::size_t i = 0; i < truth.size(); ++i) e.confusion.add(truth[i], predicted[i]);
  e.samples = truth.size();
  e.accuracy = e.confusion.accuracy();
  return e;
}

/// Elementwise mean of the row-normalized matrices; a row is averaged only over
/// the matrices that have support for it.
inline NormalizedConfusion average_confusion(std::span<const ConfusionMatrix> matrices) {
  if (matrices.empty()) throw DataError("no confusion matrices to average");
  NormalizedConfusion avg;
  std::array<std::size_t, kNumClasses> support{};
  for (const auto& m : matrices) {
    const auto n = normalize_rows(m);
    for (std::size_t r = 0; r < kNumClasses; ++r) {
      if (n.zero_support[r]) continue;
      ++support[r];
      for (std::size_t c = 0; c < kNumClasses; ++c) avg.values[r][c] += n.values[r][c];
    }
  }
  for (std::size_t r = 0; r < kNumClasses; ++r) {
    if (support[r] == 0) {
      avg.zero_support[r] = true;
      continue;
    }
    for (auto& v : avg.values[r]) v /= static_cast<double>(support[r]);
  }
  return avg;
}

/// Accuracy of one method on each split.
struct AccuracyReport {
  std::string method;
  std::vector<std::pair<std::string, double>> per_split;  // split_id -> accuracy

  double mean() const {
    if (per_split.empty()) throw DataError("report for " + method + " has no splits");
    double s = 0.0;
    for (const auto& [id, a] : per_split) s += a;
    return s / static_cast<double>(per_split.size());
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["method"] = method;
    auto& s = j["splits"] = nlohmann::ordered_json::object();
    for (const auto& [id, a] : per_split) s[id] = a;
    j["mean"] = mean();
    return j;
  }

  static AccuracyReport from_json(const nlohmann::ordered_json& j) {
    AccuracyReport r;
    r.method = j.at("method").get<std::string>();
    for (auto it = j.at("splits").begin(); it != j.at("splits").end(); ++it)
      r.per_split.emplace_back(it.key(), it.value().get<double>());
    return r;
  }
};

struct MethodTable {
  std::vector<std::string> columns;  // split ids, then "Avg"
  std::vector<std::string> methods;
  std::vector<std::vector<double>> rows;

  std::string csv() const {
    std::string out = "method";
    for (const auto& c : columns) out += "," + c;
    out += "\n";
    for (std::size_t i = 0; i < methods.size(); ++i) {
      out += methods[i];
      for (double v : rows[i]) out += "," + format_double(v);
      out += "\n";
    }
    return out;
  }

  std::string text() const {
    std::size_t w0 = 6;
    for (const auto& m : methods) w0 = std::max(w0, m.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(w0)) << "method";
    for (const auto& c : columns) os << "  " << std::right << std::setw(6) << c;
    os << "\n";
    for (std::size_t i = 0; i < methods.size(); ++i) {
      os << std::left << std::setw(static_cast<int>(w0)) << methods[i];
      for (double v : rows[i]) os << "  " << std::right << std::setw(6) << std::fixed << std::setprecision(3) << v;
      os << "\n";
    }
    return os.str();
  }
};

/// Rows = methods, columns = splits in the first report's order plus Avg.
inline MethodTable method_table(std::span<const AccuracyReport> reports) {
  if (reports.empty()) throw DataError("no reports to tabulate");
  MethodTable t;
  for (const auto& [id, a] : reports.front().per_split) t.columns.push_back(id);
  for (const auto& r : reports) {
    std::map<std::string, double> by_id(r.per_split.begin(), r.per_split.end());
    if (by_id.size() != t.columns.size() || r.per_split.size() != t.columns.size())
      throw DataError("report '" + r.method + "' covers different splits");
    std::vector<double> row;
    for (const auto& id : t.columns) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError("report '" + r.method + "' lacks split " + id);
      row.push_back(it->second);
    }
    row.push_back(r.mean());
    t.methods.push_back(r.method);
    t.rows.push_back(std::move(row));
  }
  t.columns.push_back("Avg");
  return t;
}

}  // namespace scenestress
