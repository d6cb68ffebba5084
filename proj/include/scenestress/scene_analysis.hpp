#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "scenestress/common.hpp"
#include "scenestress/features.hpp"
#include "scenestress/taxonomy.hpp"

namespace scenestress {

// Over/under-representation of each category per stress class:
// ratio(i, p) = mean occupancy of i over frames of class p / mean over all frames.
struct RepresentationRatioTable {
  std::array<double, kNumCategories> global_mean{};
  std::array<std::array<double, kNumClasses>, kNumCategories> class_mean{};
  std::array<std::array<std::optional<double>, kNumClasses>, kNumCategories> ratio{};
  std::array<std::size_t, kNumClasses> class_counts{};
  std::size_t total_rows = 0;

  bool defined(std::size_t category) const { return ratio[category][0].has_value(); }

  /// Categories with the largest ratio for class p, most over-represented first.
  std::vector<std::pair<std::size_t, double>> top_k(StressClass p, std::size_t k) const {
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t i = 0; i < kNumCategories; ++i)
      if (auto r = ratio[i][index_of(p)]) out.emplace_back(i, *r);
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (out.size() > k) out.resize(k);
    return out;
  }
};

inline RepresentationRatioTable representation_ratios(const FeatureTable& table) {
  if (table.rows.empty()) throw DataError("representation ratios need a non-empty feature table");
  RepresentationRatioTable out;
  std::array<std::array<double, kNumClasses>, kNumCategories> class_sum{};
  std::array<double, kNumCategories> sum{};
  for (const auto& row : table.rows) {
    const auto p = index_of(row.stress_class);
    ++out.class_counts[p];
    for (std::size_t i = 0; i < kNumCategories; ++i) {
      sum[i] += row.values[i];
      class_sum[i][p] += row.values[i];
    }
  }
  for (auto c : kAllClasses)
    if (out.class_counts[index_of(c)] == 0)
      throw DataError(std::string("no rows labeled '") + std::string(to_string(c)) +
                      "'; representation ratios are undefined");
  out.total_rows = table.rows.size();
  const double n = static_cast<double>(out.total_rows);
  for (std::size_t i = 0; i < kNumCategories; ++i) {
    out.global_mean[i] = sum[i] / n;
    for (std::size_t p = 0; p < kNumClasses; ++p) {
      out.class_mean[i][p] = class_sum[i][p] / static_cast<double>(out.class_counts[p]);
      if (out.global_mean[i] > 0.0) out.ratio[i][p] = out.class_mean[i][p] / out.global_mean[i];
    }
  }
  return out;
}

/// Long-format CSV `category,class,ratio`; undefined ratios leave the field empty.
/// An empty ordering means taxonomy order.
inline void export_ratio_plot_data(std::ostream& out, const RepresentationRatioTable& table,
                                   const CategoryTaxonomy& taxonomy,
                                   const std::vector<std::string>& ordering = {}) {
  std::vector<std::size_t> order;
  if (ordering.empty()) {
    for (std::size_t i = 0; i < taxonomy.size(); ++i) order.push_back(i);
  } else {
    for (const auto& name : ordering) {
      auto i = taxonomy.find(name);
      if (!i) throw ConfigError("ordering references unknown category '" + name + "'");
      order.push_back(*i);
    }
  }
  out << "category,class,ratio\n";
  for (auto i : order) {
    for (auto c : kAllClasses) {
      out << '"' << taxonomy.name(i) << "\"," << to_string(c) << ',';
      if (auto r = table.ratio[i][index_of(c)]) out << format_double(*r);
      out << '\n';
    }
  }
}

}  // namespace scenestress
