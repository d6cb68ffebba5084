#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "scenestress/common.hpp"

namespace scenestress {

inline constexpr std::size_t kNumCategories = 66;
inline constexpr std::uint8_t kVoidLabel = 255;

// Street-scene taxonomy, 66 categories. Only the index order matters to the
// pipeline; names are for reports.
class CategoryTaxonomy {
 public:
  CategoryTaxonomy(std::string version, std::vector<std::string> names)
      : version_(std::move(version)), names_(std::move(names)) {
    if (names_.size() != kNumCategories)
      throw ConfigError("taxonomy must list exactly 66 categories, got " +
                        std::to_string(names_.size()));
    std::set<std::string> seen(names_.begin(), names_.end());
    if (seen.size() != names_.size()) throw ConfigError("taxonomy has duplicate category names");
  }

  const std::string& version() const noexcept { return version_; }
  std::size_t size() const noexcept { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  std::optional<std::size_t> find(std::string_view name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names_.begin());
  }

  std::size_t index(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw ConfigError("unknown category '" + std::string(name) + "'");
  }

  /// Reads the line-per-category file format; `# version: X` sets the version.
  static CategoryTaxonomy load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open taxonomy file " + path);
    std::string version = "unversioned";
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (line[0] == '#') {
        constexpr std::string_view tag = "# version:";
        if (line.rfind(tag, 0) == 0) {
          version = line.substr(tag.size());
          version.erase(0, version.find_first_not_of(' '));
        }
        continue;
      }
      names.push_back(line);
    }
    return CategoryTaxonomy(std::move(version), std::move(names));
  }

  static const CategoryTaxonomy& mapillary_vistas() {
    static const CategoryTaxonomy instance(
        "mapillary-vistas-1.2",
        {"Bird", "Ground Animal", "Curb", "Fence", "Guard Rail", "Barrier", "Wall",
         "Bike Lane", "Crosswalk - Plain", "Curb Cut", "Parking", "Pedestrian Area",
         "Rail Track", "Road", "Service Lane", "Sidewalk", "Bridge", "Building", "Tunnel",
         "Person", "Bicyclist", "Motorcyclist", "Other Rider", "Lane Marking - Crosswalk",
         "Lane Marking - General", "Mountain", "Sand", "Sky", "Snow", "Terrain",
         "Vegetation", "Water", "Banner", "Bench", "Bike Rack", "Billboard", "Catch Basin",
         "CCTV Camera", "Fire Hydrant", "Junction Box", "Mailbox", "Manhole", "Phone Booth",
         "Pothole", "Street Light", "Pole", "Traffic Sign Frame", "Utility Pole",
         "Traffic Light", "Traffic Sign (Back)", "Traffic Sign (Front)", "Trash Can",
         "Bicycle", "Boat", "Bus", "Car", "Caravan", "Motorcycle", "On Rails",
         "Other Vehicle", "Trailer", "Truck", "Wheeled Slow", "Car Mount", "Ego Vehicle",
         "Unlabeled"});
    return instance;
  }

 private:
  std::string version_;
  std::vector<std::string> names_;
};

}  // namespace scenestress
