#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "debias/nn_core.hpp"

namespace debias {

// Identity value of an instance whose attribute is unknown.
inline constexpr int kMissing = -1;

/// A categorical social-identity variable. It is never a model input unless
/// explicitly appended with append_identity_feature().
struct IdentityAttribute {
  std::string name;
  std::vector<std::string> categories;
  bool missing_allowed = true;

  std::size_t size() const noexcept { return categories.size(); }
  // Index of a category name, kMissing for "" / "NA"; throws ArgumentError otherwise.
  int category_index(std::string_view category) const;
  friend bool operator==(const IdentityAttribute&, const IdentityAttribute&) = default;
};

struct Instance {
  Vector features;
  int label = 0;
  std::vector<int> identity;  // one entry per attribute, kMissing when unknown
  friend bool operator==(const Instance&, const Instance&) = default;
};

/// Labelled feature vectors plus their identity attributes. Every mutating
/// operation in this module returns a new Dataset.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t dim, std::vector<std::string> label_names,
          std::vector<IdentityAttribute> attributes);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return instances_.size(); }
  bool empty() const noexcept { return instances_.empty(); }
  std::size_t num_labels() const noexcept { return label_names_.size(); }

  const std::vector<std::string>& label_names() const noexcept { return label_names_; }
  const std::vector<IdentityAttribute>& attributes() const noexcept { return attributes_; }
  const std::vector<Instance>& instances() const noexcept { return instances_; }
  const Instance& operator[](std::size_t i) const { return instances_[i]; }

  int label_index(std::string_view name) const;
  std::size_t attribute_index(std::string_view name) const;
  const IdentityAttribute& attribute(std::string_view name) const {
    return attributes_[attribute_index(name)];
  }

  // Validates dimension, label range and identity ranges.
  void add(Instance instance);
  Dataset subset(std::span<const std::size_t> indices) const;
  // Same schema, no instances.
  Dataset empty_like() const { return Dataset(dim_, label_names_, attributes_); }

  // Count of instances per (label, attribute, category); missing is reported as "NA".
  std::map<std::array<std::string, 3>, std::size_t> cell_counts() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> label_names_;
  std::vector<IdentityAttribute> attributes_;
  std::vector<Instance> instances_;
};

// ---- CSV ------------------------------------------------------------------

/// Column declarations for the dataset CSV: f0..f{dim-1}, label, one column per attribute.
struct CsvSchema {
  std::size_t dim = 0;
  std::vector<std::string> label_names;
  std::vector<IdentityAttribute> attributes;
};

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);
Dataset parse_csv(std::string_view text, const CsvSchema& schema);
std::string to_csv(const Dataset& dataset);
void write_csv(const std::filesystem::path& path, const Dataset& dataset);

// The schema sidecar ("<file>.schema") pins label and category order so that
// integer codes survive a round trip through CSV.
CsvSchema schema_of(const Dataset& dataset);
std::string schema_to_text(const CsvSchema& schema);
CsvSchema schema_from_text(std::string_view text);
// Reads the sidecar if present, otherwise infers the schema from the header and
// the names in order of first appearance.
CsvSchema discover_schema(const std::filesystem::path& csv_path);
Dataset load_dataset(const std::filesystem::path& csv_path);
void save_dataset(const std::filesystem::path& csv_path, const Dataset& dataset);

// ---- Generators ------------------------------------------------------------

struct Gmm2dParams {
  std::size_t n_samples = 2000;
  std::array<double, 2> mu_red{2.0, 1.0};
  std::array<double, 2> mu_green{2.0, 4.0};
  double stddev = 1.0;
  std::array<double, 2> priors{0.5, 0.5};
  double halfplane_threshold = 2.0;
};

/// Two-component isotropic mixture. Label 0 = "red", 1 = "green"; the
/// "halfplane" attribute is "upper" iff x2 > threshold, else "lower".
Dataset gen_gmm2d(std::uint64_t seed, const Gmm2dParams& params = {});

struct PlantedCell {
  int label = 0;
  std::vector<int> identity;
  std::size_t count = 0;
  Vector mean;
  double stddev = 1.0;
};

Dataset gen_planted_bias(std::uint64_t seed, std::size_t dim, std::vector<std::string> label_names,
                         std::vector<IdentityAttribute> attributes,
                         const std::vector<PlantedCell>& cells);

/// Planted-bias generator description as read from a cells file.
struct PlantedSpec {
  std::size_t dim = 0;
  std::vector<std::string> label_names;
  std::vector<IdentityAttribute> attributes;
  std::vector<PlantedCell> cells;
};
PlantedSpec parse_planted_spec(std::string_view text);
Dataset gen_planted_bias(std::uint64_t seed, const PlantedSpec& spec);

// ---- Subsampling, splitting, feature augmentation ---------------------------

struct SubsampleTarget {
  std::string label;
  std::string attribute;
  std::string category;  // "NA" targets instances whose value is missing
  std::size_t count = 0;
};

struct SubsamplePlan {
  std::vector<SubsampleTarget> targets;
};

// One line per target: label,attribute,category,count
SubsamplePlan parse_subsample_plan(std::string_view text);
SubsamplePlan load_subsample_plan(const std::filesystem::path& path);

/// Removes instances until every targeted (label, attribute, category) cell
/// holds exactly its target count. Instances outside every targeted cell are
/// kept. Targets are satisfied in plan order and a satisfied cell is never
/// drawn below its target by a later one; throws CapacityError naming the
/// cell when that is impossible.
Dataset subsample(const Dataset& dataset, const SubsamplePlan& plan, std::uint64_t seed);

/// Stratified by (label, identity tuple); each cell sends ceil(fraction * n) to train.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction, std::uint64_t seed);

/// Appends a one-hot block for the attribute (all zeros when missing).
Dataset append_identity_feature(const Dataset& dataset, std::string_view attribute);

}  // namespace debias
