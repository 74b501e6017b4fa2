#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "debias/data.hpp"

namespace debias {

/// One bias pseudo-task: a set of sensitive primary labels, an identity
/// attribute and the under-represented categories of that attribute. The
/// remaining categories form the dominating set.
struct BiasTaskSpec {
  std::string attribute;
  std::vector<std::string> sensitive_labels;
  std::vector<std::string> under_represented;
  double tau = 0.5;

  std::string describe() const;
  friend bool operator==(const BiasTaskSpec&, const BiasTaskSpec&) = default;
};

/// BiasTaskSpec resolved against a dataset's label and category indices.
struct ResolvedBiasTask {
  std::size_t attribute = 0;
  std::vector<char> sensitive;  // indexed by label
  std::vector<char> under;      // indexed by category
  double tau = 0.5;
};

// Throws ArgumentError unless sensitive labels and U are non-empty strict
// subsets of the label set and the attribute's categories, and tau is in [0, 1].
ResolvedBiasTask resolve(const BiasTaskSpec& spec, const Dataset& dataset);

enum class BiasLabel : signed char { kExcluded = -1, kZero = 0, kOne = 1 };

struct BiasLabeling {
  bool active = false;
  double rho = 0.0;
  std::size_t support = 0;  // instances with a sensitive label and a known identity
  std::vector<BiasLabel> labels;
};

/// Bias response variables. rho is the dataset-level share of sensitive-label
/// instances whose identity falls in U (missing identities are ignored); the
/// task is active iff rho > tau. Active tasks label sensitive-label instances
/// 1 (identity in U) or 0 (identity in D); every other instance is excluded.
/// Throws EmptySupportError when no sensitive-label instance has a known identity.
BiasLabeling compute_bias_labels(const Dataset& dataset, const BiasTaskSpec& spec);

struct Association {
  int label = 0;
  std::vector<int> categories;
  double rho = 0.0;
  std::size_t support = 0;
  bool active = false;
};

/// rho = P(z = c | y = l) for every (label, category) pair of one attribute.
/// Labels without any known identity report support 0 and are never active.
std::vector<Association> audit_associations(const Dataset& dataset, std::string_view attribute, double tau);

// Text format: one [spec] section per task with keys attribute,
// sensitive_labels, under_represented (comma lists) and tau.
std::vector<BiasTaskSpec> parse_bias_specs(std::string_view text);
std::vector<BiasTaskSpec> load_bias_specs(const std::filesystem::path& path);
std::string bias_specs_to_text(const std::vector<BiasTaskSpec>& specs);

}  // namespace debias
