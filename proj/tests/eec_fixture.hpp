#pragma once

// Synthetic dataset with the label x gender x race counts of the balanced
// emotion corpus: 1050 sentences per (emotion, gender), split evenly over the
// two races and no race; 120 neutral per gender split over the two races; and
// 2920 neutral sentences with neither attribute.

#include <string>
#include <vector>

#include "debias/data.hpp"

namespace eec {

inline const std::vector<std::string> kLabels{"fear", "anger", "joy", "sadness", "neutral"};

inline std::vector<debias::IdentityAttribute> attributes() {
  return {{"gender", {"male", "female"}, true}, {"race", {"african-american", "caucasian"}, true}};
}

inline std::vector<debias::PlantedCell> balanced_cells(std::size_t dim) {
  using debias::kMissing;
  std::vector<debias::PlantedCell> cells;
  for (int label = 0; label < 4; ++label) {
    for (int g = 0; g < 2; ++g) {
      for (int r : {0, 1, kMissing}) cells.push_back({label, {g, r}, 350, debias::Vector(dim, 0.0), 1.0});
    }
  }
  for (int g = 0; g < 2; ++g) {
    for (int r : {0, 1}) cells.push_back({4, {g, r}, 60, debias::Vector(dim, 0.0), 1.0});
  }
  cells.push_back({4, {kMissing, kMissing}, 2920, debias::Vector(dim, 0.0), 1.0});
  return cells;
}

inline debias::Dataset balanced(std::uint64_t seed, std::size_t dim = 4) {
  return debias::gen_planted_bias(seed, dim, kLabels, attributes(), balanced_cells(dim));
}

// Gender rows, race rows and the no-identity neutral row of the
// (female, fear) / (male, anger) biased subsample.
inline constexpr const char* kSs1Plan = R"(# label,attribute,category,count
fear,gender,male,500
fear,gender,female,1050
anger,gender,male,1050
anger,gender,female,500
fear,race,african-american,450
fear,race,caucasian,550
anger,race,african-american,550
anger,race,caucasian,500
neutral,gender,NA,1450
)";

}  // namespace eec
