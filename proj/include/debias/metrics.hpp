#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "debias/data.hpp"
#include "debias/model.hpp"

namespace debias {

/// Which conditional alpha measures.
enum class AlphaConditional {
  // P(z in U | predicted = l): the reading consistent with the published tables.
  kIdentityGivenPrediction,
  // P(predicted = l | z in U): the conditional as literally written.
  kPredictionGivenIdentity,
};

double accuracy(std::span<const PrimaryPrediction> predictions, const Dataset& dataset);

struct AlphaResult {
  double alpha = 0.0;
  std::size_t support = 0;
};

/// Throws NoSupportError when the conditioning event never occurs among
/// instances with a known identity.
AlphaResult alpha(std::span<const PrimaryPrediction> predictions, const Dataset& dataset, int label,
                  std::string_view attribute, std::span<const std::string> under_represented,
                  AlphaConditional conditional = AlphaConditional::kIdentityGivenPrediction);

/// alpha * (1 - alpha); 0.25 at alpha = 1/2. Throws ArgumentError outside [0, 1].
double fairness(double alpha);

/// A * F / (A + F), as published (half the textbook harmonic mean); 0 when A + F = 0.
double gamma(double accuracy, double fairness);

/// Round half to even at 4 decimals, the precision used in reports.
double round4(double v);

/// "label@attribute=cat1+cat2", e.g. "fear@gender=female".
struct AssociationQuery {
  std::string label;
  std::string attribute;
  std::vector<std::string> under_represented;
  AlphaConditional conditional = AlphaConditional::kIdentityGivenPrediction;

  std::string name() const;
  friend bool operator==(const AssociationQuery&, const AssociationQuery&) = default;
};

AssociationQuery parse_query(std::string_view text);

struct AssociationMetrics {
  AssociationQuery query;
  std::optional<double> alpha;
  std::optional<double> fairness;
  std::optional<double> gamma;
  std::size_t support = 0;
  std::vector<std::string> flags;  // e.g. "no-support"
  friend bool operator==(const AssociationMetrics&, const AssociationMetrics&) = default;
};

struct MetricsReport {
  double accuracy = 0.0;
  std::size_t test_size = 0;
  std::vector<AssociationMetrics> associations;
  std::string model_id;
  std::string dataset_id;
  std::uint64_t seed = 0;
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// One entry per query, all sharing the same accuracy. A query without
/// support becomes a flagged entry rather than an error.
MetricsReport evaluate_predictions(std::span<const PrimaryPrediction> predictions, const Dataset& test,
                                   std::span<const AssociationQuery> queries);
MetricsReport evaluate(const MultiObjectiveModel& model, const Dataset& test, std::span<const AssociationQuery> queries);

std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(std::string_view text);
// Human-readable table with 4-decimal values.
std::string report_to_table(const MetricsReport& report);

}  // namespace debias
