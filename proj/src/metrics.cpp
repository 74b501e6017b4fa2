#include "debias/metrics.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "debias/errors.hpp"
#include "debias/ini.hpp"

namespace debias {

double accuracy(std::span<const PrimaryPrediction> predictions, const Dataset& dataset) {
  if (dataset.empty()) throw ArgumentError("accuracy of an empty test set");
  if (predictions.size() != dataset.size()) {
    throw ArgumentError(fmt::format("{} predictions for {} instances", predictions.size(), dataset.size()));
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) correct += predictions[i].label == dataset[i].label;
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

AlphaResult alpha(std::span<const PrimaryPrediction> predictions, const Dataset& dataset, int label,
                  std::string_view attribute, std::span<const std::string> under_represented,
                  AlphaConditional conditional) {
  if (predictions.size() != dataset.size()) {
    throw ArgumentError(fmt::format("{} predictions for {} instances", predictions.size(), dataset.size()));
  }
  if (label < 0 || static_cast<std::size_t>(label) >= dataset.num_labels()) {
    throw ArgumentError(fmt::format("label index {} out of range", label));
  }
  const std::size_t a = dataset.attribute_index(attribute);
  const auto& attr = dataset.attributes()[a];
  std::vector<char> in_u(attr.size(), 0);
  for (const auto& c : under_represented) {
    const int idx = attr.category_index(c);
    if (idx == kMissing) throw ArgumentError("'NA' cannot be part of an under-represented set");
    in_u[idx] = 1;
  }

  std::size_t support = 0, hits = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int z = dataset[i].identity[a];
    if (z == kMissing) continue;
    const bool predicted_l = predictions[i].label == label;
    if (conditional == AlphaConditional::kIdentityGivenPrediction) {
      if (!predicted_l) continue;
      ++support;
      hits += in_u[z];
    } else {
      if (!in_u[z]) continue;
      ++support;
      hits += predicted_l;
    }
  }
  if (support == 0) {
    throw NoSupportError(fmt::format("no instance supports alpha for label '{}' vs '{}'",
                                     dataset.label_names()[label], attribute));
  }
  return {static_cast<double>(hits) / static_cast<double>(support), support};
}

double fairness(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError(fmt::format("alpha must lie in [0, 1], got {}", alpha));
  return alpha * (1.0 - alpha);
}

double gamma(double accuracy, double fairness) {
  const double denom = accuracy + fairness;
  if (denom == 0.0) return 0.0;
  return accuracy * fairness / denom;
}

double round4(double v) {
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double r = std::nearbyint(v * 1e4) / 1e4;
  std::fesetround(saved);
  return r;
}

std::string AssociationQuery::name() const {
  return fmt::format("{}@{}={}", label, attribute, fmt::join(under_represented, "+"));
}

AssociationQuery parse_query(std::string_view text) {
  const auto at = text.find('@');
  const auto eq = text.find('=', at == std::string_view::npos ? 0 : at);
  if (at == std::string_view::npos || eq == std::string_view::npos || at == 0 || eq == at + 1) {
    throw ArgumentError(fmt::format("query '{}' is not of the form label@attribute=cat[+cat]", text));
  }
  AssociationQuery q;
  q.label = trim(text.substr(0, at));
  q.attribute = trim(text.substr(at + 1, eq - at - 1));
  q.under_represented = split_list(text.substr(eq + 1), '+');
  if (q.under_represented.empty()) throw ArgumentError(fmt::format("query '{}' names no category", text));
  return q;
}

MetricsReport evaluate_predictions(std::span<const PrimaryPrediction> predictions, const Dataset& test,
                                   std::span<const AssociationQuery> queries) {
  MetricsReport report;
  report.accuracy = accuracy(predictions, test);
  report.test_size = test.size();
  for (const auto& q : queries) {
    AssociationMetrics entry;
    entry.query = q;
    try {
      const auto a = alpha(predictions, test, test.label_index(q.label), q.attribute, q.under_represented,
                           q.conditional);
      entry.alpha = a.alpha;
      entry.support = a.support;
      entry.fairness = fairness(a.alpha);
      entry.gamma = gamma(report.accuracy, *entry.fairness);
    } catch (const NoSupportError&) {
      entry.flags.push_back("no-support");
    }
    report.associations.push_back(std::move(entry));
  }
  return report;
}

MetricsReport evaluate(const MultiObjectiveModel& model, const Dataset& test, std::span<const AssociationQuery> queries) {
  const auto predictions = predict(model, prepare_inputs(model, test));
  return evaluate_predictions(predictions, test, queries);
}

namespace {

using nlohmann::json;

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string report_to_json(const MetricsReport& report) {
  json assoc = json::array();
  for (const auto& a : report.associations) {
    assoc.push_back({{"query", a.query.name()},
                     {"label", a.query.label},
                     {"attribute", a.query.attribute},
                     {"U", a.query.under_represented},
                     {"conditional", a.query.conditional == AlphaConditional::kIdentityGivenPrediction
                                         ? "identity-given-prediction"
                                         : "prediction-given-identity"},
                     {"alpha", optional_json(a.alpha)},
                     {"fairness", optional_json(a.fairness)},
                     {"gamma", optional_json(a.gamma)},
                     {"support", a.support},
                     {"flags", a.flags}});
  }
  json j = {{"accuracy", report.accuracy},   {"test_size", report.test_size},
            {"associations", assoc},         {"model_id", report.model_id},
            {"dataset_id", report.dataset_id}, {"seed", report.seed}};
  return j.dump(2) + "\n";
}

MetricsReport report_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    MetricsReport r;
    r.accuracy = j.at("accuracy").get<double>();
    r.test_size = j.value("test_size", std::size_t{0});
    r.model_id = j.at("model_id").get<std::string>();
    r.dataset_id = j.at("dataset_id").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& a : j.at("associations")) {
      AssociationMetrics m;
      m.query.label = a.at("label").get<std::string>();
      m.query.attribute = a.at("attribute").get<std::string>();
      m.query.under_represented = a.at("U").get<std::vector<std::string>>();
      m.query.conditional = a.value("conditional", "identity-given-prediction") == "prediction-given-identity"
                                ? AlphaConditional::kPredictionGivenIdentity
                                : AlphaConditional::kIdentityGivenPrediction;
      m.alpha = optional_from(a.at("alpha"));
      m.fairness = optional_from(a.at("fairness"));
      m.gamma = optional_from(a.at("gamma"));
      m.support = a.at("support").get<std::size_t>();
      m.flags = a.at("flags").get<std::vector<std::string>>();
      r.associations.push_back(std::move(m));
    }
    return r;
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("malformed metrics report: {}", e.what()), 1);
  }
}

std::string report_to_table(const MetricsReport& report) {
  auto cell = [](const std::optional<double>& v) { return v ? fmt::format("{:.4f}", round4(*v)) : std::string("NA"); };
  std::string out = fmt::format("accuracy {:.4f} (n={})\n", round4(report.accuracy), report.test_size);
  if (report.associations.empty()) return out;
  out += fmt::format("{:<32} {:>8} {:>8} {:>8} {:>8}  flags\n", "query", "alpha", "F", "gamma", "support");
  for (const auto& a : report.associations) {
    out += fmt::format("{:<32} {:>8} {:>8} {:>8} {:>8}  {}\n", a.query.name(), cell(a.alpha), cell(a.fairness),
                       cell(a.gamma), a.support, fmt::join(a.flags, ","));
  }
  return out;
}

}  // namespace debias
