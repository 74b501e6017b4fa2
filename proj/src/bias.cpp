#include "debias/bias.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "debias/errors.hpp"
#include "debias/ini.hpp"

namespace debias {

std::string BiasTaskSpec::describe() const {
  return fmt::format("{{{}}} vs {}={{{}}} (tau {})", fmt::join(sensitive_labels, ","), attribute,
                     fmt::join(under_represented, ","), tau);
}

ResolvedBiasTask resolve(const BiasTaskSpec& spec, const Dataset& dataset) {
  if (!(spec.tau >= 0.0 && spec.tau <= 1.0)) {
    throw ArgumentError(fmt::format("tau must lie in [0, 1], got {}", spec.tau));
  }
  ResolvedBiasTask task;
  task.attribute = dataset.attribute_index(spec.attribute);
  task.tau = spec.tau;
  const auto& attr = dataset.attributes()[task.attribute];

  task.sensitive.assign(dataset.num_labels(), 0);
  for (const auto& l : spec.sensitive_labels) task.sensitive[dataset.label_index(l)] = 1;
  const auto n_sensitive = std::count(task.sensitive.begin(), task.sensitive.end(), 1);
  if (n_sensitive == 0 || static_cast<std::size_t>(n_sensitive) == dataset.num_labels()) {
    throw ArgumentError(fmt::format("sensitive labels of {} must be a non-empty strict subset of the labels",
                                    spec.describe()));
  }

  task.under.assign(attr.size(), 0);
  for (const auto& c : spec.under_represented) {
    const int idx = attr.category_index(c);
    if (idx == kMissing) throw ArgumentError("'NA' cannot be an under-represented category");
    task.under[idx] = 1;
  }
  const auto n_under = std::count(task.under.begin(), task.under.end(), 1);
  if (n_under == 0 || static_cast<std::size_t>(n_under) == attr.size()) {
    throw ArgumentError(fmt::format("under-represented set of {} must be a non-empty strict subset of '{}'",
                                    spec.describe(), attr.name));
  }
  return task;
}

BiasLabeling compute_bias_labels(const Dataset& dataset, const BiasTaskSpec& spec) {
  const auto task = resolve(spec, dataset);
  BiasLabeling out;
  out.labels.assign(dataset.size(), BiasLabel::kExcluded);

  std::size_t in_under = 0;
  for (const auto& inst : dataset.instances()) {
    const int z = inst.identity[task.attribute];
    if (!task.sensitive[inst.label] || z == kMissing) continue;
    ++out.support;
    if (task.under[z]) ++in_under;
  }
  if (out.support == 0) {
    throw EmptySupportError(fmt::format("no instance with a sensitive label and known '{}' for {}",
                                        spec.attribute, spec.describe()));
  }
  out.rho = static_cast<double>(in_under) / static_cast<double>(out.support);
  out.active = out.rho > task.tau;

  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& inst = dataset[i];
    const int z = inst.identity[task.attribute];
    if (!task.sensitive[inst.label] || z == kMissing) continue;
    out.labels[i] = (out.active && task.under[z]) ? BiasLabel::kOne : BiasLabel::kZero;
  }
  return out;
}

std::vector<Association> audit_associations(const Dataset& dataset, std::string_view attribute, double tau) {
  const std::size_t a = dataset.attribute_index(attribute);
  const std::size_t n_cat = dataset.attributes()[a].size();
  std::vector<std::vector<std::size_t>> counts(dataset.num_labels(), std::vector<std::size_t>(n_cat, 0));
  std::vector<std::size_t> totals(dataset.num_labels(), 0);
  for (const auto& inst : dataset.instances()) {
    const int z = inst.identity[a];
    if (z == kMissing) continue;
    ++counts[inst.label][z];
    ++totals[inst.label];
  }
  std::vector<Association> out;
  for (std::size_t l = 0; l < dataset.num_labels(); ++l) {
    for (std::size_t c = 0; c < n_cat; ++c) {
      Association assoc{static_cast<int>(l), {static_cast<int>(c)}, 0.0, totals[l], false};
      if (totals[l] > 0) {
        assoc.rho = static_cast<double>(counts[l][c]) / static_cast<double>(totals[l]);
        assoc.active = assoc.rho > tau;
      }
      out.push_back(std::move(assoc));
    }
  }
  return out;
}

std::vector<BiasTaskSpec> parse_bias_specs(std::string_view text) {
  const auto doc = parse_ini(text);
  std::vector<BiasTaskSpec> specs;
  for (const auto* sec : doc.all("spec")) {
    BiasTaskSpec spec;
    spec.attribute = sec->require("attribute");
    spec.sensitive_labels = split_list(sec->require("sensitive_labels"));
    spec.under_represented = split_list(sec->require("under_represented"));
    spec.tau = parse_double(sec->get("tau").value_or("0.5"), sec->line);
    specs.push_back(std::move(spec));
  }
  if (specs.empty()) throw ParseError("no [spec] section found", 1);
  return specs;
}

std::vector<BiasTaskSpec> load_bias_specs(const std::filesystem::path& path) {
  return parse_bias_specs(read_text_file(path));
}

std::string bias_specs_to_text(const std::vector<BiasTaskSpec>& specs) {
  std::string out;
  for (const auto& s : specs) {
    out += fmt::format("[spec]\nattribute = {}\nsensitive_labels = {}\nunder_represented = {}\ntau = {}\n\n",
                       s.attribute, fmt::join(s.sensitive_labels, ", "), fmt::join(s.under_represented, ", "),
                       format_double(s.tau));
  }
  return out;
}

}  // namespace debias
