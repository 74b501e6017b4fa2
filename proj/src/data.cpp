#include "debias/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "debias/errors.hpp"
#include "debias/ini.hpp"

namespace debias {

namespace {

bool is_missing_token(std::string_view s) { return s.empty() || s == "NA"; }

void validate_attribute(const IdentityAttribute& attr) {
  if (attr.categories.size() < 2) {
    throw ArgumentError(fmt::format("attribute '{}' needs at least 2 categories", attr.name));
  }
  std::set<std::string> seen(attr.categories.begin(), attr.categories.end());
  if (seen.size() != attr.categories.size()) {
    throw ArgumentError(fmt::format("attribute '{}' has duplicate category names", attr.name));
  }
  for (const auto& c : attr.categories) {
    if (is_missing_token(c)) throw ArgumentError(fmt::format("attribute '{}': '{}' is reserved", attr.name, c));
  }
}

}  // namespace

int IdentityAttribute::category_index(std::string_view category) const {
  if (is_missing_token(category)) return kMissing;
  auto it = std::find(categories.begin(), categories.end(), category);
  if (it == categories.end()) {
    throw ArgumentError(fmt::format("attribute '{}' has no category '{}'", name, category));
  }
  return static_cast<int>(it - categories.begin());
}

Dataset::Dataset(std::size_t dim, std::vector<std::string> label_names,
                 std::vector<IdentityAttribute> attributes)
    : dim_(dim), label_names_(std::move(label_names)), attributes_(std::move(attributes)) {
  if (dim_ == 0) throw ArgumentError("dataset dimension must be positive");
  if (label_names_.size() < 2) throw ArgumentError("dataset needs at least 2 primary labels");
  std::set<std::string> seen(label_names_.begin(), label_names_.end());
  if (seen.size() != label_names_.size()) throw ArgumentError("duplicate primary label names");
  std::set<std::string> attr_names;
  for (const auto& a : attributes_) {
    validate_attribute(a);
    if (!attr_names.insert(a.name).second) {
      throw ArgumentError(fmt::format("duplicate attribute '{}'", a.name));
    }
  }
}

int Dataset::label_index(std::string_view name) const {
  auto it = std::find(label_names_.begin(), label_names_.end(), name);
  if (it == label_names_.end()) throw ArgumentError(fmt::format("unknown label '{}'", name));
  return static_cast<int>(it - label_names_.begin());
}

std::size_t Dataset::attribute_index(std::string_view name) const {
  for (std::size_t i = 0; i < attributes_.size(); ++i)
    if (attributes_[i].name == name) return i;
  throw ArgumentError(fmt::format("unknown identity attribute '{}'", name));
}

void Dataset::add(Instance instance) {
  if (instance.features.size() != dim_) {
    throw ShapeError(fmt::format("instance has {} features, dataset dimension is {}",
                                 instance.features.size(), dim_));
  }
  if (instance.label < 0 || static_cast<std::size_t>(instance.label) >= label_names_.size()) {
    throw ArgumentError(fmt::format("label {} outside 0..{}", instance.label, label_names_.size() - 1));
  }
  if (instance.identity.size() != attributes_.size()) {
    throw ShapeError(fmt::format("instance has {} identity values, dataset has {} attributes",
                                 instance.identity.size(), attributes_.size()));
  }
  for (std::size_t a = 0; a < attributes_.size(); ++a) {
    const int v = instance.identity[a];
    if (v == kMissing) {
      if (!attributes_[a].missing_allowed) {
        throw ArgumentError(fmt::format("attribute '{}' may not be missing", attributes_[a].name));
      }
    } else if (v < 0 || static_cast<std::size_t>(v) >= attributes_[a].size()) {
      throw ArgumentError(fmt::format("value {} outside attribute '{}'", v, attributes_[a].name));
    }
  }
  instances_.push_back(std::move(instance));
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out = empty_like();
  out.instances_.reserve(indices.size());
  for (std::size_t i : indices) out.instances_.push_back(instances_.at(i));
  return out;
}

std::map<std::array<std::string, 3>, std::size_t> Dataset::cell_counts() const {
  std::map<std::array<std::string, 3>, std::size_t> counts;
  for (const auto& inst : instances_) {
    for (std::size_t a = 0; a < attributes_.size(); ++a) {
      const int v = inst.identity[a];
      const std::string cat = v == kMissing ? "NA" : attributes_[a].categories[v];
      ++counts[{label_names_[inst.label], attributes_[a].name, cat}];
    }
  }
  return counts;
}

// ---- CSV --------------------------------------------------------------------

Dataset parse_csv(std::string_view text, const CsvSchema& schema) {
  Dataset ds(schema.dim, schema.label_names, schema.attributes);
  const std::size_t arity = schema.dim + 1 + schema.attributes.size();

  std::vector<std::string> expected;
  for (std::size_t j = 0; j < schema.dim; ++j) expected.push_back(fmt::format("f{}", j));
  expected.push_back("label");
  for (const auto& a : schema.attributes) expected.push_back(a.name);

  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;

    auto cells = split_list(line);
    if (!header_seen) {
      if (cells != expected) {
        throw ParseError(fmt::format("header '{}' does not match schema '{}'", line,
                                     fmt::join(expected, ",")),
                         line_no);
      }
      header_seen = true;
      continue;
    }
    if (cells.size() != arity) {
      throw ParseError(fmt::format("expected {} columns, found {}", arity, cells.size()), line_no);
    }
    Instance inst;
    inst.features.reserve(schema.dim);
    for (std::size_t j = 0; j < schema.dim; ++j) {
      const double v = parse_double(cells[j], line_no);
      if (!std::isfinite(v)) throw ParseError(fmt::format("feature f{} is not finite", j), line_no);
      inst.features.push_back(v);
    }
    auto lit = std::find(schema.label_names.begin(), schema.label_names.end(), cells[schema.dim]);
    if (lit == schema.label_names.end()) {
      throw ParseError(fmt::format("unknown label '{}'", cells[schema.dim]), line_no);
    }
    inst.label = static_cast<int>(lit - schema.label_names.begin());
    for (std::size_t a = 0; a < schema.attributes.size(); ++a) {
      try {
        inst.identity.push_back(schema.attributes[a].category_index(cells[schema.dim + 1 + a]));
      } catch (const ArgumentError& e) {
        throw ParseError(e.what(), line_no);
      }
    }
    try {
      ds.add(std::move(inst));
    } catch (const Error& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  if (!header_seen) throw ParseError("empty CSV file", line_no);
  return ds;
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  return parse_csv(read_text_file(path), schema);
}

std::string to_csv(const Dataset& dataset) {
  std::string out;
  for (std::size_t j = 0; j < dataset.dim(); ++j) out += fmt::format("f{},", j);
  out += "label";
  for (const auto& a : dataset.attributes()) out += "," + a.name;
  out += '\n';
  for (const auto& inst : dataset.instances()) {
    for (double v : inst.features) {
      out += format_double(v);
      out += ',';
    }
    out += dataset.label_names()[inst.label];
    for (std::size_t a = 0; a < dataset.attributes().size(); ++a) {
      const int v = inst.identity[a];
      out += ',';
      out += v == kMissing ? std::string("NA") : dataset.attributes()[a].categories[v];
    }
    out += '\n';
  }
  return out;
}

void write_csv(const std::filesystem::path& path, const Dataset& dataset) {
  write_file_atomic(path, to_csv(dataset));
}

CsvSchema schema_of(const Dataset& dataset) {
  return {dataset.dim(), dataset.label_names(), dataset.attributes()};
}

std::string schema_to_text(const CsvSchema& schema) {
  std::string out = fmt::format("[schema]\ndim = {}\nlabels = {}\n", schema.dim,
                                fmt::join(schema.label_names, ", "));
  for (const auto& a : schema.attributes) {
    out += fmt::format("\n[attribute]\nname = {}\ncategories = {}\nmissing_allowed = {}\n", a.name,
                       fmt::join(a.categories, ", "), a.missing_allowed ? "true" : "false");
  }
  return out;
}

CsvSchema schema_from_text(std::string_view text) {
  const auto doc = parse_ini(text);
  const auto* head = doc.find("schema");
  if (!head) throw ParseError("schema file has no [schema] section", 1);
  CsvSchema schema;
  schema.dim = static_cast<std::size_t>(parse_int(head->require("dim"), head->line));
  schema.label_names = split_list(head->require("labels"));
  for (const auto* sec : doc.all("attribute")) {
    IdentityAttribute attr{sec->require("name"), split_list(sec->require("categories")), true};
    if (auto m = sec->get("missing_allowed")) attr.missing_allowed = (*m == "true");
    schema.attributes.push_back(std::move(attr));
  }
  return schema;
}

CsvSchema discover_schema(const std::filesystem::path& csv_path) {
  auto sidecar = csv_path;
  sidecar += ".schema";
  if (std::filesystem::exists(sidecar)) return schema_from_text(read_text_file(sidecar));

  const std::string text = read_text_file(csv_path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty CSV file", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_list(line);
  auto label_col = std::find(header.begin(), header.end(), "label");
  if (label_col == header.end()) throw ParseError("header has no 'label' column", 1);

  CsvSchema schema;
  schema.dim = static_cast<std::size_t>(label_col - header.begin());
  for (auto it = label_col + 1; it != header.end(); ++it) schema.attributes.push_back({*it, {}, true});

  auto note = [](std::vector<std::string>& names, const std::string& v) {
    if (std::find(names.begin(), names.end(), v) == names.end()) names.push_back(v);
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_list(line);
    if (cells.size() != header.size()) continue;  // parse_csv reports it with a line number
    note(schema.label_names, cells[schema.dim]);
    for (std::size_t a = 0; a < schema.attributes.size(); ++a) {
      const auto& v = cells[schema.dim + 1 + a];
      if (!is_missing_token(v)) note(schema.attributes[a].categories, v);
    }
  }
  return schema;
}

Dataset load_dataset(const std::filesystem::path& csv_path) {
  return load_csv(csv_path, discover_schema(csv_path));
}

void save_dataset(const std::filesystem::path& csv_path, const Dataset& dataset) {
  write_csv(csv_path, dataset);
  auto sidecar = csv_path;
  sidecar += ".schema";
  write_file_atomic(sidecar, schema_to_text(schema_of(dataset)));
}

// ---- Generators ---------------------------------------------------------------

Dataset gen_gmm2d(std::uint64_t seed, const Gmm2dParams& params) {
  const double total = params.priors[0] + params.priors[1];
  if (params.priors[0] < 0.0 || params.priors[1] < 0.0 || std::abs(total - 1.0) > 1e-9) {
    throw ArgumentError(fmt::format("mixture priors must be nonnegative and sum to 1, got ({}, {})",
                                    params.priors[0], params.priors[1]));
  }
  if (params.n_samples == 0) throw ArgumentError("gen_gmm2d needs at least one sample");

  Dataset ds(2, {"red", "green"}, {{"halfplane", {"lower", "upper"}, false}});
  Rng rng(seed);
  for (std::size_t i = 0; i < params.n_samples; ++i) {
    const int component = rng.uniform() < params.priors[0] ? 0 : 1;
    const auto& mu = component == 0 ? params.mu_red : params.mu_green;
    Vector x = gaussian_sample(rng, mu, params.stddev);
    const int half = x[1] > params.halfplane_threshold ? 1 : 0;
    ds.add({std::move(x), component, {half}});
  }
  return ds;
}

Dataset gen_planted_bias(std::uint64_t seed, std::size_t dim, std::vector<std::string> label_names,
                         std::vector<IdentityAttribute> attributes,
                         const std::vector<PlantedCell>& cells) {
  if (dim == 0) throw ArgumentError("gen_planted_bias: dimension must be positive");
  Dataset ds(dim, std::move(label_names), std::move(attributes));
  Rng rng(seed);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& cell = cells[c];
    if (cell.count == 0) throw ArgumentError(fmt::format("cell {} has zero count", c));
    if (cell.mean.size() != dim) {
      throw ArgumentError(fmt::format("cell {} mean has length {}, dimension is {}", c, cell.mean.size(), dim));
    }
    for (std::size_t i = 0; i < cell.count; ++i) {
      ds.add({gaussian_sample(rng, cell.mean, cell.stddev), cell.label, cell.identity});
    }
  }
  return ds;
}

PlantedSpec parse_planted_spec(std::string_view text) {
  const auto doc = parse_ini(text);
  const auto* head = doc.find("dataset");
  if (!head) throw ParseError("cells file has no [dataset] section", 1);
  PlantedSpec spec;
  spec.dim = static_cast<std::size_t>(parse_int(head->require("dim"), head->line));
  spec.label_names = split_list(head->require("labels"));
  for (const auto* sec : doc.all("attribute")) {
    spec.attributes.push_back({sec->require("name"), split_list(sec->require("categories")), true});
  }
  for (const auto* sec : doc.all("cell")) {
    PlantedCell cell;
    const auto label = sec->require("label");
    auto lit = std::find(spec.label_names.begin(), spec.label_names.end(), label);
    if (lit == spec.label_names.end()) throw ParseError(fmt::format("unknown label '{}'", label), sec->line);
    cell.label = static_cast<int>(lit - spec.label_names.begin());
    for (const auto& attr : spec.attributes) {
      const auto v = sec->get(attr.name);
      try {
        cell.identity.push_back(v ? attr.category_index(*v) : kMissing);
      } catch (const ArgumentError& e) {
        throw ParseError(e.what(), sec->line);
      }
    }
    const auto count = parse_int(sec->require("count"), sec->line);
    if (count <= 0) throw ParseError("cell count must be positive", sec->line);
    cell.count = static_cast<std::size_t>(count);
    cell.stddev = parse_double(sec->get("stddev").value_or("1"), sec->line);
    for (const auto& m : split_list(sec->get("mean").value_or(""))) cell.mean.push_back(parse_double(m, sec->line));
    if (cell.mean.empty()) cell.mean.assign(spec.dim, 0.0);
    spec.cells.push_back(std::move(cell));
  }
  return spec;
}

Dataset gen_planted_bias(std::uint64_t seed, const PlantedSpec& spec) {
  return gen_planted_bias(seed, spec.dim, spec.label_names, spec.attributes, spec.cells);
}

// ---- Subsampling --------------------------------------------------------------

SubsamplePlan parse_subsample_plan(std::string_view text) {
  SubsamplePlan plan;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_list(line);
    if (cells.size() != 4) throw ParseError("plan line must be label,attribute,category,count", line_no);
    const auto count = parse_int(cells[3], line_no);
    if (count < 0) throw ParseError("target count must be nonnegative", line_no);
    plan.targets.push_back({cells[0], cells[1], cells[2], static_cast<std::size_t>(count)});
  }
  return plan;
}

SubsamplePlan load_subsample_plan(const std::filesystem::path& path) {
  return parse_subsample_plan(read_text_file(path));
}

Dataset subsample(const Dataset& dataset, const SubsamplePlan& plan, std::uint64_t seed) {
  struct Cell {
    int label;
    std::size_t attribute;
    int category;
    std::size_t target;
    std::size_t count = 0;
    std::vector<std::size_t> members;
    std::string name;
  };
  std::vector<Cell> cells;
  for (const auto& t : plan.targets) {
    const std::size_t a = dataset.attribute_index(t.attribute);
    cells.push_back({dataset.label_index(t.label), a, dataset.attributes()[a].category_index(t.category),
                     t.count, 0, {}, fmt::format("({}, {}={})", t.label, t.attribute, t.category)});
  }

  std::vector<std::vector<std::size_t>> membership(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& inst = dataset[i];
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (inst.label == cells[c].label && inst.identity[cells[c].attribute] == cells[c].category) {
        membership[i].push_back(c);
        cells[c].members.push_back(i);
        ++cells[c].count;
      }
    }
  }
  for (const auto& c : cells) {
    if (c.count < c.target) {
      throw CapacityError(fmt::format("cell {} wants {} instances but only {} are available",
                                      c.name, c.target, c.count));
    }
  }

  // Removal prefers instances whose other cells are also above target, so a
  // joint plan (e.g. gender and race targets on the same label) is met exactly.
  Rng rng(seed);
  std::vector<char> kept(dataset.size(), 1);
  std::vector<std::size_t> best;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    while (cells[c].count > cells[c].target) {
      best.clear();
      std::size_t best_score = 0;
      for (std::size_t i : cells[c].members) {
        if (!kept[i]) continue;
        bool removable = true;
        std::size_t score = 0;
        for (std::size_t other : membership[i]) {
          if (other == c) continue;
          if (cells[other].count <= cells[other].target) {
            removable = false;
            break;
          }
          ++score;
        }
        if (!removable) continue;
        if (best.empty() || score > best_score) {
          best.clear();
          best_score = score;
        }
        if (score == best_score) best.push_back(i);
      }
      if (best.empty()) {
        throw CapacityError(fmt::format(
            "cell {} cannot reach {} without breaking an earlier target ({} left)", cells[c].name,
            cells[c].target, cells[c].count));
      }
      const std::size_t victim = best[rng.uniform_index(best.size())];
      kept[victim] = 0;
      for (std::size_t other : membership[victim]) --cells[other].count;
    }
  }

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (kept[i]) keep.push_back(i);
  return dataset.subset(keep);
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ArgumentError(fmt::format("train fraction must lie in (0, 1), got {}", train_fraction));
  }
  std::map<std::pair<int, std::vector<int>>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    strata[{dataset[i].label, dataset[i].identity}].push_back(i);
  }
  Rng rng(seed);
  std::vector<std::size_t> train_idx, test_idx;
  for (auto& [key, members] : strata) {
    rng.shuffle(members);
    const double exact = train_fraction * static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::ceil(exact - 1e-9));
    train_idx.insert(train_idx.end(), members.begin(), members.begin() + n_train);
    test_idx.insert(test_idx.end(), members.begin() + n_train, members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {dataset.subset(train_idx), dataset.subset(test_idx)};
}

Dataset append_identity_feature(const Dataset& dataset, std::string_view attribute) {
  const std::size_t a = dataset.attribute_index(attribute);
  const std::size_t width = dataset.attributes()[a].size();
  Dataset out(dataset.dim() + width, dataset.label_names(), dataset.attributes());
  for (const auto& inst : dataset.instances()) {
    Instance copy = inst;
    copy.features.resize(dataset.dim() + width, 0.0);
    if (inst.identity[a] != kMissing) copy.features[dataset.dim() + inst.identity[a]] = 1.0;
    out.add(std::move(copy));
  }
  return out;
}

}  // namespace debias
