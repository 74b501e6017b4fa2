#include "debias/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "debias/errors.hpp"
#include "debias/ini.hpp"

namespace debias {

namespace fs = std::filesystem;

namespace {

fs::path resolve_path(const fs::path& base, const std::string& value) {
  fs::path p(value);
  return p.is_relative() && !base.empty() ? base / p : p;
}

std::array<double, 2> parse_pair(const std::string& text, std::size_t line) {
  const auto parts = split_list(text);
  if (parts.size() != 2) throw ParseError(fmt::format("expected two comma-separated numbers, got '{}'", text), line);
  return {parse_double(parts[0], line), parse_double(parts[1], line)};
}

bool parse_bool(const std::string& text, std::size_t line) {
  if (text == "true" || text == "on" || text == "yes" || text == "1") return true;
  if (text == "false" || text == "off" || text == "no" || text == "0") return false;
  throw ParseError(fmt::format("expected a boolean, got '{}'", text), line);
}

std::size_t parse_count(const std::string& text, std::size_t line) {
  const long long v = parse_int(text, line);
  if (v < 0) throw ParseError(fmt::format("expected a nonnegative count, got '{}'", text), line);
  return static_cast<std::size_t>(v);
}

std::string file_stem_for(std::string_view method) {
  std::string out(method);
  for (char& c : out) {
    if (c == ':' || c == '+' || c == '[' || c == ']' || c == '=' || c == '/' || c == ',') c = '_';
  }
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  train.validate();
  if (methods.empty()) throw ArgumentError("the experiment lists no methods");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw ArgumentError(fmt::format("split fraction must lie in (0, 1), got {}", split_fraction));
  }
  auto require_file = [](const fs::path& p, std::string_view what) {
    if (!fs::exists(p)) throw ArgumentError(fmt::format("{} '{}' does not exist", what, p.string()));
  };
  if (source.kind == DataSource::Kind::kCsv) require_file(source.csv, "dataset");
  if (source.kind == DataSource::Kind::kPlanted) require_file(source.cells, "cells file");
  if (subsample_plan) require_file(*subsample_plan, "subsample plan");
  for (const auto& f : spec_files) require_file(f, "bias spec file");
  for (std::size_t p : p_grid) {
    if (p < 1) throw ArgumentError("p grid values must be at least 1");
  }
}

ExperimentConfig parse_experiment_config(std::string_view text, const fs::path& base_dir) {
  const auto doc = parse_ini(text);
  ExperimentConfig cfg;

  if (const auto* s = doc.find("data")) {
    const std::string kind = s->get("source").value_or("gmm2d");
    if (kind == "csv") {
      cfg.source.kind = DataSource::Kind::kCsv;
      cfg.source.csv = resolve_path(base_dir, s->require("path"));
    } else if (kind == "planted") {
      cfg.source.kind = DataSource::Kind::kPlanted;
      cfg.source.cells = resolve_path(base_dir, s->require("cells"));
    } else if (kind == "gmm2d") {
      cfg.source.kind = DataSource::Kind::kGmm2d;
      auto& g = cfg.source.gmm;
      if (auto v = s->get("n")) g.n_samples = parse_count(*v, s->line);
      if (auto v = s->get("stddev")) g.stddev = parse_double(*v, s->line);
      if (auto v = s->get("mu_red")) g.mu_red = parse_pair(*v, s->line);
      if (auto v = s->get("mu_green")) g.mu_green = parse_pair(*v, s->line);
      if (auto v = s->get("priors")) g.priors = parse_pair(*v, s->line);
      if (auto v = s->get("threshold")) g.halfplane_threshold = parse_double(*v, s->line);
    } else {
      throw ParseError(fmt::format("unknown data source '{}' (csv, gmm2d, planted)", kind), s->line);
    }
  }
  if (const auto* s = doc.find("subsample")) {
    if (auto v = s->get("plan")) cfg.subsample_plan = resolve_path(base_dir, *v);
  }
  if (const auto* s = doc.find("split")) {
    if (auto v = s->get("fraction")) cfg.split_fraction = parse_double(*v, s->line);
  }
  if (const auto* s = doc.find("train")) {
    auto& t = cfg.train;
    if (auto v = s->get("p")) t.p = parse_count(*v, s->line);
    if (auto v = s->get("lr")) t.learning_rate = parse_double(*v, s->line);
    if (auto v = s->get("epochs")) t.epochs = parse_count(*v, s->line);
    if (auto v = s->get("batch")) t.batch_size = parse_count(*v, s->line);
    if (auto v = s->get("lambda")) t.lambda = parse_double(*v, s->line);
    if (auto v = s->get("l2")) t.l2 = parse_double(*v, s->line);
    if (auto v = s->get("bias_mode")) t.bias_mode = parse_bias_mode(*v);
    if (auto v = s->get("offsets")) t.affine_offsets = parse_bool(*v, s->line);
    if (auto v = s->get("activation")) {
      if (*v == "tanh") {
        t.shared_activation = SharedActivation::kTanh;
      } else if (*v == "identity" || *v == "none") {
        t.shared_activation = SharedActivation::kIdentity;
      } else {
        throw ParseError(fmt::format("unknown activation '{}' (identity, tanh)", *v), s->line);
      }
    }
    if (auto v = s->get("baseline_l2")) cfg.baseline_l2 = parse_double(*v, s->line);
  }
  if (const auto* s = doc.find("bias")) {
    if (auto v = s->get("specs")) {
      for (const auto& f : split_list(*v)) cfg.spec_files.push_back(resolve_path(base_dir, f));
    }
    if (auto v = s->get("tau")) cfg.tau_override = parse_double(*v, s->line);
  }
  if (!doc.all("spec").empty()) {
    std::string spec_text;
    for (const auto* s : doc.all("spec")) {
      spec_text += "[spec]\n";
      for (const auto& [k, v] : s->entries) spec_text += k + " = " + v + "\n";
    }
    cfg.inline_specs = parse_bias_specs(spec_text);
  }
  if (const auto* s = doc.find("compare")) {
    if (auto v = s->get("methods")) cfg.methods = split_list(*v);
    if (auto v = s->get("queries")) {
      for (const auto& q : split_list(*v)) cfg.queries.push_back(parse_query(q));
    }
    if (auto v = s->get("alpha_conditional")) {
      AlphaConditional c;
      if (*v == "identity-given-prediction") {
        c = AlphaConditional::kIdentityGivenPrediction;
      } else if (*v == "prediction-given-identity") {
        c = AlphaConditional::kPredictionGivenIdentity;
      } else {
        throw ParseError(fmt::format("unknown alpha conditional '{}'", *v), s->line);
      }
      for (auto& q : cfg.queries) q.conditional = c;
    }
    if (auto v = s->get("p_grid")) cfg.p_grid = parse_p_grid(*v);
    if (auto v = s->get("seed")) cfg.seed = static_cast<std::uint64_t>(parse_count(*v, s->line));
  }
  if (const auto* s = doc.find("output")) {
    if (auto v = s->get("dir")) cfg.output_dir = resolve_path(base_dir, *v);
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  return parse_experiment_config(read_text_file(path), path.parent_path());
}

std::vector<std::size_t> parse_p_grid(std::string_view text) {
  const auto parts = split_list(text, ':');
  if (parts.size() != 3) throw ArgumentError(fmt::format("p grid '{}' is not of the form lo:hi:step", text));
  const long long lo = parse_int(parts[0], 1), hi = parse_int(parts[1], 1), step = parse_int(parts[2], 1);
  if (lo < 1 || hi < lo || step < 1) {
    throw ArgumentError(fmt::format("p grid '{}' needs 1 <= lo <= hi and step >= 1", text));
  }
  std::vector<std::size_t> out;
  for (long long p = lo; p <= hi; p += step) out.push_back(static_cast<std::size_t>(p));
  return out;
}

Method parse_method(std::string_view text, const std::vector<BiasTaskSpec>& specs) {
  Method m;
  m.name = std::string(text);
  if (text == "agnostic") {
    m.kind = Method::Kind::kAgnostic;
  } else if (text == "agnostic-l2") {
    m.kind = Method::Kind::kAgnosticL2;
  } else if (text.starts_with("identity-feature:")) {
    m.kind = Method::Kind::kIdentityFeature;
    m.attribute = trim(text.substr(text.find(':') + 1));
    if (m.attribute.empty()) throw ArgumentError("identity-feature needs an attribute name");
  } else if (text == "bias-aware-joint" || text == "bias-aware") {
    m.kind = Method::Kind::kBiasAware;
    for (std::size_t i = 0; i < specs.size(); ++i) m.specs.push_back(i);
  } else if (text.starts_with("bias-aware:")) {
    m.kind = Method::Kind::kBiasAware;
    for (const auto& sel : split_list(text.substr(text.find(':') + 1), '+')) {
      const bool numeric = !sel.empty() && std::all_of(sel.begin(), sel.end(), [](char c) { return c >= '0' && c <= '9'; });
      if (numeric) {
        const auto idx = static_cast<std::size_t>(parse_int(sel, 1));
        if (idx < 1 || idx > specs.size()) {
          throw ArgumentError(fmt::format("method '{}' selects spec {} of {}", text, idx, specs.size()));
        }
        m.specs.push_back(idx - 1);
        continue;
      }
      bool found = false;
      for (std::size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].attribute == sel) {
          m.specs.push_back(i);
          found = true;
        }
      }
      if (!found) throw ArgumentError(fmt::format("method '{}': no bias spec on attribute '{}'", text, sel));
    }
    std::sort(m.specs.begin(), m.specs.end());
    m.specs.erase(std::unique(m.specs.begin(), m.specs.end()), m.specs.end());
  } else {
    throw ArgumentError(fmt::format(
        "unknown method '{}' (agnostic, agnostic-l2, identity-feature:<attr>, bias-aware:<specs>, bias-aware-joint)",
        text));
  }
  if (m.kind == Method::Kind::kBiasAware && m.specs.empty()) {
    throw ArgumentError(fmt::format("method '{}' has no bias spec to train with", text));
  }
  return m;
}

TrainResult run_method(const Method& method, const Dataset& train_set, const std::vector<BiasTaskSpec>& specs,
                       const TrainConfig& config, double baseline_l2) {
  switch (method.kind) {
    case Method::Kind::kAgnostic:
      return train_baseline(make_baseline(BaselineKind::kAgnostic, train_set, config, {}, baseline_l2));
    case Method::Kind::kAgnosticL2:
      return train_baseline(make_baseline(BaselineKind::kAgnosticL2, train_set, config, {}, baseline_l2));
    case Method::Kind::kIdentityFeature:
      return train_baseline(
          make_baseline(BaselineKind::kIdentityFeature, train_set, config, method.attribute, baseline_l2));
    case Method::Kind::kBiasAware: {
      std::vector<BiasTaskSpec> chosen;
      for (std::size_t i : method.specs) chosen.push_back(specs.at(i));
      return train(train_set, chosen, config);
    }
  }
  throw ArgumentError("unknown method kind");
}

std::vector<BiasTaskSpec> collect_specs(const ExperimentConfig& config) {
  std::vector<BiasTaskSpec> specs;
  for (const auto& f : config.spec_files) {
    auto loaded = load_bias_specs(f);
    specs.insert(specs.end(), loaded.begin(), loaded.end());
  }
  specs.insert(specs.end(), config.inline_specs.begin(), config.inline_specs.end());
  if (config.tau_override) {
    for (auto& s : specs) s.tau = *config.tau_override;
  }
  return specs;
}

std::uint64_t generation_seed(std::uint64_t master) { return master; }
std::uint64_t subsample_seed(std::uint64_t master) { return derive_seed(master, 2); }
std::uint64_t split_seed(std::uint64_t master) { return derive_seed(master, 3); }

Dataset load_source(const DataSource& source, std::uint64_t seed) {
  switch (source.kind) {
    case DataSource::Kind::kCsv: return load_dataset(source.csv);
    case DataSource::Kind::kGmm2d: return gen_gmm2d(seed, source.gmm);
    case DataSource::Kind::kPlanted: return gen_planted_bias(seed, parse_planted_spec(read_text_file(source.cells)));
  }
  throw ArgumentError("unknown data source");
}

std::pair<Dataset, Dataset> prepare_data(const ExperimentConfig& config) {
  Dataset data = load_source(config.source, generation_seed(config.seed));
  if (config.subsample_plan) {
    data = subsample(data, load_subsample_plan(*config.subsample_plan), subsample_seed(config.seed));
  }
  return split(data, config.split_fraction, split_seed(config.seed));
}

std::vector<ComparisonRow> run_comparison(const ExperimentConfig& config, const Dataset& train_set,
                                          const Dataset& test_set, const std::vector<BiasTaskSpec>& specs) {
  struct Job {
    std::string method;
    std::size_t p;
  };
  std::vector<Job> jobs;
  const std::vector<std::size_t> grid = config.p_grid.empty() ? std::vector<std::size_t>{config.train.p} : config.p_grid;
  for (std::size_t p : grid) {
    for (const auto& m : config.methods) jobs.push_back({m, p});
  }

  std::vector<ComparisonRow> rows(jobs.size());
  auto run_one = [&](std::size_t j) {
    ComparisonRow& row = rows[j];
    row.method = config.p_grid.empty() ? jobs[j].method : fmt::format("{}[p={}]", jobs[j].method, jobs[j].p);
    row.p = jobs[j].p;
    try {
      const Method method = parse_method(jobs[j].method, specs);
      TrainConfig tc = config.train;
      tc.p = jobs[j].p;
      tc.seed = config.seed;
      auto result = run_method(method, train_set, specs, tc, config.baseline_l2);
      auto report = evaluate(result.model, test_set, config.queries);
      report.model_id = row.method;
      report.seed = config.seed;
      row.report = std::move(report);
      row.model = std::move(result.model);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, jobs.size());
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) run_one(j);
      });
    }
  }
  return rows;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows, const std::vector<AssociationQuery>& queries) {
  std::string out = "method,accuracy";
  for (const auto& q : queries) {
    const auto n = q.name();
    out += fmt::format(",{0}_alpha,{0}_fairness,{0}_gamma", n);
  }
  out += ",status\n";
  auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("NA"); };
  for (const auto& row : rows) {
    out += row.method;
    if (row.report) {
      out += "," + format_double(row.report->accuracy);
      for (const auto& a : row.report->associations) {
        out += "," + cell(a.alpha) + "," + cell(a.fairness) + "," + cell(a.gamma);
      }
      std::vector<std::string> flags;
      for (const auto& a : row.report->associations) {
        for (const auto& f : a.flags) flags.push_back(a.query.name() + ":" + f);
      }
      out += "," + (flags.empty() ? std::string("ok") : fmt::format("{}", fmt::join(flags, " "))) + "\n";
    } else {
      out += ",NA";
      for (std::size_t i = 0; i < queries.size(); ++i) out += ",NA,NA,NA";
      std::string msg = row.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out += ",error: " + msg + "\n";
    }
  }
  return out;
}

std::vector<ComparisonRow> run_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto specs = collect_specs(config);
  for (const auto& m : config.methods) parse_method(m, specs);
  const auto [train_set, test_set] = prepare_data(config);

  const fs::path& dir = config.output_dir;
  save_dataset(dir / "train.csv", train_set);
  save_dataset(dir / "test.csv", test_set);
  auto rows = run_comparison(config, train_set, test_set, specs);
  for (auto& row : rows) {
    if (!row.report) continue;
    row.report->dataset_id = (dir / "test.csv").string();
    const auto stem = file_stem_for(row.method);
    save_model(dir / "models" / (stem + ".json"), *row.model);
    write_file_atomic(dir / "reports" / (stem + ".json"), report_to_json(*row.report));
  }
  write_file_atomic(dir / "comparison.csv", comparison_csv(rows, config.queries));
  return rows;
}

std::string boundary_csv(const MultiObjectiveModel& model, const BoundaryGrid& grid) {
  if (model.input_dim != 2 || !model.identity_features.empty()) {
    throw ArgumentError(fmt::format("boundary grids need a model on 2 raw inputs, this one takes {}", model.input_dim));
  }
  if (grid.resolution < 2) throw ArgumentError("grid resolution must be at least 2");
  if (!(grid.x1_lo < grid.x1_hi) || !(grid.x2_lo < grid.x2_hi)) throw ArgumentError("grid bounds must satisfy lo < hi");

  std::string out = fmt::format("x1,x2,label,p_{}\n", model.label_names.at(1));
  const double n = static_cast<double>(grid.resolution - 1);
  for (std::size_t i = 0; i < grid.resolution; ++i) {
    const double x1 = grid.x1_lo + (grid.x1_hi - grid.x1_lo) * static_cast<double>(i) / n;
    for (std::size_t j = 0; j < grid.resolution; ++j) {
      const double x2 = grid.x2_lo + (grid.x2_hi - grid.x2_lo) * static_cast<double>(j) / n;
      const double x[2] = {x1, x2};
      const auto pred = forward(model, x).primary;
      out += fmt::format("{},{},{},{}\n", format_double(x1), format_double(x2), pred.label,
                         format_double(pred.probabilities[1]));
    }
  }
  return out;
}

std::string loss_trace_csv(const std::vector<double>& trace) {
  std::string out = "epoch,loss\n";
  for (std::size_t e = 0; e < trace.size(); ++e) out += fmt::format("{},{}\n", e + 1, format_double(trace[e]));
  return out;
}

std::string audit_csv(const Dataset& dataset, double tau, std::string_view attribute) {
  if (!attribute.empty()) dataset.attribute_index(attribute);
  std::string out = "attribute,label,category,rho,support,active\n";
  for (const auto& attr : dataset.attributes()) {
    if (!attribute.empty() && attr.name != attribute) continue;
    for (const auto& a : audit_associations(dataset, attr.name, tau)) {
      out += fmt::format("{},{},{},{},{},{}\n", attr.name, dataset.label_names()[a.label],
                         attr.categories[a.categories.front()], format_double(a.rho), a.support,
                         a.active ? "yes" : "no");
    }
  }
  return out;
}

}  // namespace debias
