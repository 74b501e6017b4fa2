#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "debias/bias.hpp"
#include "debias/data.hpp"
#include "debias/errors.hpp"
#include "debias/experiment.hpp"
#include "debias/ini.hpp"
#include "debias/metrics.hpp"
#include "debias/model.hpp"

namespace fs = std::filesystem;
using namespace debias;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitIo = 4;

struct GlobalFlags {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> config;
  std::optional<std::string> out;
  std::optional<double> tau;
  std::optional<double> lambda;
  std::optional<std::size_t> p;
  std::optional<double> lr;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch;
  std::optional<double> l2;
  std::optional<double> baseline_l2;
  std::optional<std::string> bias_mode;
  std::optional<std::string> p_grid;
};

// Config file values first, then command-line flags on top.
ExperimentConfig base_config(const GlobalFlags& g) {
  ExperimentConfig cfg = g.config ? load_experiment_config(*g.config) : ExperimentConfig{};
  if (g.seed) cfg.seed = *g.seed;
  if (g.tau) cfg.tau_override = *g.tau;
  if (g.lambda) cfg.train.lambda = *g.lambda;
  if (g.p) cfg.train.p = *g.p;
  if (g.lr) cfg.train.learning_rate = *g.lr;
  if (g.epochs) cfg.train.epochs = *g.epochs;
  if (g.batch) cfg.train.batch_size = *g.batch;
  if (g.l2) cfg.train.l2 = *g.l2;
  if (g.baseline_l2) cfg.baseline_l2 = *g.baseline_l2;
  if (g.bias_mode) cfg.train.bias_mode = parse_bias_mode(*g.bias_mode);
  if (g.p_grid) cfg.p_grid = parse_p_grid(*g.p_grid);
  cfg.train.seed = cfg.seed;
  return cfg;
}

fs::path require_out(const GlobalFlags& g, std::string_view command) {
  if (!g.out) throw ArgumentError(fmt::format("{} needs --out", command));
  return *g.out;
}

std::pair<double, double> parse_range(const std::string& text) {
  const auto parts = split_list(text, ':');
  if (parts.size() != 2) throw ArgumentError(fmt::format("range '{}' is not of the form lo:hi", text));
  return {parse_double(parts[0], 1), parse_double(parts[1], 1)};
}

void print_summary(const Dataset& ds) {
  fmt::print("M={} d={} labels={}\n", ds.size(), ds.dim(), ds.num_labels());
  for (const auto& [cell, count] : ds.cell_counts()) {
    fmt::print("  {} {}={} {}\n", cell[0], cell[1], cell[2], count);
  }
}

// ---- gen ----------------------------------------------------------------------

struct GenArgs {
  std::string kind;
  std::size_t n = 2000;
  double stddev = 1.0;
  std::string cells;
  std::string data;
  std::string plan;
  double fraction = 0.8;
};

int cmd_gen(const GlobalFlags& g, const GenArgs& a) {
  const auto out = require_out(g, "gen");
  const std::uint64_t seed = g.seed.value_or(0);
  Dataset ds;
  if (a.kind == "gmm2d") {
    Gmm2dParams params;
    if (g.config) params = load_experiment_config(*g.config).source.gmm;
    params.n_samples = a.n;
    params.stddev = a.stddev;
    ds = gen_gmm2d(seed, params);
  } else if (a.kind == "planted") {
    if (a.cells.empty()) throw ArgumentError("gen planted needs --cells");
    ds = gen_planted_bias(seed, parse_planted_spec(read_text_file(a.cells)));
  } else if (a.kind == "subsample") {
    if (a.data.empty() || a.plan.empty()) throw ArgumentError("gen subsample needs --data and --plan");
    ds = subsample(load_dataset(a.data), load_subsample_plan(a.plan), seed);
  } else if (a.kind == "split") {
    if (a.data.empty()) throw ArgumentError("gen split needs --data");
    auto [train_set, test_set] = split(load_dataset(a.data), a.fraction, seed);
    save_dataset(out / "train.csv", train_set);
    save_dataset(out / "test.csv", test_set);
    fmt::print("train: ");
    print_summary(train_set);
    fmt::print("test: ");
    print_summary(test_set);
    return 0;
  } else {
    throw ArgumentError(fmt::format("unknown generator '{}' (gmm2d, planted, subsample, split)", a.kind));
  }
  save_dataset(out, ds);
  print_summary(ds);
  return 0;
}

// ---- audit --------------------------------------------------------------------

int cmd_audit(const GlobalFlags& g, const std::string& data, const std::string& attribute) {
  const Dataset ds = load_dataset(data);
  const std::string table = audit_csv(ds, g.tau.value_or(0.5), attribute);
  if (g.out) write_file_atomic(*g.out, table);
  fmt::print("{}", table);
  return 0;
}

// ---- train --------------------------------------------------------------------

int cmd_train(const GlobalFlags& g, const std::string& data, const std::string& method_text,
              const std::vector<std::string>& spec_files) {
  auto cfg = base_config(g);
  for (const auto& f : spec_files) cfg.spec_files.emplace_back(f);
  const auto specs = collect_specs(cfg);
  const Method method = parse_method(method_text, specs);
  const fs::path out = g.out ? fs::path(*g.out) : fs::path(".");

  const Dataset ds = load_dataset(data);
  const auto result = run_method(method, ds, specs, cfg.train, cfg.baseline_l2);
  save_model(out / "model.json", result.model);
  write_file_atomic(out / "loss.csv", loss_trace_csv(result.loss_trace));

  fmt::print("method {} p={} epochs={} bias heads={}\n", method.name, cfg.train.p, cfg.train.epochs,
             result.model.num_heads());
  for (std::size_t i = 0; i < result.labelings.size(); ++i) {
    const auto& spec = method.kind == Method::Kind::kBiasAware ? specs[method.specs[i]] : specs[i];
    fmt::print("  {}: rho={:.4f} {}\n", spec.describe(), result.labelings[i].rho,
               result.labelings[i].active ? "active" : "inactive");
  }
  if (!result.loss_trace.empty()) fmt::print("final loss {}\n", format_double(result.loss_trace.back()));
  return 0;
}

// ---- eval ---------------------------------------------------------------------

int cmd_eval(const GlobalFlags& g, const std::string& model_path, const std::string& data,
             const std::vector<std::string>& query_texts, const std::string& conditional) {
  std::vector<AssociationQuery> queries;
  for (const auto& q : query_texts) {
    auto parsed = parse_query(q);
    if (conditional == "prediction-given-identity") {
      parsed.conditional = AlphaConditional::kPredictionGivenIdentity;
    } else if (conditional != "identity-given-prediction") {
      throw ArgumentError(fmt::format("unknown alpha conditional '{}'", conditional));
    }
    queries.push_back(std::move(parsed));
  }
  const auto model = load_model(model_path);
  const Dataset test = load_dataset(data);
  auto report = evaluate(model, test, queries);
  report.model_id = model_path;
  report.dataset_id = data;
  report.seed = g.seed.value_or(0);
  if (g.out) write_file_atomic(*g.out, report_to_json(report));
  fmt::print("{}", report_to_table(report));
  return 0;
}

// ---- compare ------------------------------------------------------------------

int cmd_compare(const GlobalFlags& g, const std::vector<std::string>& methods, const std::vector<std::string>& queries) {
  if (!g.config && methods.empty()) throw ArgumentError("compare needs --config or at least one --method");
  auto cfg = base_config(g);
  if (!methods.empty()) cfg.methods = methods;
  if (!queries.empty()) {
    cfg.queries.clear();
    for (const auto& q : queries) cfg.queries.push_back(parse_query(q));
  }
  if (g.out) cfg.output_dir = *g.out;
  const auto rows = run_experiment(cfg);
  fmt::print("{}", comparison_csv(rows, cfg.queries));
  std::size_t failed = 0;
  for (const auto& r : rows) failed += !r.report;
  if (failed > 0) fmt::print(stderr, "{} of {} methods failed\n", failed, rows.size());
  return 0;
}

// ---- boundary -----------------------------------------------------------------

int cmd_boundary(const GlobalFlags& g, const std::string& model_path, const std::string& x1, const std::string& x2,
                 std::size_t resolution) {
  const auto out = require_out(g, "boundary");
  BoundaryGrid grid;
  std::tie(grid.x1_lo, grid.x1_hi) = parse_range(x1);
  std::tie(grid.x2_lo, grid.x2_hi) = parse_range(x2);
  grid.resolution = resolution;
  write_file_atomic(out, boundary_csv(load_model(model_path), grid));
  fmt::print("{} grid points written to {}\n", resolution * resolution, out.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bias-aware multi-objective classifier toolkit"};
  app.require_subcommand(1);

  GlobalFlags g;
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--config", g.config, "Experiment config file");
  app.add_option("--out", g.out, "Output file or directory");
  app.add_option("--tau", g.tau, "Association threshold for bias tasks");
  app.add_option("--lambda", g.lambda, "Weight of the bias terms");
  app.add_option("--p", g.p, "Shared representation size");
  app.add_option("--lr", g.lr, "Learning rate");
  app.add_option("--epochs", g.epochs, "Training epochs");
  app.add_option("--batch", g.batch, "Mini-batch size");
  app.add_option("--l2", g.l2, "Weight decay");
  app.add_option("--baseline-l2", g.baseline_l2, "Weight decay of the agnostic-l2 baseline");
  app.add_option("--bias-mode", g.bias_mode, "inverted or subtractive")->check(CLI::IsMember({"inverted", "subtractive"}));
  app.add_option("--p-grid", g.p_grid, "Sweep p as lo:hi:step");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate, subsample or split a dataset")->fallthrough();
  gen_cmd->add_option("kind", gen.kind, "gmm2d, planted, subsample or split")->required();
  gen_cmd->add_option("--n", gen.n, "Number of samples (gmm2d)");
  gen_cmd->add_option("--stddev", gen.stddev, "Component standard deviation (gmm2d)");
  gen_cmd->add_option("--cells", gen.cells, "Cell description file (planted)");
  gen_cmd->add_option("--data", gen.data, "Input dataset (subsample, split)");
  gen_cmd->add_option("--plan", gen.plan, "Subsample plan (subsample)");
  gen_cmd->add_option("--fraction", gen.fraction, "Train fraction (split)");

  std::string data, attribute, method = "agnostic", model_path, conditional = "identity-given-prediction";
  std::vector<std::string> spec_files, queries, methods;
  std::string x1 = "-1:5", x2 = "-2:7";
  std::size_t resolution = 200;

  auto* audit_cmd = app.add_subcommand("audit", "Report label/identity association ratios")->fallthrough();
  audit_cmd->add_option("--data", data, "Dataset CSV")->required();
  audit_cmd->add_option("--attribute", attribute, "Restrict to one attribute");

  auto* train_cmd = app.add_subcommand("train", "Train one method")->fallthrough();
  train_cmd->add_option("--data", data, "Training CSV")->required();
  train_cmd->add_option("--method", method, "agnostic, agnostic-l2, identity-feature:<attr>, bias-aware[:<specs>]");
  train_cmd->add_option("--spec", spec_files, "Bias spec file (repeatable)");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model on a test set")->fallthrough();
  eval_cmd->add_option("--model", model_path, "Model file")->required();
  eval_cmd->add_option("--data", data, "Test CSV")->required();
  eval_cmd->add_option("--query", queries, "label@attribute=cat[+cat] (repeatable)");
  eval_cmd->add_option("--alpha-conditional", conditional, "identity-given-prediction or prediction-given-identity");

  auto* compare_cmd = app.add_subcommand("compare", "Run every method on one split")->fallthrough();
  compare_cmd->add_option("--method", methods, "Override the config's method list (repeatable)");
  compare_cmd->add_option("--query", queries, "Override the config's queries (repeatable)");

  auto* boundary_cmd = app.add_subcommand("boundary", "Export a decision-boundary grid")->fallthrough();
  boundary_cmd->add_option("--model", model_path, "Model file")->required();
  boundary_cmd->add_option("--x1", x1, "x1 range lo:hi");
  boundary_cmd->add_option("--x2", x2, "x2 range lo:hi");
  boundary_cmd->add_option("--resolution", resolution, "Points per axis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*gen_cmd) return cmd_gen(g, gen);
    if (*audit_cmd) return cmd_audit(g, data, attribute);
    if (*train_cmd) return cmd_train(g, data, method, spec_files);
    if (*eval_cmd) return cmd_eval(g, model_path, data, queries, conditional);
    if (*compare_cmd) return cmd_compare(g, methods, queries);
    if (*boundary_cmd) return cmd_boundary(g, model_path, x1, x2, resolution);
  } catch (const IoError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitIo;
  } catch (const DivergenceError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitRuntime;
  } catch (const ArgumentError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitValidation;
  } catch (const ParseError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitValidation;
  } catch (const ShapeError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitValidation;
  } catch (const CapacityError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitValidation;
  } catch (const EmptySupportError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
