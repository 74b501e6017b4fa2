#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "debias/bias.hpp"
#include "debias/data.hpp"
#include "debias/metrics.hpp"
#include "debias/model.hpp"

namespace debias {

struct DataSource {
  enum class Kind { kCsv, kGmm2d, kPlanted };
  Kind kind = Kind::kGmm2d;
  std::filesystem::path csv;
  std::filesystem::path cells;
  Gmm2dParams gmm;
};

/// Everything a comparison run needs. Relative paths are resolved against the
/// directory of the config file.
struct ExperimentConfig {
  DataSource source;
  std::optional<std::filesystem::path> subsample_plan;
  double split_fraction = 0.8;
  std::vector<std::filesystem::path> spec_files;
  std::vector<BiasTaskSpec> inline_specs;
  std::optional<double> tau_override;
  TrainConfig train;
  double baseline_l2 = kDefaultBaselineL2;
  std::vector<std::string> methods;
  std::vector<AssociationQuery> queries;
  std::vector<std::size_t> p_grid;  // empty: train once at train.p
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;

  // Throws ArgumentError for an empty method list, unknown methods or
  // missing input files.
  void validate() const;
};

// Sections: [data] [subsample] [split] [train] [bias] [compare] [output], plus
// any number of inline [spec] sections.
ExperimentConfig parse_experiment_config(std::string_view text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// "lo:hi:step", inclusive of hi when reached.
std::vector<std::size_t> parse_p_grid(std::string_view text);

/// A training recipe from the comparison grid.
struct Method {
  enum class Kind { kAgnostic, kAgnosticL2, kIdentityFeature, kBiasAware };
  Kind kind = Kind::kAgnostic;
  std::string name;
  std::string attribute;             // identity-feature
  std::vector<std::size_t> specs;    // bias-aware: indices into the spec list
};

/// agnostic | agnostic-l2 | identity-feature:<attr> | bias-aware-joint |
/// bias-aware:<sel>[+<sel>...] where <sel> is a 1-based spec index or an
/// attribute name (selecting every spec on that attribute).
Method parse_method(std::string_view text, const std::vector<BiasTaskSpec>& specs);

TrainResult run_method(const Method& method, const Dataset& train_set, const std::vector<BiasTaskSpec>& specs,
                       const TrainConfig& config, double baseline_l2 = kDefaultBaselineL2);

/// Every spec of the config (files, then inline sections) with the tau
/// override applied.
std::vector<BiasTaskSpec> collect_specs(const ExperimentConfig& config);

/// Child seeds of the master seed.
std::uint64_t generation_seed(std::uint64_t master);
std::uint64_t subsample_seed(std::uint64_t master);
std::uint64_t split_seed(std::uint64_t master);

Dataset load_source(const DataSource& source, std::uint64_t seed);
/// Source, optional subsample, stratified split.
std::pair<Dataset, Dataset> prepare_data(const ExperimentConfig& config);

struct ComparisonRow {
  std::string method;
  std::size_t p = 0;
  std::optional<MetricsReport> report;
  std::optional<MultiObjectiveModel> model;
  std::string error;  // empty when the method succeeded
};

/// Trains every method (times every grid value of p) on the same split with the
/// same training seed. Methods run concurrently; a failing method leaves its
/// error in its row and the rest still complete. Row order follows the grid.
std::vector<ComparisonRow> run_comparison(const ExperimentConfig& config, const Dataset& train_set,
                                          const Dataset& test_set, const std::vector<BiasTaskSpec>& specs);

// method,accuracy,<query>_alpha,<query>_fairness,<query>_gamma,...,status
// Rows from a p grid are named "<method>[p=<p>]". Missing values are "NA".
std::string comparison_csv(const std::vector<ComparisonRow>& rows, const std::vector<AssociationQuery>& queries);

/// Writes train/test CSVs, per-method models and reports, and comparison.csv
/// into config.output_dir. Returns the rows.
std::vector<ComparisonRow> run_experiment(const ExperimentConfig& config);

struct BoundaryGrid {
  double x1_lo = -1.0, x1_hi = 5.0;
  double x2_lo = -2.0, x2_hi = 7.0;
  std::size_t resolution = 200;
};

/// x1,x2,label,p_<label 1 name>: one row per grid point, x2 varying fastest.
/// Throws ArgumentError unless the model takes exactly 2 raw inputs.
std::string boundary_csv(const MultiObjectiveModel& model, const BoundaryGrid& grid);

// epoch,loss
std::string loss_trace_csv(const std::vector<double>& trace);

// attribute,label,category,rho,support,active
std::string audit_csv(const Dataset& dataset, double tau, std::string_view attribute = {});

}  // namespace debias
