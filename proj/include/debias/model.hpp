#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "debias/bias.hpp"
#include "debias/data.hpp"
#include "debias/nn_core.hpp"

namespace debias {

/// How a bias head's square-loss term enters the joint objective.
enum class BiasMode {
  // Heads fit the inverted response 1 - y^B; the term is (q - (1 - y^B))^2.
  kInvertedLabel,
  // Literal negated likelihood: the term is -(q - y^B)^2.
  kSubtractive,
};

enum class SharedActivation { kIdentity, kTanh };

std::string_view to_string(BiasMode mode);
BiasMode parse_bias_mode(std::string_view text);

struct TrainConfig {
  std::size_t p = 200;
  double learning_rate = 0.05;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double lambda = 1.0;
  double l2 = 0.0;
  BiasMode bias_mode = BiasMode::kInvertedLabel;
  std::uint64_t seed = 0;
  bool affine_offsets = true;
  SharedActivation shared_activation = SharedActivation::kIdentity;

  void validate() const;  // throws ArgumentError
};

/// Every trainable tensor. Gradients use the same shape.
struct ModelParameters {
  Matrix theta_s;        // d x p
  Vector shared_offset;  // p
  Matrix theta_p;        // p x K
  Vector primary_offset; // K
  std::vector<Matrix> head_weights;  // p x 1 each
  Vector head_offsets;               // one per head

  // Visits every parameter block as a mutable span, in a fixed order.
  void for_each(const std::function<void(std::span<double>)>& fn);
  void for_each(const std::function<void(std::span<const double>)>& fn) const;
  double squared_norm() const;
  bool all_finite() const;
  ModelParameters zeros_like() const;
  friend bool operator==(const ModelParameters&, const ModelParameters&) = default;
};

struct BiasHeadInfo {
  BiasTaskSpec spec;
  double rho = 0.0;
  friend bool operator==(const BiasHeadInfo&, const BiasHeadInfo&) = default;
};

/// Shared linear layer feeding a softmax primary head and one sigmoid head per
/// active bias task.
struct MultiObjectiveModel {
  std::size_t input_dim = 0;
  std::size_t shared_dim = 0;
  std::vector<std::string> label_names;
  // Attributes appended as one-hot inputs before the first layer (baselines).
  std::vector<std::string> identity_features;
  std::vector<BiasHeadInfo> heads;
  bool affine_offsets = true;
  SharedActivation shared_activation = SharedActivation::kIdentity;
  ModelParameters params;

  std::size_t num_labels() const noexcept { return label_names.size(); }
  std::size_t num_heads() const noexcept { return heads.size(); }
  friend bool operator==(const MultiObjectiveModel&, const MultiObjectiveModel&) = default;
};

struct PrimaryPrediction {
  Vector probabilities;
  int label = 0;  // argmax, lowest index on ties
};

struct ForwardResult {
  PrimaryPrediction primary;
  Vector bias;    // one probability per head
  Vector shared;  // representation after the shared layer
};

MultiObjectiveModel init_model(std::size_t input_dim, std::vector<std::string> label_names,
                               std::vector<BiasHeadInfo> heads, const TrainConfig& config, Rng& rng);

ForwardResult forward(const MultiObjectiveModel& model, std::span<const double> x);

/// Bias labels of one task, aligned with the instances of the dataset a batch
/// indexes into.
using HeadLabels = std::vector<BiasLabel>;

struct LossTerms {
  double primary = 0.0;  // sum of squared errors against one-hot targets
  double bias = 0.0;     // sum over heads and X_s instances of the per-mode term
  double l2 = 0.0;       // l2 * ||params||^2
  double total(double lambda) const { return primary + lambda * bias + l2; }
};

LossTerms loss_terms(const MultiObjectiveModel& model, const Dataset& data, std::span<const std::size_t> batch,
                     std::span<const HeadLabels> labels, const TrainConfig& config);
double loss(const MultiObjectiveModel& model, const Dataset& data, std::span<const std::size_t> batch,
            std::span<const HeadLabels> labels, const TrainConfig& config);
/// Analytic gradient of loss() with respect to every parameter block.
ModelParameters gradients(const MultiObjectiveModel& model, const Dataset& data, std::span<const std::size_t> batch,
                          std::span<const HeadLabels> labels, const TrainConfig& config);

struct TrainResult {
  MultiObjectiveModel model;
  std::vector<double> loss_trace;  // summed batch objectives per epoch
  std::vector<BiasLabeling> labelings;  // one per input spec, active or not
  double max_simplex_error = 0.0;       // worst |sum - 1| or negative mass seen in training
};

/// Mini-batch SGD on the joint objective. Bias labels are computed from the
/// given (training) dataset; only active specs get a head. Each step moves
/// by learning_rate / |batch| times the gradient of the summed batch objective.
/// Throws DivergenceError when the loss or a parameter stops being finite.
TrainResult train(const Dataset& dataset, const std::vector<BiasTaskSpec>& specs, const TrainConfig& config);

std::vector<PrimaryPrediction> predict(const MultiObjectiveModel& model, const Dataset& dataset);

/// Applies the model's recorded input transforms (identity features).
Dataset prepare_inputs(const MultiObjectiveModel& model, const Dataset& dataset);

enum class BaselineKind { kAgnostic, kAgnosticL2, kIdentityFeature };

inline constexpr double kDefaultBaselineL2 = 1e-3;

struct BaselineSetup {
  Dataset data;
  TrainConfig config;
  std::vector<std::string> identity_features;
};

BaselineSetup make_baseline(BaselineKind kind, const Dataset& dataset, const TrainConfig& config,
                            std::string_view attribute = {}, double baseline_l2 = kDefaultBaselineL2);

/// Trains a baseline and records its input transform on the model.
TrainResult train_baseline(const BaselineSetup& setup);

std::string model_to_json(const MultiObjectiveModel& model);
MultiObjectiveModel model_from_json(std::string_view text);
void save_model(const std::filesystem::path& path, const MultiObjectiveModel& model);
MultiObjectiveModel load_model(const std::filesystem::path& path);

}  // namespace debias
