#include "debias/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "debias/errors.hpp"
#include "debias/ini.hpp"

namespace debias {

std::string_view to_string(BiasMode mode) {
  switch (mode) {
    case BiasMode::kInvertedLabel: return "inverted";
    case BiasMode::kSubtractive: return "subtractive";
  }
  return "inverted";
}

BiasMode parse_bias_mode(std::string_view text) {
  if (text == "inverted" || text == "inverted-label") return BiasMode::kInvertedLabel;
  if (text == "subtractive") return BiasMode::kSubtractive;
  throw ArgumentError(fmt::format("unknown bias mode '{}' (inverted, subtractive)", text));
}

void TrainConfig::validate() const {
  if (p < 1) throw ArgumentError("shared dimension p must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ArgumentError("learning rate must be positive");
  if (batch_size < 1) throw ArgumentError("batch size must be at least 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ArgumentError("lambda must be nonnegative");
  if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ArgumentError("l2 must be nonnegative");
}

// ---- Parameters ----------------------------------------------------------------

void ModelParameters::for_each(const std::function<void(std::span<double>)>& fn) {
  fn(theta_s.values());
  fn(shared_offset);
  fn(theta_p.values());
  fn(primary_offset);
  for (auto& w : head_weights) fn(w.values());
  fn(head_offsets);
}

void ModelParameters::for_each(const std::function<void(std::span<const double>)>& fn) const {
  fn(theta_s.values());
  fn(shared_offset);
  fn(theta_p.values());
  fn(primary_offset);
  for (const auto& w : head_weights) fn(w.values());
  fn(head_offsets);
}

double ModelParameters::squared_norm() const {
  double s = 0.0;
  for_each([&](std::span<const double> block) {
    for (double v : block) s += v * v;
  });
  return s;
}

bool ModelParameters::all_finite() const {
  bool ok = true;
  for_each([&](std::span<const double> block) {
    for (double v : block) ok = ok && std::isfinite(v);
  });
  return ok;
}

ModelParameters ModelParameters::zeros_like() const {
  ModelParameters z;
  z.theta_s = Matrix(theta_s.rows(), theta_s.cols());
  z.shared_offset.assign(shared_offset.size(), 0.0);
  z.theta_p = Matrix(theta_p.rows(), theta_p.cols());
  z.primary_offset.assign(primary_offset.size(), 0.0);
  for (const auto& w : head_weights) z.head_weights.emplace_back(w.rows(), w.cols());
  z.head_offsets.assign(head_offsets.size(), 0.0);
  return z;
}

// ---- Init / forward --------------------------------------------------------------

MultiObjectiveModel init_model(std::size_t input_dim, std::vector<std::string> label_names,
                               std::vector<BiasHeadInfo> heads, const TrainConfig& config, Rng& rng) {
  config.validate();
  if (input_dim < 1) throw ArgumentError("input dimension must be at least 1");
  if (label_names.size() < 2) throw ArgumentError("need at least 2 primary labels");

  MultiObjectiveModel m;
  m.input_dim = input_dim;
  m.shared_dim = config.p;
  m.label_names = std::move(label_names);
  m.heads = std::move(heads);
  m.affine_offsets = config.affine_offsets;
  m.shared_activation = config.shared_activation;

  const std::size_t p = config.p;
  const std::size_t k = m.num_labels();
  const double shared_bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double head_bound = 1.0 / std::sqrt(static_cast<double>(p));

  // Heads are drawn last so the shared and primary weights do not depend on
  // how many bias tasks are present.
  auto& prm = m.params;
  prm.theta_s = Matrix(input_dim, p);
  for (double& v : prm.theta_s.values()) v = rng.uniform(-shared_bound, shared_bound);
  prm.shared_offset.assign(p, 0.0);
  prm.theta_p = Matrix(p, k);
  for (double& v : prm.theta_p.values()) v = rng.uniform(-head_bound, head_bound);
  prm.primary_offset.assign(k, 0.0);
  for (std::size_t h = 0; h < m.heads.size(); ++h) {
    Matrix w(p, 1);
    for (double& v : w.values()) v = rng.uniform(-head_bound, head_bound);
    prm.head_weights.push_back(std::move(w));
  }
  prm.head_offsets.assign(m.heads.size(), 0.0);
  return m;
}

namespace {

int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

double head_logit(const MultiObjectiveModel& model, std::size_t head, std::span<const double> h) {
  auto w = model.params.head_weights[head].values();
  double s = model.affine_offsets ? model.params.head_offsets[head] : 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) s += w[i] * h[i];
  return s;
}

}  // namespace

ForwardResult forward(const MultiObjectiveModel& model, std::span<const double> x) {
  if (x.size() != model.input_dim) {
    throw ShapeError(fmt::format("input has length {}, model expects {}", x.size(), model.input_dim));
  }
  const auto& prm = model.params;
  ForwardResult out;
  // Disabled offsets are ignored even if a loaded file carries nonzero values.
  const auto offset = [&](const Vector& v) { return model.affine_offsets ? std::span<const double>(v) : std::span<const double>(); };
  out.shared = affine_transposed(prm.theta_s, x, offset(prm.shared_offset));
  if (model.shared_activation == SharedActivation::kTanh) {
    for (double& v : out.shared) v = std::tanh(v);
  }
  const Vector logits = affine_transposed(prm.theta_p, out.shared, offset(prm.primary_offset));
  out.primary.probabilities = softmax(logits);
  out.primary.label = argmax_lowest(out.primary.probabilities);
  out.bias.reserve(model.num_heads());
  for (std::size_t h = 0; h < model.num_heads(); ++h) out.bias.push_back(sigmoid(head_logit(model, h, out.shared)));
  return out;
}

// ---- Loss and gradients ------------------------------------------------------------

namespace {

void check_alignment(const MultiObjectiveModel& model, const Dataset& data, std::span<const std::size_t> batch,
                     std::span<const HeadLabels> labels) {
  if (labels.size() != model.num_heads()) {
    throw ArgumentError(fmt::format("{} bias labelings given for {} bias heads", labels.size(), model.num_heads()));
  }
  for (const auto& l : labels) {
    if (l.size() != data.size()) {
      throw ArgumentError(fmt::format("bias labeling covers {} instances, dataset has {}", l.size(), data.size()));
    }
  }
  if (data.dim() != model.input_dim) {
    throw ShapeError(fmt::format("dataset dimension {} does not match model input {}", data.dim(), model.input_dim));
  }
  for (std::size_t i : batch) {
    if (i >= data.size()) throw ArgumentError(fmt::format("batch index {} out of range", i));
  }
}

// Forward and (optionally) backward pass over a batch, accumulating into grad.
// Returns the loss terms; simplex_error tracks the worst deviation seen.
LossTerms run_batch(const MultiObjectiveModel& model, const Dataset& data, std::span<const std::size_t> batch,
                    std::span<const HeadLabels> labels, const TrainConfig& config, ModelParameters* grad,
                    double* simplex_error) {
  const auto& prm = model.params;
  const std::size_t p = model.shared_dim;
  const std::size_t k = model.num_labels();
  const bool tanh_layer = model.shared_activation == SharedActivation::kTanh;

  LossTerms terms;
  Vector d_logits(k), d_shared(p);
  for (std::size_t idx : batch) {
    const auto& inst = data[idx];
    const auto fwd = forward(model, inst.features);
    const auto& y_hat = fwd.primary.probabilities;

    double mass = 0.0, most_negative = 0.0;
    for (double v : y_hat) {
      mass += v;
      most_negative = std::min(most_negative, v);
    }
    if (simplex_error) *simplex_error = std::max({*simplex_error, std::abs(mass - 1.0), -most_negative});

    double weighted = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double err = y_hat[j] - (static_cast<int>(j) == inst.label ? 1.0 : 0.0);
      terms.primary += err * err;
      d_logits[j] = 2.0 * err;
      weighted += y_hat[j] * d_logits[j];
    }
    // Softmax Jacobian-vector product.
    for (std::size_t j = 0; j < k; ++j) d_logits[j] = y_hat[j] * (d_logits[j] - weighted);

    if (grad) {
      for (std::size_t i = 0; i < p; ++i) {
        auto g_row = grad->theta_p.row(i);
        auto w_row = prm.theta_p.row(i);
        double back = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          g_row[j] += fwd.shared[i] * d_logits[j];
          back += w_row[j] * d_logits[j];
        }
        d_shared[i] = back;
      }
      if (model.affine_offsets)
        for (std::size_t j = 0; j < k; ++j) grad->primary_offset[j] += d_logits[j];
    }

    for (std::size_t h = 0; h < model.num_heads(); ++h) {
      const BiasLabel yb = labels[h][idx];
      if (yb == BiasLabel::kExcluded) continue;
      const double q = fwd.bias[h];
      const double y = yb == BiasLabel::kOne ? 1.0 : 0.0;
      double term, d_term;
      if (config.bias_mode == BiasMode::kSubtractive) {
        term = -(q - y) * (q - y);
        d_term = -2.0 * (q - y);
      } else {
        const double target = 1.0 - y;
        term = (q - target) * (q - target);
        d_term = 2.0 * (q - target);
      }
      terms.bias += term;
      if (!grad) continue;
      const double d_logit = config.lambda * d_term * q * (1.0 - q);
      auto g_w = grad->head_weights[h].values();
      auto w = prm.head_weights[h].values();
      for (std::size_t i = 0; i < p; ++i) {
        g_w[i] += fwd.shared[i] * d_logit;
        d_shared[i] += w[i] * d_logit;
      }
      if (model.affine_offsets) grad->head_offsets[h] += d_logit;
    }

    if (grad) {
      if (tanh_layer)
        for (std::size_t i = 0; i < p; ++i) d_shared[i] *= 1.0 - fwd.shared[i] * fwd.shared[i];
      for (std::size_t r = 0; r < model.input_dim; ++r) {
        const double xr = inst.features[r];
        if (xr == 0.0) continue;
        auto g_row = grad->theta_s.row(r);
        for (std::size_t i = 0; i < p; ++i) g_row[i] += xr * d_shared[i];
      }
      if (model.affine_offsets)
        for (std::size_t i = 0; i < p; ++i) grad->shared_offset[i] += d_shared[i];
    }
  }

  if (config.l2 > 0.0) {
    terms.l2 = config.l2 * prm.squared_norm();
    if (grad) {
      ModelParameters& g = *grad;
      // Pair up blocks of the gradient and the parameters in visiting order.
      std::vector<std::span<const double>> src;
      prm.for_each([&](std::span<const double> b) { src.push_back(b); });
      std::size_t block = 0;
      g.for_each([&](std::span<double> b) {
        for (std::size_t i = 0; i < b.size(); ++i) b[i] += 2.0 * config.l2 * src[block][i];
        ++block;
      });
    }
  }
  return terms;
}

}  // namespace

LossTerms loss_terms(const MultiObjectiveModel& model, const Dataset& data, std::span<const std::size_t> batch,
                     std::span<const HeadLabels> labels, const TrainConfig& config) {
  if (batch.empty()) throw ArgumentError("loss of an empty batch");
  check_alignment(model, data, batch, labels);
  return run_batch(model, data, batch, labels, config, nullptr, nullptr);
}

double loss(const MultiObjectiveModel& model, const Dataset& data, std::span<const std::size_t> batch,
            std::span<const HeadLabels> labels, const TrainConfig& config) {
  return loss_terms(model, data, batch, labels, config).total(config.lambda);
}

ModelParameters gradients(const MultiObjectiveModel& model, const Dataset& data, std::span<const std::size_t> batch,
                          std::span<const HeadLabels> labels, const TrainConfig& config) {
  if (batch.empty()) throw ArgumentError("gradient of an empty batch");
  check_alignment(model, data, batch, labels);
  ModelParameters grad = model.params.zeros_like();
  run_batch(model, data, batch, labels, config, &grad, nullptr);
  return grad;
}

// ---- Training ---------------------------------------------------------------------

TrainResult train(const Dataset& dataset, const std::vector<BiasTaskSpec>& specs, const TrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw ArgumentError("cannot train on an empty dataset");

  TrainResult result;
  std::vector<BiasHeadInfo> heads;
  std::vector<HeadLabels> head_labels;
  for (const auto& spec : specs) {
    auto labeling = compute_bias_labels(dataset, spec);
    if (labeling.active) {
      heads.push_back({spec, labeling.rho});
      head_labels.push_back(labeling.labels);
    }
    result.labelings.push_back(std::move(labeling));
  }

  Rng init_rng(derive_seed(config.seed, 0));
  Rng order_rng(derive_seed(config.seed, 1));
  result.model = init_model(dataset.dim(), dataset.label_names(), std::move(heads), config, init_rng);
  auto& model = result.model;

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  ModelParameters grad = model.params.zeros_like();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> batch(order.data() + start, stop - start);

      grad.for_each([](std::span<double> b) { std::fill(b.begin(), b.end(), 0.0); });
      const auto terms = run_batch(model, dataset, batch, head_labels, config, &grad, &result.max_simplex_error);
      const double batch_loss = terms.total(config.lambda);
      if (!std::isfinite(batch_loss)) throw DivergenceError(epoch + 1, config.learning_rate);
      epoch_loss += batch_loss;

      const double step = config.learning_rate / static_cast<double>(batch.size());
      std::vector<std::span<const double>> g_blocks;
      grad.for_each([&](std::span<const double> b) { g_blocks.push_back(b); });
      std::size_t block = 0;
      model.params.for_each([&](std::span<double> b) {
        for (std::size_t i = 0; i < b.size(); ++i) b[i] -= step * g_blocks[block][i];
        ++block;
      });
    }
    if (!std::isfinite(epoch_loss) || !model.params.all_finite()) {
      throw DivergenceError(epoch + 1, config.learning_rate);
    }
    result.loss_trace.push_back(epoch_loss);
  }
  return result;
}

std::vector<PrimaryPrediction> predict(const MultiObjectiveModel& model, const Dataset& dataset) {
  if (dataset.dim() != model.input_dim && !dataset.empty()) {
    throw ShapeError(fmt::format("dataset dimension {} does not match model input {}", dataset.dim(), model.input_dim));
  }
  std::vector<PrimaryPrediction> out;
  out.reserve(dataset.size());
  for (const auto& inst : dataset.instances()) out.push_back(forward(model, inst.features).primary);
  return out;
}

Dataset prepare_inputs(const MultiObjectiveModel& model, const Dataset& dataset) {
  Dataset out = dataset;
  for (const auto& attr : model.identity_features) out = append_identity_feature(out, attr);
  return out;
}

// ---- Baselines ----------------------------------------------------------------------

BaselineSetup make_baseline(BaselineKind kind, const Dataset& dataset, const TrainConfig& config,
                            std::string_view attribute, double baseline_l2) {
  BaselineSetup setup{dataset, config, {}};
  setup.config.lambda = 0.0;
  switch (kind) {
    case BaselineKind::kAgnostic:
      setup.config.l2 = 0.0;
      break;
    case BaselineKind::kAgnosticL2:
      setup.config.l2 = baseline_l2;
      break;
    case BaselineKind::kIdentityFeature:
      setup.data = append_identity_feature(dataset, attribute);
      setup.identity_features.emplace_back(attribute);
      break;
  }
  return setup;
}

TrainResult train_baseline(const BaselineSetup& setup) {
  auto result = train(setup.data, {}, setup.config);
  result.model.identity_features = setup.identity_features;
  return result;
}

// ---- Serialization ---------------------------------------------------------------------

namespace {

using nlohmann::json;

json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"values", std::vector<double>(m.values().begin(), m.values().end())}};
}

Matrix matrix_from(const json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(), j.at("values").get<std::vector<double>>());
}

}  // namespace

std::string model_to_json(const MultiObjectiveModel& model) {
  json heads = json::array();
  for (std::size_t h = 0; h < model.num_heads(); ++h) {
    const auto& info = model.heads[h];
    heads.push_back({{"attribute", info.spec.attribute},
                     {"sensitive_labels", info.spec.sensitive_labels},
                     {"under_represented", info.spec.under_represented},
                     {"tau", info.spec.tau},
                     {"rho", info.rho},
                     {"weights", matrix_json(model.params.head_weights[h])},
                     {"offset", model.params.head_offsets[h]}});
  }
  json j = {
      {"format", "debias-model"},
      {"version", 1},
      {"input_dim", model.input_dim},
      {"shared_dim", model.shared_dim},
      {"label_names", model.label_names},
      {"identity_features", model.identity_features},
      {"affine_offsets", model.affine_offsets},
      {"shared_activation", model.shared_activation == SharedActivation::kTanh ? "tanh" : "identity"},
      {"theta_s", matrix_json(model.params.theta_s)},
      {"shared_offset", model.params.shared_offset},
      {"theta_p", matrix_json(model.params.theta_p)},
      {"primary_offset", model.params.primary_offset},
      {"bias_heads", heads},
  };
  return j.dump(1) + "\n";
}

MultiObjectiveModel model_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("model file is not valid JSON: {}", e.what()), 1);
  }
  try {
    if (j.value("format", "") != "debias-model") throw ParseError("not a debias model file", 1);
    MultiObjectiveModel m;
    m.input_dim = j.at("input_dim").get<std::size_t>();
    m.shared_dim = j.at("shared_dim").get<std::size_t>();
    m.label_names = j.at("label_names").get<std::vector<std::string>>();
    m.identity_features = j.at("identity_features").get<std::vector<std::string>>();
    m.affine_offsets = j.at("affine_offsets").get<bool>();
    m.shared_activation = j.at("shared_activation").get<std::string>() == "tanh" ? SharedActivation::kTanh
                                                                                : SharedActivation::kIdentity;
    m.params.theta_s = matrix_from(j.at("theta_s"));
    m.params.shared_offset = j.at("shared_offset").get<Vector>();
    m.params.theta_p = matrix_from(j.at("theta_p"));
    m.params.primary_offset = j.at("primary_offset").get<Vector>();
    for (const auto& h : j.at("bias_heads")) {
      BiasHeadInfo info;
      info.spec.attribute = h.at("attribute").get<std::string>();
      info.spec.sensitive_labels = h.at("sensitive_labels").get<std::vector<std::string>>();
      info.spec.under_represented = h.at("under_represented").get<std::vector<std::string>>();
      info.spec.tau = h.at("tau").get<double>();
      info.rho = h.at("rho").get<double>();
      m.heads.push_back(std::move(info));
      m.params.head_weights.push_back(matrix_from(h.at("weights")));
      m.params.head_offsets.push_back(h.at("offset").get<double>());
    }
    const auto& prm = m.params;
    const bool shapes_ok = prm.theta_s.rows() == m.input_dim && prm.theta_s.cols() == m.shared_dim &&
                           prm.shared_offset.size() == m.shared_dim && prm.theta_p.rows() == m.shared_dim &&
                           prm.theta_p.cols() == m.num_labels() && prm.primary_offset.size() == m.num_labels() &&
                           std::all_of(prm.head_weights.begin(), prm.head_weights.end(), [&](const Matrix& w) {
                             return w.rows() == m.shared_dim && w.cols() == 1;
                           });
    if (!shapes_ok) throw ShapeError("model file has inconsistent parameter shapes");
    return m;
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("malformed model file: {}", e.what()), 1);
  }
}

void save_model(const std::filesystem::path& path, const MultiObjectiveModel& model) {
  write_file_atomic(path, model_to_json(model));
}

MultiObjectiveModel load_model(const std::filesystem::path& path) { return model_from_json(read_text_file(path)); }

}  // namespace debias
