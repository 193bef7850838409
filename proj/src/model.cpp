#include "cfl/model.hpp"

#include <cmath>
#include <string>

#include "cfl/errors.hpp"
#include "cfl/rng.hpp"

namespace cfl {

namespace {

constexpr double kProbClamp = 1e-12;

void validate_spec(const ModelSpec& spec) {
  if (spec.input_dim <= 0) {
    throw DimensionError("model input_dim must be positive");
  }
  if (spec.architecture == Architecture::Mlp && spec.hidden_units <= 0) {
    throw DimensionError("MLP hidden_units must be positive");
  }
  if (!(spec.loss.alpha > 0.0 && spec.loss.alpha <= 1.0)) {
    throw ConfigError("loss alpha must lie in (0, 1]");
  }
  if (spec.loss.gamma < 0.0) {
    throw ConfigError("loss gamma must be non-negative");
  }
}

double clamp_probability(double p) {
  if (p < kProbClamp) return kProbClamp;
  if (p > 1.0 - kProbClamp) return 1.0 - kProbClamp;
  return p;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double activate(Activation a, double z) {
  return a == Activation::ReLU ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

double activate_derivative(Activation a, double z, double activated) {
  return a == Activation::ReLU ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - activated * activated;
}

// Flat layout. Logistic regression: [w(input_dim), b]. MLP: [W1 row-major by
// hidden unit, b1, w2, b2].
struct MlpOffsets {
  std::size_t w1, b1, w2, b2;
};

MlpOffsets mlp_offsets(const ModelSpec& spec) {
  const auto in = static_cast<std::size_t>(spec.input_dim);
  const auto hidden = static_cast<std::size_t>(spec.hidden_units);
  return {0, in * hidden, in * hidden + hidden, in * hidden + 2 * hidden};
}

void check_dimensions(const ModelSpec& spec, const ParameterVector& params,
                      std::span<const double> x) {
  if (params.size() != parameter_count(spec)) {
    throw DimensionError("parameter vector has length " + std::to_string(params.size()) +
                         ", model needs " + std::to_string(parameter_count(spec)));
  }
  if (static_cast<int>(x.size()) != spec.input_dim) {
    throw DimensionError("feature vector has length " + std::to_string(x.size()) +
                         ", model needs " + std::to_string(spec.input_dim));
  }
}

// Raw logit plus the hidden pre-activations/activations needed by backprop.
struct ForwardTrace {
  double logit = 0.0;
  std::vector<double> hidden_pre;
  std::vector<double> hidden_act;
};

ForwardTrace forward_trace(const ModelSpec& spec, std::span<const double> w,
                           std::span<const double> x) {
  ForwardTrace trace;
  if (spec.architecture == Architecture::LogisticRegression) {
    double z = w[x.size()];  // bias
    for (std::size_t d = 0; d < x.size(); ++d) {
      z += w[d] * x[d];
    }
    trace.logit = z;
    return trace;
  }
  const auto off = mlp_offsets(spec);
  const auto in = static_cast<std::size_t>(spec.input_dim);
  const auto hidden = static_cast<std::size_t>(spec.hidden_units);
  trace.hidden_pre.resize(hidden);
  trace.hidden_act.resize(hidden);
  double z2 = w[off.b2];
  for (std::size_t h = 0; h < hidden; ++h) {
    double z1 = w[off.b1 + h];
    const std::size_t row = off.w1 + h * in;
    for (std::size_t d = 0; d < in; ++d) {
      z1 += w[row + d] * x[d];
    }
    trace.hidden_pre[h] = z1;
    trace.hidden_act[h] = activate(spec.activation, z1);
    z2 += w[off.w2 + h] * trace.hidden_act[h];
  }
  trace.logit = z2;
  return trace;
}

// alpha_t of the balanced focal loss; alpha = 1 turns the balancing off
// entirely so the gamma = 0 case degenerates to plain cross-entropy.
double alpha_weight(double alpha, int y) {
  if (y == 1 || alpha == 1.0) return alpha;
  return 1.0 - alpha;
}

// d(loss)/d(logit) for one sample, evaluated at the clamped probability.
double loss_logit_gradient(const LossSpec& loss, double p, int y) {
  if (loss.kind == LossKind::CrossEntropy) {
    return p - static_cast<double>(y);
  }
  const double pt = y == 1 ? p : 1.0 - p;
  const double at = alpha_weight(loss.alpha, y);
  const double sign = y == 1 ? 1.0 : -1.0;
  return sign * at * std::pow(1.0 - pt, loss.gamma) *
         (loss.gamma * pt * std::log(pt) + pt - 1.0);
}

}  // namespace

std::size_t parameter_count(const ModelSpec& spec) {
  validate_spec(spec);
  const auto in = static_cast<std::size_t>(spec.input_dim);
  if (spec.architecture == Architecture::LogisticRegression) {
    return in + 1;
  }
  const auto hidden = static_cast<std::size_t>(spec.hidden_units);
  return in * hidden + hidden + hidden + 1;
}

ParameterVector init_params(const ModelSpec& spec) {
  const std::size_t count = parameter_count(spec);
  std::vector<double> w(count, 0.0);
  Rng rng(derive_seed(spec.init_seed, Stream::ParamInit));

  if (spec.architecture == Architecture::LogisticRegression) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
    for (int d = 0; d < spec.input_dim; ++d) {
      w[static_cast<std::size_t>(d)] = rng.uniform(-bound, bound);
    }
    return ParameterVector(std::move(w));  // bias stays zero
  }

  const auto off = mlp_offsets(spec);
  const auto in = static_cast<std::size_t>(spec.input_dim);
  const auto hidden = static_cast<std::size_t>(spec.hidden_units);
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(in));
  for (std::size_t i = 0; i < in * hidden; ++i) {
    w[off.w1 + i] = rng.uniform(-bound1, bound1);
  }
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (std::size_t h = 0; h < hidden; ++h) {
    w[off.w2 + h] = rng.uniform(-bound2, bound2);
  }
  return ParameterVector(std::move(w));  // b1, b2 stay zero
}

double forward(const ModelSpec& spec, const ParameterVector& params, std::span<const double> x) {
  validate_spec(spec);
  check_dimensions(spec, params, x);
  return clamp_probability(sigmoid(forward_trace(spec, params.values(), x).logit));
}

double cross_entropy(double p, int y) {
  return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

double focal_loss(double p, int y, double alpha, double gamma) {
  const double pt = y == 1 ? p : 1.0 - p;
  return -alpha_weight(alpha, y) * std::pow(1.0 - pt, gamma) * std::log(pt);
}

std::pair<double, ParameterVector> loss_and_gradient(const ModelSpec& spec,
                                                     const ParameterVector& params,
                                                     std::span<const Sample> batch) {
  validate_spec(spec);
  if (batch.empty()) {
    throw DataError("loss_and_gradient needs a non-empty batch");
  }

  const std::span<const double> w = params.values();
  std::vector<double> grad(params.size(), 0.0);
  double loss_sum = 0.0;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sample& sample = batch[i];
    check_dimensions(spec, params, sample.features);
    const ForwardTrace trace = forward_trace(spec, w, sample.features);
    const double p = clamp_probability(sigmoid(trace.logit));
    const double sample_loss = spec.loss.kind == LossKind::CrossEntropy
                                   ? cross_entropy(p, sample.label)
                                   : focal_loss(p, sample.label, spec.loss.alpha, spec.loss.gamma);
    if (!std::isfinite(sample_loss)) {
      throw NumericError("non-finite loss at batch sample " + std::to_string(i));
    }
    loss_sum += sample_loss;

    const double gz = loss_logit_gradient(spec.loss, p, sample.label);
    if (spec.architecture == Architecture::LogisticRegression) {
      for (std::size_t d = 0; d < sample.features.size(); ++d) {
        grad[d] += gz * sample.features[d];
      }
      grad[sample.features.size()] += gz;
      continue;
    }
    const auto off = mlp_offsets(spec);
    const auto in = static_cast<std::size_t>(spec.input_dim);
    const auto hidden = static_cast<std::size_t>(spec.hidden_units);
    grad[off.b2] += gz;
    for (std::size_t h = 0; h < hidden; ++h) {
      grad[off.w2 + h] += gz * trace.hidden_act[h];
      const double dh = gz * w[off.w2 + h] *
                        activate_derivative(spec.activation, trace.hidden_pre[h],
                                            trace.hidden_act[h]);
      if (dh == 0.0) continue;
      const std::size_t row = off.w1 + h * in;
      for (std::size_t d = 0; d < in; ++d) {
        grad[row + d] += dh * sample.features[d];
      }
      grad[off.b1 + h] += dh;
    }
  }

  const double scale = 1.0 / static_cast<double>(batch.size());
  for (double& g : grad) g *= scale;
  return {loss_sum * scale, ParameterVector(std::move(grad))};
}

Optimizer::Optimizer(OptimizerSpec spec, std::size_t parameter_count) : spec_(spec) {
  if (!(spec_.learning_rate >= 0.0) || !std::isfinite(spec_.learning_rate)) {
    throw ConfigError("learning rate must be non-negative and finite");
  }
  if (spec_.kind == OptimizerKind::Adam) {
    first_moment_.assign(parameter_count, 0.0);
    second_moment_.assign(parameter_count, 0.0);
  }
}

ParameterVector Optimizer::step(const ParameterVector& params, const ParameterVector& gradient) {
  if (params.size() != gradient.size()) {
    throw DimensionError("optimizer step: parameter/gradient length mismatch");
  }
  if (spec_.kind == OptimizerKind::Adam && params.size() != first_moment_.size()) {
    throw DimensionError("optimizer state was initialized for a different parameter length");
  }

  const std::span<const double> p = params.values();
  const std::span<const double> g = gradient.values();
  std::vector<double> next(p.begin(), p.end());

  if (spec_.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] -= spec_.learning_rate * g[i];
    }
    return ParameterVector(std::move(next));
  }

  ++step_count_;
  const double bias1 = 1.0 - std::pow(spec_.adam_beta1, static_cast<double>(step_count_));
  const double bias2 = 1.0 - std::pow(spec_.adam_beta2, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < next.size(); ++i) {
    first_moment_[i] = spec_.adam_beta1 * first_moment_[i] + (1.0 - spec_.adam_beta1) * g[i];
    second_moment_[i] =
        spec_.adam_beta2 * second_moment_[i] + (1.0 - spec_.adam_beta2) * g[i] * g[i];
    const double m_hat = first_moment_[i] / bias1;
    const double v_hat = second_moment_[i] / bias2;
    next[i] -= spec_.learning_rate * m_hat / (std::sqrt(v_hat) + spec_.adam_epsilon);
  }
  return ParameterVector(std::move(next));
}

}  // namespace cfl
