#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "cfl/data.hpp"
#include "cfl/params.hpp"

namespace cfl {

enum class Architecture { LogisticRegression, Mlp };
enum class Activation { ReLU, Tanh };
enum class LossKind { CrossEntropy, Focal };
enum class OptimizerKind { Sgd, Adam };

struct LossSpec {
  LossKind kind = LossKind::Focal;
  double alpha = 0.25;
  double gamma = 2.0;
};

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
};

/// Architecture + loss of the shared model. hidden_units/activation apply to
/// the MLP only. Identical (spec, init_seed) yields bit-identical weights.
struct ModelSpec {
  Architecture architecture = Architecture::LogisticRegression;
  int hidden_units = 0;
  Activation activation = Activation::ReLU;
  int input_dim = 0;
  LossSpec loss;
  std::uint64_t init_seed = 0;
};

std::size_t parameter_count(const ModelSpec& spec);

/// Seeded uniform init scaled by 1/sqrt(fan_in); biases zero.
ParameterVector init_params(const ModelSpec& spec);

/// Probability of the positive class, clamped to [1e-12, 1 - 1e-12].
double forward(const ModelSpec& spec, const ParameterVector& params, std::span<const double> x);

double cross_entropy(double p, int y);

/// Alpha-balanced focal loss -alpha_t * (1 - p_t)^gamma * ln(p_t) with
/// p_t = p if y = 1 else 1 - p, alpha_t = alpha if y = 1 else 1 - alpha.
/// alpha = 1 switches the class balancing off for both classes, so gamma = 0
/// then reduces exactly to cross-entropy.
double focal_loss(double p, int y, double alpha, double gamma);

/// Mean per-sample loss over the batch and its exact analytic gradient.
std::pair<double, ParameterVector> loss_and_gradient(const ModelSpec& spec,
                                                     const ParameterVector& params,
                                                     std::span<const Sample> batch);

/// SGD or bias-corrected Adam. Moment state lives inside the instance; a
/// fresh instance is a fresh optimizer.
class Optimizer {
 public:
  Optimizer(OptimizerSpec spec, std::size_t parameter_count);

  ParameterVector step(const ParameterVector& params, const ParameterVector& gradient);

 private:
  OptimizerSpec spec_;
  std::uint64_t step_count_ = 0;
  std::vector<double> first_moment_;
  std::vector<double> second_moment_;
};

}  // namespace cfl
