#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fbftl/errors.hpp"
#include "fbftl/rng.hpp"

namespace fbftl {

enum class Activation { identity, relu, sigmoid };

const char* to_string(Activation a);
Activation parse_activation(const std::string& name);

// One fully connected layer. Weights are stored output-major: weights(i, j)
// multiplies input j into output i, so the forward map is y = W x + b.
// dropout is the drop probability applied to this layer's output while
// training (inverted scaling, so evaluation needs no rescale).
struct DenseLayer {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
  Activation activation = Activation::identity;
  double dropout = 0.0;

  Eigen::Index in_dim() const { return weights.cols(); }
  Eigen::Index out_dim() const { return weights.rows(); }
  std::uint64_t param_count() const {
    return static_cast<std::uint64_t>(out_dim()) *
           static_cast<std::uint64_t>(in_dim() + 1);
  }
};

struct DenseNet {
  std::vector<DenseLayer> layers;

  Eigen::Index input_dim() const {
    return layers.empty() ? 0 : layers.front().in_dim();
  }
  Eigen::Index output_dim() const {
    return layers.empty() ? 0 : layers.back().out_dim();
  }
  std::uint64_t param_count() const;
};

// Flat parameter order: per layer, column-major weights then bias.
using ParamVector = Eigen::VectorXd;
using GradientVector = Eigen::VectorXd;

ParamVector pack_params(const DenseNet& net);
void unpack_params(DenseNet& net, const ParamVector& theta);

// Elementwise activation, usable on vector and matrix expressions alike.
template <typename Derived>
auto apply_activation(Activation a, const Eigen::MatrixBase<Derived>& z) {
  using Plain = typename Derived::PlainObject;
  switch (a) {
    case Activation::identity:
      return Plain(z);
    case Activation::relu:
      return Plain(z.array().max(0.0).matrix());
    case Activation::sigmoid:
      // Branch on sign so exp never overflows.
      return Plain(z.array()
                       .unaryExpr([](double v) {
                         if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                         const double e = std::exp(v);
                         return e / (1.0 + e);
                       })
                       .matrix());
  }
  throw std::invalid_argument("apply_activation: unknown activation");
}

// Derivative of the activation expressed through the post-activation value.
double activation_derivative(Activation a, double post);

Eigen::VectorXd dense_forward(const DenseLayer& layer, const Eigen::VectorXd& x);

// Evaluation-mode forward pass (dropout off).
Eigen::VectorXd forward(const DenseNet& net, const Eigen::VectorXd& x);

// Batched evaluation-mode forward; one sample per row of X.
Eigen::MatrixXd forward_batch(const DenseNet& net, const Eigen::MatrixXd& X);

// Numerically stable softmax of a logit vector.
template <typename Derived>
Eigen::VectorXd softmax(const Eigen::MatrixBase<Derived>& logits) {
  if (logits.size() == 0) throw std::invalid_argument("softmax: empty logits");
  Eigen::VectorXd v = logits;
  const double m = v.maxCoeff();
  v = (v.array() - m).exp();
  return v / v.sum();
}

// Cross-entropy against an integer label, computed through log-sum-exp.
// Probabilities are clamped at 1e-12 before the log.
double cross_entropy_loss(const Eigen::VectorXd& logits, int label);

// One-hot variant. Rejects targets that are not exactly one-hot.
double cross_entropy_loss(const Eigen::VectorXd& logits, const Eigen::VectorXd& onehot);

// Dropout masks are a pure function of (seed, step, sample), so repeated
// evaluation at the same coordinates sees the same masks. enabled=false means
// evaluation mode regardless of layer dropout rates.
struct DropoutPlan {
  bool enabled = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t sample = 0;
};

// Loss of one sample under the given dropout plan (the value backward() differentiates).
double loss_value(const DenseNet& net, const Eigen::VectorXd& x, int label,
                  const DropoutPlan& plan = {});

// Analytic gradient of the per-sample cross-entropy in pack_params order.
GradientVector backward(const DenseNet& net, const Eigen::VectorXd& x, int label,
                        double* loss_out = nullptr, const DropoutPlan& plan = {});

enum class OptimizerKind { sgd_momentum, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd_momentum;
  double learning_rate = 0.01;
  double momentum = 0.0;
  double l2_penalty = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  OptimizerConfig config;
  Eigen::VectorXd velocity;   // SGD momentum buffer
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  std::uint64_t step_count = 0;

  static OptimizerState make(const OptimizerConfig& config, Eigen::Index dim);
};

// One update. L2 is coupled: the penalty gradient l2 * theta joins the raw
// gradient before the momentum / moment accumulators see it.
ParamVector optimizer_step(OptimizerState& state, const ParamVector& theta,
                           const GradientVector& grad);

// Central finite differences of loss_value over every parameter.
GradientVector finite_difference_gradient(const DenseNet& net, const Eigen::VectorXd& x,
                                          int label, double h = 1e-4,
                                          const DropoutPlan& plan = {});

struct GradCheckResult {
  double max_relative_error = 0.0;
  Eigen::Index worst_coordinate = -1;
  bool pass = false;
};

// Compares backward() against central differences coordinate by coordinate.
// The relative error denominator is floored so coordinates whose true
// gradient sits at the finite-difference noise floor cannot dominate.
GradCheckResult gradient_check(const DenseNet& net, const Eigen::VectorXd& x, int label,
                               double h = 1e-4, double tolerance = 1e-4,
                               const DropoutPlan& plan = {});

// Smallest |pre-activation| across relu units, infinity when none. Central
// differences are only trusted away from the relu kink.
double min_relu_margin(const DenseNet& net, const Eigen::VectorXd& x);

// Index of the largest coefficient; first index wins ties.
Eigen::Index argmax(const Eigen::VectorXd& v);

double accuracy(const DenseNet& net, const Eigen::MatrixXd& X, const std::vector<int>& labels);
double mean_loss(const DenseNet& net, const Eigen::MatrixXd& X, const std::vector<int>& labels);

}  // namespace fbftl
