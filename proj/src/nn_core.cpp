#include "fbftl/nn_core.hpp"

#include <cmath>
#include <limits>

namespace fbftl {

const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw config_error("unknown activation: " + name);
}

std::uint64_t DenseNet::param_count() const {
  std::uint64_t total = 0;
  for (const auto& layer : layers) total += layer.param_count();
  return total;
}

ParamVector pack_params(const DenseNet& net) {
  ParamVector theta(static_cast<Eigen::Index>(net.param_count()));
  Eigen::Index at = 0;
  for (const auto& layer : net.layers) {
    const Eigen::Index w = layer.weights.size();
    theta.segment(at, w) = Eigen::Map<const Eigen::VectorXd>(layer.weights.data(), w);
    at += w;
    theta.segment(at, layer.bias.size()) = layer.bias;
    at += layer.bias.size();
  }
  return theta;
}

void unpack_params(DenseNet& net, const ParamVector& theta) {
  if (theta.size() != static_cast<Eigen::Index>(net.param_count()))
    throw std::invalid_argument("unpack_params: size mismatch");
  Eigen::Index at = 0;
  for (auto& layer : net.layers) {
    const Eigen::Index w = layer.weights.size();
    Eigen::Map<Eigen::VectorXd>(layer.weights.data(), w) = theta.segment(at, w);
    at += w;
    layer.bias = theta.segment(at, layer.bias.size());
    at += layer.bias.size();
  }
}

double activation_derivative(Activation a, double post) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return post > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: return post * (1.0 - post);
  }
  throw std::invalid_argument("activation_derivative: unknown activation");
}

Eigen::VectorXd dense_forward(const DenseLayer& layer, const Eigen::VectorXd& x) {
  if (x.size() != layer.in_dim())
    throw std::invalid_argument("dense_forward: input dimension mismatch");
  return apply_activation(layer.activation,
                          Eigen::VectorXd(layer.weights * x + layer.bias));
}

Eigen::VectorXd forward(const DenseNet& net, const Eigen::VectorXd& x) {
  Eigen::VectorXd h = x;
  for (const auto& layer : net.layers) h = dense_forward(layer, h);
  return h;
}

Eigen::MatrixXd forward_batch(const DenseNet& net, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd H = X;
  for (const auto& layer : net.layers) {
    if (H.cols() != layer.in_dim())
      throw std::invalid_argument("forward_batch: input dimension mismatch");
    Eigen::MatrixXd Z = (H * layer.weights.transpose()).rowwise() + layer.bias.transpose();
    H = apply_activation(layer.activation, Z);
  }
  return H;
}

double cross_entropy_loss(const Eigen::VectorXd& logits, int label) {
  if (label < 0 || label >= logits.size())
    throw std::invalid_argument("cross_entropy_loss: label out of range");
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  const double p = std::exp(logits(label) - lse);
  return -std::log(p < 1e-12 ? 1e-12 : p);
}

double cross_entropy_loss(const Eigen::VectorXd& logits, const Eigen::VectorXd& onehot) {
  if (onehot.size() != logits.size())
    throw std::invalid_argument("cross_entropy_loss: target size mismatch");
  int hot = -1;
  for (Eigen::Index i = 0; i < onehot.size(); ++i) {
    const double v = onehot(i);
    if (v == 1.0) {
      if (hot >= 0) throw std::invalid_argument("cross_entropy_loss: target not one-hot");
      hot = static_cast<int>(i);
    } else if (v != 0.0) {
      throw std::invalid_argument("cross_entropy_loss: target not one-hot");
    }
  }
  if (hot < 0) throw std::invalid_argument("cross_entropy_loss: target not one-hot");
  return cross_entropy_loss(logits, hot);
}

namespace {

// Keep-mask for one layer's output. Inverted dropout: kept units are scaled
// by 1/(1-p) so the expected activation matches evaluation mode.
Eigen::VectorXd dropout_mask(const DropoutPlan& plan, std::size_t layer_index,
                             Eigen::Index dim, double rate) {
  Eigen::VectorXd mask = Eigen::VectorXd::Ones(dim);
  if (!plan.enabled || rate <= 0.0) return mask;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  Rng rng = derive_rng(plan.seed, "dropout", plan.step,
                       (plan.sample << 8) ^ static_cast<std::uint64_t>(layer_index));
  const double keep = 1.0 - rate;
  for (Eigen::Index i = 0; i < dim; ++i)
    mask(i) = rng.uniform() < rate ? 0.0 : 1.0 / keep;
  return mask;
}

struct ForwardTrace {
  std::vector<Eigen::VectorXd> inputs;   // input to each layer
  std::vector<Eigen::VectorXd> posts;    // masked post-activation of each layer
  std::vector<Eigen::VectorXd> masks;
};

ForwardTrace traced_forward(const DenseNet& net, const Eigen::VectorXd& x,
                            const DropoutPlan& plan) {
  ForwardTrace t;
  t.inputs.reserve(net.layers.size());
  t.posts.reserve(net.layers.size());
  t.masks.reserve(net.layers.size());
  Eigen::VectorXd h = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    if (h.size() != layer.in_dim())
      throw std::invalid_argument("forward: input dimension mismatch");
    t.inputs.push_back(h);
    Eigen::VectorXd post =
        apply_activation(layer.activation, Eigen::VectorXd(layer.weights * h + layer.bias));
    Eigen::VectorXd mask = dropout_mask(plan, l, post.size(), layer.dropout);
    post = post.cwiseProduct(mask);
    t.posts.push_back(post);
    t.masks.push_back(std::move(mask));
    h = t.posts.back();
  }
  return t;
}

}  // namespace

double loss_value(const DenseNet& net, const Eigen::VectorXd& x, int label,
                  const DropoutPlan& plan) {
  if (net.layers.empty()) throw std::invalid_argument("loss_value: empty network");
  const ForwardTrace t = traced_forward(net, x, plan);
  return cross_entropy_loss(t.posts.back(), label);
}

GradientVector backward(const DenseNet& net, const Eigen::VectorXd& x, int label,
                        double* loss_out, const DropoutPlan& plan) {
  if (net.layers.empty()) throw std::invalid_argument("backward: empty network");
  const ForwardTrace t = traced_forward(net, x, plan);
  const Eigen::VectorXd& logits = t.posts.back();
  if (loss_out) *loss_out = cross_entropy_loss(logits, label);

  const std::size_t L = net.layers.size();
  // dL/d(post) at the output; softmax and cross-entropy fold together.
  Eigen::VectorXd dpost = softmax(logits);
  dpost(label) -= 1.0;

  GradientVector grad(static_cast<Eigen::Index>(net.param_count()));
  std::vector<Eigen::Index> offsets(L);
  {
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < L; ++l) {
      offsets[l] = at;
      at += static_cast<Eigen::Index>(net.layers[l].param_count());
    }
  }

  for (std::size_t li = L; li-- > 0;) {
    const auto& layer = net.layers[li];
    // Undo the mask to reach the raw post-activation, then the pre-activation.
    Eigen::VectorXd dmasked = dpost.cwiseProduct(t.masks[li]);
    Eigen::VectorXd dpre(dmasked.size());
    for (Eigen::Index i = 0; i < dpre.size(); ++i) {
      const double post_raw =
          t.masks[li](i) != 0.0 ? t.posts[li](i) / t.masks[li](i) : 0.0;
      dpre(i) = dmasked(i) * activation_derivative(layer.activation, post_raw);
    }
    const Eigen::Index w = layer.weights.size();
    Eigen::MatrixXd dW = dpre * t.inputs[li].transpose();
    grad.segment(offsets[li], w) = Eigen::Map<const Eigen::VectorXd>(dW.data(), w);
    grad.segment(offsets[li] + w, dpre.size()) = dpre;
    if (li > 0) dpost = layer.weights.transpose() * dpre;
  }
  return grad;
}

OptimizerState OptimizerState::make(const OptimizerConfig& config, Eigen::Index dim) {
  OptimizerState s;
  s.config = config;
  s.velocity = Eigen::VectorXd::Zero(dim);
  s.first_moment = Eigen::VectorXd::Zero(dim);
  s.second_moment = Eigen::VectorXd::Zero(dim);
  return s;
}

ParamVector optimizer_step(OptimizerState& state, const ParamVector& theta,
                           const GradientVector& grad) {
  if (theta.size() != state.velocity.size() || grad.size() != theta.size())
    throw std::invalid_argument("optimizer_step: dimension mismatch");
  if (!grad.allFinite())
    throw numeric_error("optimizer_step: non-finite gradient");
  const OptimizerConfig& c = state.config;
  const Eigen::VectorXd g = grad + c.l2_penalty * theta;
  switch (c.kind) {
    case OptimizerKind::sgd_momentum:
      state.velocity = c.momentum * state.velocity + g;
      return theta - c.learning_rate * state.velocity;
    case OptimizerKind::adam: {
      state.step_count += 1;
      state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * g;
      state.second_moment =
          c.beta2 * state.second_moment + (1.0 - c.beta2) * g.cwiseProduct(g);
      const double t = static_cast<double>(state.step_count);
      const double bc1 = 1.0 - std::pow(c.beta1, t);
      const double bc2 = 1.0 - std::pow(c.beta2, t);
      const Eigen::VectorXd mhat = state.first_moment / bc1;
      const Eigen::VectorXd vhat = state.second_moment / bc2;
      return theta -
             c.learning_rate * (mhat.array() / (vhat.array().sqrt() + c.epsilon)).matrix();
    }
  }
  throw std::invalid_argument("optimizer_step: unknown optimizer kind");
}

GradientVector finite_difference_gradient(const DenseNet& net, const Eigen::VectorXd& x,
                                          int label, double h, const DropoutPlan& plan) {
  if (h <= 0.0) throw std::invalid_argument("finite_difference_gradient: h must be positive");
  DenseNet probe = net;
  ParamVector theta = pack_params(probe);
  GradientVector grad(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double keep = theta(i);
    theta(i) = keep + h;
    unpack_params(probe, theta);
    const double up = loss_value(probe, x, label, plan);
    theta(i) = keep - h;
    unpack_params(probe, theta);
    const double down = loss_value(probe, x, label, plan);
    theta(i) = keep;
    grad(i) = (up - down) / (2.0 * h);
  }
  unpack_params(probe, theta);
  return grad;
}

GradCheckResult gradient_check(const DenseNet& net, const Eigen::VectorXd& x, int label,
                               double h, double tolerance, const DropoutPlan& plan) {
  const GradientVector analytic = backward(net, x, label, nullptr, plan);
  const GradientVector numeric = finite_difference_gradient(net, x, label, h, plan);
  GradCheckResult result;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double denom = std::max(std::abs(analytic(i)) + std::abs(numeric(i)), 1e-5);
    const double rel = std::abs(analytic(i) - numeric(i)) / denom;
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_coordinate = i;
    }
  }
  result.pass = result.max_relative_error <= tolerance;
  return result;
}

double min_relu_margin(const DenseNet& net, const Eigen::VectorXd& x) {
  double margin = std::numeric_limits<double>::infinity();
  Eigen::VectorXd h = x;
  for (const auto& layer : net.layers) {
    const Eigen::VectorXd pre = layer.weights * h + layer.bias;
    if (layer.activation == Activation::relu)
      margin = std::min(margin, pre.cwiseAbs().minCoeff());
    h = apply_activation(layer.activation, pre);
  }
  return margin;
}

Eigen::Index argmax(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw std::invalid_argument("argmax: empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

double accuracy(const DenseNet& net, const Eigen::MatrixXd& X, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(X.rows()) != labels.size())
    throw std::invalid_argument("accuracy: row/label count mismatch");
  if (labels.empty()) throw std::invalid_argument("accuracy: empty evaluation set");
  const Eigen::MatrixXd logits = forward_batch(net, X);
  std::size_t hits = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    if (best == labels[static_cast<std::size_t>(r)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double mean_loss(const DenseNet& net, const Eigen::MatrixXd& X, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(X.rows()) != labels.size())
    throw std::invalid_argument("mean_loss: row/label count mismatch");
  if (labels.empty()) throw std::invalid_argument("mean_loss: empty evaluation set");
  const Eigen::MatrixXd logits = forward_batch(net, X);
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    total += cross_entropy_loss(logits.row(r).transpose(), labels[static_cast<std::size_t>(r)]);
  return total / static_cast<double>(labels.size());
}

}  // namespace fbftl
