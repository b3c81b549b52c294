#include "fbftl/model_split.hpp"

#include <cmath>
#include <fstream>

namespace fbftl {

const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::pool: return "pool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::activation: return "activation";
    case LayerKind::dropout: return "dropout";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& name) {
  if (name == "dense") return LayerKind::dense;
  if (name == "conv2d") return LayerKind::conv2d;
  if (name == "pool") return LayerKind::pool;
  if (name == "flatten") return LayerKind::flatten;
  if (name == "activation") return LayerKind::activation;
  if (name == "dropout") return LayerKind::dropout;
  throw config_error("unknown layer kind: " + name);
}

std::uint64_t count_params(const LayerSpec& layer) {
  if (!layer.trainable) return 0;
  switch (layer.kind) {
    case LayerKind::dense:
      return static_cast<std::uint64_t>(layer.out_dim) *
             static_cast<std::uint64_t>(layer.in_dim + 1);
    case LayerKind::conv2d:
      return static_cast<std::uint64_t>(layer.out_channels) *
             (static_cast<std::uint64_t>(layer.in_channels) *
                  static_cast<std::uint64_t>(layer.kernel) *
                  static_cast<std::uint64_t>(layer.kernel) +
              1);
    default:
      return 0;
  }
}

std::vector<const LayerSpec*> ArchitectureSpec::trainable_layers() const {
  std::vector<const LayerSpec*> out;
  for (const auto& layer : layers)
    if (layer.trainable && (layer.kind == LayerKind::dense || layer.kind == LayerKind::conv2d))
      out.push_back(&layer);
  return out;
}

void ArchitectureSpec::validate() const {
  if (layers.empty()) throw config_error("architecture: no layers");
  if (bit_width <= 0) throw config_error("architecture: bit_width must be positive");
  for (const auto& layer : layers) {
    switch (layer.kind) {
      case LayerKind::dense:
        if (layer.in_dim <= 0 || layer.out_dim <= 0)
          throw config_error("architecture: dense layer needs positive in/out dims");
        break;
      case LayerKind::conv2d:
        if (layer.in_channels <= 0 || layer.out_channels <= 0 || layer.kernel <= 0)
          throw config_error("architecture: conv2d layer needs positive channels and kernel");
        break;
      case LayerKind::dropout:
        if (layer.rate < 0.0 || layer.rate >= 1.0)
          throw config_error("architecture: dropout rate must be in [0, 1)");
        break;
      default:
        break;
    }
  }
  const auto trainables = trainable_layers();
  if (trainables.empty()) throw config_error("architecture: no trainable layers");
  if (cut_index < 1 || static_cast<std::size_t>(cut_index) > trainables.size())
    throw config_error("architecture: cut_index out of range");
  if (trainables[static_cast<std::size_t>(cut_index - 1)]->kind != LayerKind::dense)
    throw config_error("architecture: cut layer must be dense");
}

ArchitectureSpec parse_architecture(const nlohmann::json& j) {
  ArchitectureSpec arch;
  if (!j.is_object() || !j.contains("layers") || !j.at("layers").is_array())
    throw config_error("architecture: expected an object with a layers array");
  if (!j.contains("cut_index")) throw config_error("architecture: missing cut_index");
  arch.cut_index = j.at("cut_index").get<int>();
  arch.bit_width = j.value("bit_width", 32);
  for (const auto& lj : j.at("layers")) {
    LayerSpec spec;
    spec.kind = parse_layer_kind(lj.value("kind", std::string("dense")));
    const bool default_trainable =
        spec.kind == LayerKind::dense || spec.kind == LayerKind::conv2d;
    spec.trainable = lj.value("trainable", default_trainable);
    switch (spec.kind) {
      case LayerKind::dense:
        spec.in_dim = lj.value("in", 0);
        spec.out_dim = lj.value("out", 0);
        if (lj.contains("activation"))
          spec.activation = parse_activation(lj.at("activation").get<std::string>());
        if (lj.contains("dropout")) spec.rate = lj.at("dropout").get<double>();
        break;
      case LayerKind::conv2d:
        spec.in_channels = lj.value("in_channels", 0);
        spec.out_channels = lj.value("out_channels", 0);
        spec.kernel = lj.value("kernel", 0);
        break;
      case LayerKind::activation:
        spec.activation = parse_activation(lj.value("activation", std::string("relu")));
        break;
      case LayerKind::dropout:
        spec.rate = lj.value("rate", 0.0);
        break;
      default:
        break;
    }
    arch.layers.push_back(spec);
  }
  arch.validate();
  return arch;
}

ArchitectureSpec load_architecture(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open architecture file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error("bad JSON in " + path + ": " + e.what());
  }
  return parse_architecture(j);
}

nlohmann::json architecture_to_json(const ArchitectureSpec& arch) {
  nlohmann::json j;
  j["cut_index"] = arch.cut_index;
  j["bit_width"] = arch.bit_width;
  j["layers"] = nlohmann::json::array();
  for (const auto& layer : arch.layers) {
    nlohmann::json lj;
    lj["kind"] = to_string(layer.kind);
    lj["trainable"] = layer.trainable;
    switch (layer.kind) {
      case LayerKind::dense:
        lj["in"] = layer.in_dim;
        lj["out"] = layer.out_dim;
        lj["activation"] = to_string(layer.activation);
        if (layer.rate > 0.0) lj["dropout"] = layer.rate;
        break;
      case LayerKind::conv2d:
        lj["in_channels"] = layer.in_channels;
        lj["out_channels"] = layer.out_channels;
        lj["kernel"] = layer.kernel;
        break;
      case LayerKind::activation:
        lj["activation"] = to_string(layer.activation);
        break;
      case LayerKind::dropout:
        lj["rate"] = layer.rate;
        break;
      default:
        break;
    }
    j["layers"].push_back(lj);
  }
  return j;
}

std::uint64_t total_params(const ArchitectureSpec& arch) {
  std::uint64_t total = 0;
  for (const auto& layer : arch.layers) total += count_params(layer);
  return total;
}

std::uint64_t total_params_from(const ArchitectureSpec& arch, int from_trainable_index) {
  const auto trainables = arch.trainable_layers();
  if (from_trainable_index < 1 ||
      static_cast<std::size_t>(from_trainable_index) > trainables.size())
    throw config_error("total_params_from: trainable index out of range");
  std::uint64_t total = 0;
  for (std::size_t i = static_cast<std::size_t>(from_trainable_index - 1);
       i < trainables.size(); ++i)
    total += count_params(*trainables[i]);
  return total;
}

std::uint64_t feature_dim_at_cut(const ArchitectureSpec& arch) {
  if (arch.cut_index < 2)
    throw config_error("feature_dim_at_cut: cut_index must be >= 2");
  const auto trainables = arch.trainable_layers();
  // The cut layer is dense by validation, so its own input width is the
  // feature dimension regardless of what feeds it (e.g. a flattened conv).
  const LayerSpec& cut = *trainables[static_cast<std::size_t>(arch.cut_index - 1)];
  return static_cast<std::uint64_t>(cut.in_dim);
}

namespace {

DenseLayer init_dense_layer(const LayerSpec& spec, Rng& rng) {
  DenseLayer layer;
  layer.weights.resize(spec.out_dim, spec.in_dim);
  layer.bias.resize(spec.out_dim);
  layer.activation = spec.activation;
  layer.dropout = spec.rate;
  const double bound = 1.0 / std::sqrt(static_cast<double>(spec.in_dim));
  for (Eigen::Index i = 0; i < layer.weights.rows(); ++i)
    for (Eigen::Index j = 0; j < layer.weights.cols(); ++j)
      layer.weights(i, j) = rng.uniform(-bound, bound);
  for (Eigen::Index i = 0; i < layer.bias.size(); ++i)
    layer.bias(i) = rng.uniform(-bound, bound);
  return layer;
}

// Folds standalone activation / dropout entries into the preceding dense
// layer and rejects kinds the trainer cannot execute.
std::vector<LayerSpec> executable_dense_specs(const ArchitectureSpec& arch) {
  std::vector<LayerSpec> specs;
  for (const auto& layer : arch.layers) {
    switch (layer.kind) {
      case LayerKind::dense:
        specs.push_back(layer);
        break;
      case LayerKind::activation:
        if (specs.empty()) throw config_error("architecture: activation before any dense layer");
        specs.back().activation = layer.activation;
        break;
      case LayerKind::dropout:
        if (specs.empty()) throw config_error("architecture: dropout before any dense layer");
        specs.back().rate = layer.rate;
        break;
      default:
        throw config_error(std::string("training supports dense layers only, got ") +
                           to_string(layer.kind));
    }
  }
  for (std::size_t i = 1; i < specs.size(); ++i)
    if (specs[i].in_dim != specs[i - 1].out_dim)
      throw config_error("architecture: dense dimensions do not chain");
  return specs;
}

}  // namespace

DenseNet build_dense_net(const ArchitectureSpec& arch, Rng& rng) {
  arch.validate();
  DenseNet net;
  for (const auto& spec : executable_dense_specs(arch))
    net.layers.push_back(init_dense_layer(spec, rng));
  return net;
}

SplitModel split_at(const ArchitectureSpec& arch, const DenseNet& pretrained, Rng& head_rng) {
  arch.validate();
  const auto specs = executable_dense_specs(arch);
  const std::size_t cut = static_cast<std::size_t>(arch.cut_index - 1);
  if (pretrained.layers.size() < cut)
    throw config_error("split_at: pretrained network has fewer layers than the cut needs");
  SplitModel split;
  split.cut_index = arch.cut_index;
  for (std::size_t l = 0; l < cut; ++l) {
    const DenseLayer& src = pretrained.layers[l];
    if (src.in_dim() != specs[l].in_dim || src.out_dim() != specs[l].out_dim)
      throw config_error("split_at: pretrained layer dimensions disagree with architecture");
    DenseLayer copy = src;
    copy.activation = specs[l].activation;
    copy.dropout = specs[l].rate;
    split.extractor.layers.push_back(std::move(copy));
  }
  for (std::size_t l = cut; l < specs.size(); ++l)
    split.head.layers.push_back(init_dense_layer(specs[l], head_rng));
  return split;
}

DenseNet concat(const SplitModel& split) {
  DenseNet net;
  net.layers = split.extractor.layers;
  net.layers.insert(net.layers.end(), split.head.layers.begin(), split.head.layers.end());
  return net;
}

Eigen::VectorXd extract_features(const SplitModel& split, const Eigen::VectorXd& x) {
  return forward(split.extractor, x);
}

Eigen::MatrixXd extract_features_batch(const SplitModel& split, const Eigen::MatrixXd& X) {
  return forward_batch(split.extractor, X);
}

std::uint64_t param_checksum(const DenseNet& net) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  auto mix = [&h](const double* data, std::size_t count) {
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < count * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001B3ull;
    }
  };
  for (const auto& layer : net.layers) {
    mix(layer.weights.data(), static_cast<std::size_t>(layer.weights.size()));
    mix(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  }
  return h;
}

}  // namespace fbftl
