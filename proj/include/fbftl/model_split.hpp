#pragma once

#include <cstdint>
#include "json.hpp"
#include <optional>
#include <string>
#include <vector>

#include "fbftl/nn_core.hpp"

namespace fbftl {

enum class LayerKind { dense, conv2d, pool, flatten, activation, dropout };

const char* to_string(LayerKind k);
LayerKind parse_layer_kind(const std::string& name);

// Declarative layer description. Dense and conv2d layers carry parameters;
// the other kinds exist so an architecture listing can mirror a full network
// for parameter counting. Standalone activation / dropout entries attach to
// the preceding dense layer when the network is built.
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::int64_t in_dim = 0;        // dense
  std::int64_t out_dim = 0;       // dense
  std::int64_t in_channels = 0;   // conv2d
  std::int64_t out_channels = 0;  // conv2d
  std::int64_t kernel = 0;        // conv2d, square kernels
  bool trainable = true;          // defaults false for pool/flatten/activation/dropout
  Activation activation = Activation::identity;  // dense execution
  double rate = 0.0;                              // dropout
};

// Parameters contributed by one layer. Zero for non-trainable kinds.
std::uint64_t count_params(const LayerSpec& layer);

struct ArchitectureSpec {
  std::vector<LayerSpec> layers;
  // 1-based index over trainable layers; the cut layer and everything after
  // it form the trainable head, everything before it the frozen extractor.
  int cut_index = 1;
  int bit_width = 32;

  std::vector<const LayerSpec*> trainable_layers() const;
  void validate() const;
};

ArchitectureSpec parse_architecture(const nlohmann::json& j);
ArchitectureSpec load_architecture(const std::string& path);
nlohmann::json architecture_to_json(const ArchitectureSpec& arch);

std::uint64_t total_params(const ArchitectureSpec& arch);
// Sum over trainable layers with index >= from_trainable_index (1-based).
std::uint64_t total_params_from(const ArchitectureSpec& arch, int from_trainable_index);
// Output width of the trainable layer just below the cut (the feature the
// extractor hands to the head). Requires cut_index >= 2.
std::uint64_t feature_dim_at_cut(const ArchitectureSpec& arch);

// Materializes a trainable network. Only dense layers are executable; conv2d,
// pool and flatten specs are rejected here. Weights and biases start uniform
// in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
DenseNet build_dense_net(const ArchitectureSpec& arch, Rng& rng);

struct SplitModel {
  DenseNet extractor;  // frozen part, layers before the cut
  DenseNet head;       // trainable part, cut layer onward
  int cut_index = 1;
};

// Copies the extractor layers out of a pretrained network and initializes a
// fresh head from the architecture. The pretrained network must agree with
// the architecture below the cut.
SplitModel split_at(const ArchitectureSpec& arch, const DenseNet& pretrained, Rng& head_rng);

DenseNet concat(const SplitModel& split);

Eigen::VectorXd extract_features(const SplitModel& split, const Eigen::VectorXd& x);
Eigen::MatrixXd extract_features_batch(const SplitModel& split, const Eigen::MatrixXd& X);

// FNV-1a over the raw parameter bytes; equal iff parameters are bit-identical.
std::uint64_t param_checksum(const DenseNet& net);

}  // namespace fbftl
