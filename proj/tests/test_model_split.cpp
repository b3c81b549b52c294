#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "json.hpp"

#include "fbftl/errors.hpp"
#include "fbftl/model_split.hpp"
#include "fbftl/rng.hpp"

using namespace fbftl;
using nlohmann::json;

namespace {

json drybean_arch_json() {
  return json::parse(R"({
    "bit_width": 32,
    "cut_index": 2,
    "layers": [
      {"kind": "dense", "in": 16, "out": 100, "activation": "relu"},
      {"kind": "dense", "in": 100, "out": 100, "activation": "sigmoid", "dropout": 0.1},
      {"kind": "dense", "in": 100, "out": 4}
    ]
  })");
}

}  // namespace

TEST_CASE("per-layer parameter counts") {
  LayerSpec dense;
  dense.kind = LayerKind::dense;
  dense.in_dim = 16;
  dense.out_dim = 100;
  CHECK(count_params(dense) == 1700);

  dense.in_dim = 100;
  dense.out_dim = 4;
  CHECK(count_params(dense) == 404);

  LayerSpec conv;
  conv.kind = LayerKind::conv2d;
  conv.in_channels = 3;
  conv.out_channels = 64;
  conv.kernel = 3;
  CHECK(count_params(conv) == 1792);

  LayerSpec pool;
  pool.kind = LayerKind::pool;
  pool.trainable = false;
  CHECK(count_params(pool) == 0);
  LayerSpec drop;
  drop.kind = LayerKind::dropout;
  drop.trainable = false;
  drop.rate = 0.5;
  CHECK(count_params(drop) == 0);

  // a frozen dense layer still counts zero trainable parameters
  LayerSpec frozen = dense;
  frozen.trainable = false;
  CHECK(count_params(frozen) == 0);
}

TEST_CASE("three-layer bean architecture totals") {
  const ArchitectureSpec arch = parse_architecture(drybean_arch_json());
  CHECK(total_params(arch) == 12204);
  CHECK(total_params_from(arch, 1) == 12204);
  CHECK(total_params_from(arch, 2) == 10504);
  CHECK(total_params_from(arch, 3) == 404);
  CHECK(feature_dim_at_cut(arch) == 100);

  ArchitectureSpec empty;
  empty.layers.clear();
  CHECK(total_params(empty) == 0);
}

TEST_CASE("conv totals accumulate alongside dense layers") {
  json j = json::parse(R"({
    "bit_width": 32,
    "cut_index": 2,
    "layers": [
      {"kind": "conv2d", "in_channels": 3, "out_channels": 64, "kernel": 3},
      {"kind": "pool"},
      {"kind": "flatten"},
      {"kind": "dense", "in": 256, "out": 10, "activation": "relu"},
      {"kind": "dense", "in": 10, "out": 5}
    ]
  })");
  const ArchitectureSpec arch = parse_architecture(j);
  CHECK(total_params(arch) == 1792 + 2570 + 55);
  CHECK(total_params_from(arch, 2) == 2570 + 55);
  CHECK(total_params_from(arch, 3) == 55);
  CHECK(feature_dim_at_cut(arch) == 256);
}

TEST_CASE("architecture file round-trips through json") {
  const ArchitectureSpec arch = parse_architecture(drybean_arch_json());
  const json dumped = architecture_to_json(arch);
  const ArchitectureSpec again = parse_architecture(dumped);
  CHECK(total_params(again) == total_params(arch));
  CHECK(again.cut_index == arch.cut_index);
  CHECK(again.bit_width == arch.bit_width);
  CHECK(again.layers.size() == arch.layers.size());
  CHECK(again.layers[1].rate == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("shipped architecture file loads") {
  const ArchitectureSpec arch =
      load_architecture(std::string(FBFTL_SOURCE_DIR) + "/configs/arch/drybean_mlp.json");
  CHECK(total_params(arch) == 12204);
  CHECK(total_params_from(arch, arch.cut_index) == 10504);
  CHECK(feature_dim_at_cut(arch) == 100);
}

TEST_CASE("missing cut index or bad cut target is rejected") {
  json no_cut = drybean_arch_json();
  no_cut.erase("cut_index");
  CHECK_THROWS_AS(parse_architecture(no_cut), config_error);

  json bad_cut = drybean_arch_json();
  bad_cut["cut_index"] = 9;
  CHECK_THROWS_AS(parse_architecture(bad_cut), config_error);
  bad_cut["cut_index"] = 0;
  CHECK_THROWS_AS(parse_architecture(bad_cut), config_error);

  // cut must land on a dense layer
  json conv_cut = json::parse(R"({
    "bit_width": 32,
    "cut_index": 1,
    "layers": [
      {"kind": "conv2d", "in_channels": 3, "out_channels": 8, "kernel": 3},
      {"kind": "dense", "in": 32, "out": 4}
    ]
  })");
  CHECK_THROWS_AS(parse_architecture(conv_cut), config_error);
}

TEST_CASE("built net matches declared dims and init bounds") {
  const ArchitectureSpec arch = parse_architecture(drybean_arch_json());
  Rng rng = derive_rng(5, "model_init");
  const DenseNet net = build_dense_net(arch, rng);
  REQUIRE(net.layers.size() == 3);
  CHECK(net.input_dim() == 16);
  CHECK(net.output_dim() == 4);
  CHECK(net.param_count() == 12204);
  CHECK(net.layers[1].dropout == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(net.layers[0].activation == Activation::relu);
  CHECK(net.layers[1].activation == Activation::sigmoid);
  const double bound0 = 1.0 / 4.0;  // 1/sqrt(16)
  CHECK(net.layers[0].weights.cwiseAbs().maxCoeff() <= bound0);
  CHECK(net.layers[0].bias.cwiseAbs().maxCoeff() <= bound0);
  const double bound1 = 1.0 / 10.0;
  CHECK(net.layers[1].weights.cwiseAbs().maxCoeff() <= bound1);
  // init actually spreads: something must land beyond half the bound
  CHECK(net.layers[0].weights.cwiseAbs().maxCoeff() > bound0 / 2.0);
}

TEST_CASE("conv layers cannot be materialized") {
  json j = json::parse(R"({
    "bit_width": 32,
    "cut_index": 2,
    "layers": [
      {"kind": "conv2d", "in_channels": 3, "out_channels": 8, "kernel": 3},
      {"kind": "dense", "in": 32, "out": 10},
      {"kind": "dense", "in": 10, "out": 4}
    ]
  })");
  const ArchitectureSpec arch = parse_architecture(j);
  Rng rng(3);
  CHECK_THROWS_AS(build_dense_net(arch, rng), config_error);
}

TEST_CASE("split copies the extractor and refreshes the head") {
  const ArchitectureSpec arch = parse_architecture(drybean_arch_json());
  Rng init = derive_rng(5, "model_init");
  const DenseNet pretrained = build_dense_net(arch, init);
  Rng head_rng = derive_rng(5, "head_init");
  const SplitModel split = split_at(arch, pretrained, head_rng);

  CHECK(split.extractor.param_count() == 1700);
  CHECK(split.head.param_count() == 10504);
  CHECK(split.extractor.param_count() + split.head.param_count() == pretrained.param_count());
  CHECK((split.extractor.layers[0].weights - pretrained.layers[0].weights)
            .cwiseAbs()
            .maxCoeff() == 0.0);
  // the head re-initializes rather than copying
  CHECK((split.head.layers[0].weights - pretrained.layers[1].weights).cwiseAbs().maxCoeff() >
        0.0);
  CHECK(param_checksum(split.extractor) != param_checksum(pretrained));
}

TEST_CASE("recombined split reproduces the stitched model exactly") {
  const ArchitectureSpec arch = parse_architecture(drybean_arch_json());
  Rng init = derive_rng(11, "model_init");
  const DenseNet pretrained = build_dense_net(arch, init);
  Rng head_rng = derive_rng(11, "head_init");
  const SplitModel split = split_at(arch, pretrained, head_rng);
  const DenseNet stitched = concat(split);
  Rng xs(77);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd x(16);
    for (int i = 0; i < 16; ++i) x(i) = xs.normal();
    const Eigen::VectorXd via_split = forward(split.head, extract_features(split, x));
    const Eigen::VectorXd direct = forward(stitched, x);
    CHECK((via_split - direct).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("feature width matches the cut layer input") {
  const ArchitectureSpec arch = parse_architecture(drybean_arch_json());
  Rng init = derive_rng(2, "model_init");
  const DenseNet pretrained = build_dense_net(arch, init);
  Rng head_rng = derive_rng(2, "head_init");
  const SplitModel split = split_at(arch, pretrained, head_rng);
  Eigen::VectorXd x = Eigen::VectorXd::Ones(16);
  CHECK(extract_features(split, x).size() == 100);
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(5, 16);
  const Eigen::MatrixXd Z = extract_features_batch(split, X);
  CHECK(Z.rows() == 5);
  CHECK(Z.cols() == 100);
  for (Eigen::Index r = 0; r < 5; ++r)
    CHECK((Z.row(r).transpose() - extract_features(split, x)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("checksum is order and value sensitive") {
  const ArchitectureSpec arch = parse_architecture(drybean_arch_json());
  Rng init = derive_rng(21, "model_init");
  DenseNet a = build_dense_net(arch, init);
  DenseNet b = a;
  CHECK(param_checksum(a) == param_checksum(b));
  b.layers[2].bias(0) = std::nextafter(b.layers[2].bias(0), 1e300);  // one-ulp flip
  CHECK(param_checksum(a) != param_checksum(b));
}

TEST_CASE("split at the first layer degenerates to a fully trainable model") {
  json j = drybean_arch_json();
  j["cut_index"] = 1;
  const ArchitectureSpec arch = parse_architecture(j);
  CHECK(total_params_from(arch, arch.cut_index) == 12204);
  Rng init = derive_rng(31, "model_init");
  const DenseNet pretrained = build_dense_net(arch, init);
  Rng head_rng = derive_rng(31, "head_init");
  const SplitModel split = split_at(arch, pretrained, head_rng);
  CHECK(split.extractor.param_count() == 0);
  CHECK(split.head.param_count() == 12204);
}

TEST_CASE("split rejects a pretrained net that disagrees below the cut") {
  const ArchitectureSpec arch = parse_architecture(drybean_arch_json());
  json other = drybean_arch_json();
  other["layers"][0]["out"] = 64;
  other["layers"][1]["in"] = 64;
  const ArchitectureSpec narrow = parse_architecture(other);
  Rng init = derive_rng(41, "model_init");
  const DenseNet pretrained = build_dense_net(narrow, init);
  Rng head_rng = derive_rng(41, "head_init");
  CHECK_THROWS_AS(split_at(arch, pretrained, head_rng), config_error);
}
