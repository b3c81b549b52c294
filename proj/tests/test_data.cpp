#include "doctest.h"

#include <Eigen/Dense>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "fbftl/data.hpp"
#include "fbftl/errors.hpp"
#include "fbftl/nn_core.hpp"
#include "fbftl/rng.hpp"

using namespace fbftl;

namespace {

const std::string kFixture = std::string(FBFTL_SOURCE_DIR) + "/fixtures/beans_sample.csv";

struct TempCsv {
  std::string path;
  explicit TempCsv(const std::string& content) {
    path = std::string("/tmp/fbftl_test_") + std::to_string(::getpid()) + "_" +
           std::to_string(counter()++) + ".csv";
    std::ofstream out(path);
    out << content;
  }
  ~TempCsv() { std::remove(path.c_str()); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

}  // namespace

TEST_CASE("fixture corpus loads with 16 attributes and 7 classes") {
  const Dataset data = load_csv(kFixture);
  CHECK(data.dim() == 16);
  CHECK(data.num_classes() == 7);
  CHECK(data.size() == 245);
  const auto counts = data.class_counts();
  for (Eigen::Index c : counts) CHECK(c == 35);
  // class names come out in sorted order
  CHECK(data.class_names.front() == "BARBUNYA");
  CHECK(data.class_names.back() == "SIRA");
  for (int label : data.labels) {
    CHECK(label >= 0);
    CHECK(label < 7);
  }
}

TEST_CASE("expected class list pins the label indexing") {
  const std::vector<std::string> expected = {"BARBUNYA", "BOMBAY", "CALI", "DERMASON",
                                             "HOROZ",    "SEKER",  "SIRA"};
  const Dataset data = load_csv(kFixture, expected);
  CHECK(data.class_names == expected);
  const std::vector<std::string> wrong = {"A", "B"};
  CHECK_THROWS_AS(load_csv(kFixture, wrong), config_error);
}

TEST_CASE("single-row file is a valid dataset") {
  TempCsv csv("a,b,label\n1.5,2.5,yes\n");
  const Dataset data = load_csv(csv.path);
  CHECK(data.size() == 1);
  CHECK(data.dim() == 2);
  CHECK(data.features(0, 0) == 1.5);
  CHECK(data.features(0, 1) == 2.5);
  CHECK(data.class_names == std::vector<std::string>{"yes"});
}

TEST_CASE("empty and header-only files are rejected") {
  TempCsv empty("");
  CHECK_THROWS_AS(load_csv(empty.path), config_error);
  TempCsv header_only("a,b,label\n");
  CHECK_THROWS_AS(load_csv(header_only.path), config_error);
  CHECK_THROWS_AS(load_csv("/nonexistent/nope.csv"), config_error);
}

TEST_CASE("malformed rows are reported with their line number") {
  TempCsv bad("a,b,label\n1.0,2.0,x\n1.0,oops,x\n");
  try {
    load_csv(bad.path);
    FAIL("expected a parse error");
  } catch (const config_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":3") != std::string::npos);  // 1-based line of the bad row
  }
  TempCsv short_row("a,b,label\n1.0,x\n");
  CHECK_THROWS_AS(load_csv(short_row.path), config_error);
}

TEST_CASE("train/test split hits the rounded sizes and partitions exactly") {
  Rng gen = derive_rng(44, "data_gen");
  const Dataset data = synth_gaussian_mixture(4, 6, 1755, 2.0, gen);  // 7020 samples
  Rng split_rng = derive_rng(44, "split_target");
  const auto [train, test] = split_train_test(data, 1.0 / 3.0, split_rng);
  CHECK(train.size() == 4680);
  CHECK(test.size() == 2340);
  CHECK(train.dim() == data.dim());
  // zero fraction keeps everything on the first side
  Rng rng0 = derive_rng(44, "split_val");
  const auto [all_train, none] = split_train_test(data, 0.0, rng0);
  CHECK(all_train.size() == 7020);
  CHECK(none.size() == 0);
}

TEST_CASE("identical seeds reproduce the split exactly") {
  Rng gen = derive_rng(45, "data_gen");
  const Dataset data = synth_gaussian_mixture(3, 4, 50, 1.0, gen);
  Rng a = derive_rng(9, "split_target");
  Rng b = derive_rng(9, "split_target");
  const auto [ta, sa] = split_train_test(data, 0.25, a);
  const auto [tb, sb] = split_train_test(data, 0.25, b);
  CHECK((ta.features - tb.features).cwiseAbs().maxCoeff() == 0.0);
  CHECK(ta.labels == tb.labels);
  CHECK((sa.features - sb.features).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("client partition deals disjoint full batches") {
  Rng gen = derive_rng(46, "data_gen");
  const Dataset data = synth_gaussian_mixture(4, 5, 1250, 1.0, gen);  // 5000 rows
  Rng part = derive_rng(46, "partition");
  const auto clients = partition_clients(data, 1176, 4, part);
  REQUIRE(clients.size() == 1176);
  std::set<int> seen;
  for (const auto& rows : clients) {
    CHECK(rows.size() == 4);
    for (int r : rows) {
      CHECK(r >= 0);
      CHECK(r < 5000);
      CHECK(seen.insert(r).second);  // disjointness
    }
  }
  CHECK(seen.size() == 4704);
}

TEST_CASE("large partition consumes exactly fifty thousand rows") {
  Rng gen = derive_rng(47, "data_gen");
  const Dataset data = synth_gaussian_mixture(10, 3, 5000, 1.0, gen);  // 50000 rows
  Rng part = derive_rng(47, "partition");
  const auto clients = partition_clients(data, 6250, 8, part);
  REQUIRE(clients.size() == 6250);
  std::size_t total = 0;
  for (const auto& rows : clients) total += rows.size();
  CHECK(total == 50000);
}

TEST_CASE("partition rejects an over-subscribed client grid") {
  Rng gen = derive_rng(48, "data_gen");
  const Dataset data = synth_gaussian_mixture(2, 3, 10, 1.0, gen);  // 20 rows
  Rng part = derive_rng(48, "partition");
  CHECK_THROWS_AS(partition_clients(data, 6, 4, part), config_error);
}

TEST_CASE("oversample lifts minorities to the majority count") {
  Rng gen = derive_rng(49, "data_gen");
  Dataset data = synth_gaussian_mixture(2, 3, 10, 1.0, gen);
  // drop most of class 1: keep rows 0..9 (class 0) and 10..11 (class 1)
  std::vector<int> keep;
  for (int i = 0; i < 12; ++i) keep.push_back(i);
  data = subset(data, keep);
  Rng rng = derive_rng(49, "partition");
  const Dataset balanced = rebalance(data, RebalanceStrategy::oversample, rng);
  const auto counts = balanced.class_counts();
  CHECK(counts[0] == 10);
  CHECK(counts[1] == 10);
  CHECK(balanced.num_classes() == 2);
}

TEST_CASE("undersample trims to the minority count") {
  Rng gen = derive_rng(50, "data_gen");
  Dataset data = synth_gaussian_mixture(2, 3, 10, 1.0, gen);
  std::vector<int> keep;
  for (int i = 0; i < 13; ++i) keep.push_back(i);
  data = subset(data, keep);  // counts {10, 3}
  Rng rng = derive_rng(50, "partition");
  const Dataset balanced = rebalance(data, RebalanceStrategy::undersample, rng);
  const auto counts = balanced.class_counts();
  CHECK(counts[0] == 3);
  CHECK(counts[1] == 3);
}

TEST_CASE("already balanced data passes through unchanged in counts") {
  Rng gen = derive_rng(51, "data_gen");
  const Dataset data = synth_gaussian_mixture(3, 3, 8, 1.0, gen);
  Rng rng = derive_rng(51, "partition");
  const Dataset over = rebalance(data, RebalanceStrategy::oversample, rng);
  CHECK(over.size() == data.size());
  const Dataset under = rebalance(data, RebalanceStrategy::undersample, rng);
  CHECK(under.size() == data.size());
}

TEST_CASE("merge folds classes and reindexes") {
  Rng gen = derive_rng(52, "data_gen");
  const Dataset data = synth_gaussian_mixture(3, 3, 5, 1.0, gen);
  Rng rng = derive_rng(52, "partition");
  const Dataset merged = rebalance(data, RebalanceStrategy::merge, rng, {{2, 0}});
  CHECK(merged.num_classes() == 2);
  CHECK(merged.size() == 15);
  const auto counts = merged.class_counts();
  CHECK(counts[0] == 10);  // classes 0 and 2 folded together
  CHECK(counts[1] == 5);
  // merge targets must exist and must not themselves be merged away
  CHECK_THROWS_AS(rebalance(data, RebalanceStrategy::merge, rng, {{2, 9}}), config_error);
  CHECK_THROWS_AS(rebalance(data, RebalanceStrategy::merge, rng, {{9, 0}}), config_error);
}

TEST_CASE("standardizer statistics come from the fitted matrix only") {
  Rng gen = derive_rng(53, "data_gen");
  const Dataset data = synth_gaussian_mixture(4, 7, 200, 3.0, gen);
  const Standardizer st = Standardizer::fit(data.features);
  const Eigen::MatrixXd Z = st.apply(data.features);
  for (Eigen::Index c = 0; c < Z.cols(); ++c) {
    const double mean = Z.col(c).mean();
    const double var = (Z.col(c).array() - mean).square().sum() / static_cast<double>(Z.rows());
    CHECK(std::abs(mean) < 1e-9);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }
  // constant features pass through centered, not divided by zero
  Eigen::MatrixXd constant = Eigen::MatrixXd::Constant(10, 2, 5.0);
  const Standardizer cst = Standardizer::fit(constant);
  const Eigen::MatrixXd CZ = cst.apply(constant);
  CHECK(CZ.cwiseAbs().maxCoeff() == 0.0);
  CHECK(cst.scale(0) == 1.0);
}

TEST_CASE("well separated blobs are linearly learnable, unseparated are chance") {
  Rng gen = derive_rng(54, "data_gen");
  const Dataset easy = synth_gaussian_mixture(2, 4, 300, 10.0, gen);
  Rng split_rng = derive_rng(54, "split_target");
  const auto [train, test] = split_train_test(easy, 0.25, split_rng);
  const Standardizer st = Standardizer::fit(train.features);
  const Eigen::MatrixXd Xtr = st.apply(train.features);
  const Eigen::MatrixXd Xte = st.apply(test.features);

  DenseNet net;
  DenseLayer out;
  out.weights = Eigen::MatrixXd::Zero(2, 4);
  out.bias = Eigen::VectorXd::Zero(2);
  net.layers.push_back(out);
  OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  OptimizerState state = OptimizerState::make(cfg, static_cast<Eigen::Index>(net.param_count()));
  ParamVector theta = pack_params(net);
  for (int epoch = 0; epoch < 30; ++epoch) {
    GradientVector g = GradientVector::Zero(theta.size());
    for (Eigen::Index r = 0; r < Xtr.rows(); ++r)
      g += backward(net, Xtr.row(r).transpose(), train.labels[static_cast<std::size_t>(r)]);
    g /= static_cast<double>(Xtr.rows());
    theta = optimizer_step(state, theta, g);
    unpack_params(net, theta);
  }
  CHECK(accuracy(net, Xte, test.labels) >= 0.99);

  Rng gen0 = derive_rng(55, "data_gen");
  const Dataset flat = synth_gaussian_mixture(4, 4, 500, 0.0, gen0);
  // with zero separation every class is the same blob; a majority guess is chance
  DenseNet zero;
  DenseLayer z0;
  z0.weights = Eigen::MatrixXd::Zero(4, 4);
  z0.bias = Eigen::VectorXd::Zero(4);
  zero.layers.push_back(z0);
  const double acc = accuracy(zero, flat.features, flat.labels);
  CHECK(acc == doctest::Approx(0.25).epsilon(0.2));  // ties break to class 0; counts are equal
}

TEST_CASE("generator is seed-deterministic and validates its arguments") {
  Rng a = derive_rng(56, "data_gen");
  Rng b = derive_rng(56, "data_gen");
  const Dataset da = synth_gaussian_mixture(3, 5, 20, 2.0, a);
  const Dataset db = synth_gaussian_mixture(3, 5, 20, 2.0, b);
  CHECK((da.features - db.features).cwiseAbs().maxCoeff() == 0.0);
  CHECK(da.labels == db.labels);
  Rng c = derive_rng(56, "data_gen");
  CHECK_THROWS_AS(synth_gaussian_mixture(3, 5, 0, 2.0, c), config_error);
  CHECK_THROWS_AS(synth_gaussian_mixture(0, 5, 10, 2.0, c), std::invalid_argument);
}

TEST_CASE("transfer split separates class sets and reindexes labels") {
  const Dataset data = load_csv(kFixture);
  const TransferSplit ts = make_transfer_split(data, {4, 5, 6}, {0, 1, 2, 3});
  CHECK(ts.source.num_classes() == 3);
  CHECK(ts.target.num_classes() == 4);
  CHECK(ts.source.size() == 105);
  CHECK(ts.target.size() == 140);
  CHECK(ts.source.class_names == std::vector<std::string>{"HOROZ", "SEKER", "SIRA"});
  CHECK(ts.target.class_names ==
        std::vector<std::string>{"BARBUNYA", "BOMBAY", "CALI", "DERMASON"});
  for (int label : ts.source.labels) {
    CHECK(label >= 0);
    CHECK(label < 3);
  }
  CHECK_THROWS_AS(make_transfer_split(data, {0, 1}, {1, 2}), config_error);
  CHECK_THROWS_AS(make_transfer_split(data, {}, {0}), config_error);
  CHECK_THROWS_AS(make_transfer_split(data, {0, 9}, {1}), config_error);
}

TEST_CASE("subset keeps the selected rows in order") {
  const Dataset data = load_csv(kFixture);
  const Dataset s = subset(data, {5, 0, 44});
  REQUIRE(s.size() == 3);
  CHECK((s.features.row(0) - data.features.row(5)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((s.features.row(1) - data.features.row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.labels[0] == data.labels[5]);
  CHECK(s.labels[2] == data.labels[44]);
  CHECK_THROWS_AS(subset(data, {-1}), std::invalid_argument);
  CHECK_THROWS_AS(subset(data, {100000}), std::invalid_argument);
}
