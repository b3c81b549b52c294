#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fbftl/errors.hpp"
#include "fbftl/rng.hpp"

namespace fbftl {

struct Dataset {
  Eigen::MatrixXd features;  // one sample per row
  std::vector<int> labels;   // 0 .. num_classes-1
  std::vector<std::string> class_names;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::vector<Eigen::Index> class_counts() const;
};

// CSV with a header row; every column but the last is a numeric feature, the
// last column is the class label. When expected_classes is given, rows with
// any other label are rejected; otherwise classes are indexed in sorted name
// order.
Dataset load_csv(const std::string& path,
                 const std::vector<std::string>& expected_classes = {});

// Per-feature zero-mean unit-variance transform. Constant features get
// scale 1 so they pass through centered.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& X);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
};

// Shuffles, then carves off round(test_fraction * n) samples for the second
// part. Both parts keep the class name table.
std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double test_fraction,
                                             Rng& rng);

// Deals samples to num_clients clients, samples_per_client each, without
// replacement. Requires num_clients * samples_per_client <= data size.
std::vector<std::vector<int>> partition_clients(const Dataset& data, int num_clients,
                                                int samples_per_client, Rng& rng);

enum class RebalanceStrategy { oversample, undersample, merge };

// oversample: draw with replacement inside each minority class up to the
// majority count. undersample: keep a without-replacement subset of each
// class at the minority count. merge: fold classes together per merge_map
// (old index -> old index it joins), then reindex.
Dataset rebalance(const Dataset& data, RebalanceStrategy strategy, Rng& rng,
                  const std::map<int, int>& merge_map = {});

// Gaussian blobs: class c is centered at separation * (1 + c / dim) along
// axis c % dim with unit covariance.
Dataset synth_gaussian_mixture(int classes, int dim, int per_class, double separation,
                               Rng& rng);

struct TransferSplit {
  Dataset source;
  Dataset target;
};

// Partitions a dataset into disjoint source / target tasks by class. Labels
// are reindexed within each side following the order given here.
TransferSplit make_transfer_split(const Dataset& data, const std::vector<int>& source_classes,
                                  const std::vector<int>& target_classes);

Dataset subset(const Dataset& data, const std::vector<int>& rows);

}  // namespace fbftl
