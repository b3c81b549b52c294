#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fbftl/data.hpp"
#include "fbftl/model_split.hpp"
#include "fbftl/payload.hpp"

namespace fbftl {

// Ledger of everything that crossed the (simulated) network. client_id is -1
// for broadcasts. Totals only ever grow.
struct MeterEvent {
  int round = 0;
  int client_id = -1;
  bool uplink = false;
  std::uint64_t bits = 0;
};

class CommMeter {
 public:
  void add_uplink(int round, int client_id, std::uint64_t bits);
  void add_downlink(int round, std::uint64_t bits);
  std::uint64_t uplink_total() const { return uplink_total_; }
  std::uint64_t downlink_total() const { return downlink_total_; }
  std::uint64_t uplink_events() const { return uplink_events_; }
  const std::vector<MeterEvent>& events() const { return events_; }

 private:
  std::vector<MeterEvent> events_;
  std::uint64_t uplink_total_ = 0;
  std::uint64_t downlink_total_ = 0;
  std::uint64_t uplink_events_ = 0;
};

// round(U*C) distinct client ids, uniform without replacement.
std::vector<int> sample_clients(int num_clients, double fraction, Rng& rng);

// Uniformly permutes the contents and drops the client ids; the returned
// values carry no identifier by construction.
template <typename T>
std::vector<T> shuffle_and_strip(const std::vector<std::pair<int, T>>& uploads, Rng& rng) {
  if (uploads.empty()) throw std::invalid_argument("shuffle_and_strip: empty upload list");
  std::vector<T> contents;
  contents.reserve(uploads.size());
  for (const auto& [id, content] : uploads) contents.push_back(content);
  rng.shuffle(contents);
  return contents;
}

struct FederationConfig {
  Method method = Method::fl;
  int num_clients = 0;           // U
  double client_fraction = 1.0;  // C
  int samples_per_client = 0;    // K_u
  OptimizerConfig optimizer;
  int max_rounds = 100;
  int patience = 0;  // early stop after this many rounds without val improvement; 0 disables
  std::uint64_t seed = 0;
  int ps_batch_size = 32;        // feature-sharing PS training only
  bool matched_batching = false; // feature batches mirror FedAvg client sampling
  bool meter_label_bits = false; // add ceil(log2 N) bits per uploaded sample
  bool meter_count_bits = false; // add 32 bits per client-round for the K_u integer
  bool record_trajectory = false;

  void validate() const;
};

// A prepared experiment: target data split and partitioned, source model
// trained when the method needs one.
struct SimData {
  ArchitectureSpec arch;
  DenseNet source_net;  // empty for from-scratch training
  bool has_source = false;
  Eigen::MatrixXd train_X;
  std::vector<int> train_y;
  std::vector<std::vector<int>> client_samples;  // row indices into train_X per client
  Eigen::MatrixXd val_X;
  std::vector<int> val_y;
  Eigen::MatrixXd test_X;
  std::vector<int> test_y;
  int num_classes = 0;
};

struct RoundMetrics {
  int round = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  std::uint64_t cum_uplink_bits = 0;
  std::uint64_t cum_downlink_bits = 0;
};

struct RunResult {
  Method method = Method::fl;
  ParamVector final_params;  // trainable parameters only
  CommMeter meter;
  std::vector<RoundMetrics> trace;
  std::vector<ParamVector> trajectory;  // filled when record_trajectory
  int rounds = 0;
  bool early_stopped = false;
  double test_accuracy = 0.0;
  std::uint64_t analytic_uplink = 0;
  std::uint64_t analytic_downlink = 0;
  bool meter_matches_analytic = false;
  std::uint64_t frozen_checksum_before = 0;  // extractor, frozen methods only
  std::uint64_t frozen_checksum_after = 0;
};

// FL / FTL_f / FTL_c under FedAvg rounds. Per round: full-model broadcast,
// round(U*C) clients each upload the sum of their per-sample gradients, the
// PS applies one optimizer step on the unweighted sum.
RunResult run_fedavg(const SimData& sim, const FederationConfig& config);

// The one-shot upload phase: extractor broadcast, then every sample of every
// client crosses the wire once as (feature, label).
struct FeatureStore {
  Eigen::MatrixXd features;  // one uploaded sample per row, post-shuffle order
  std::vector<int> labels;
  // Keys for the deterministic dropout masks: original train-set row ids
  // under matched batching, store row ids otherwise.
  std::vector<int> sample_ids;
  // Populated only under matched batching, where the PS replays FedAvg's
  // client grouping; anonymized uploads leave it empty.
  std::vector<std::vector<int>> client_rows;
  CommMeter meter;
  SplitModel split;
  std::uint64_t extractor_checksum = 0;
};

FeatureStore collect_uploads(const SimData& sim, const FederationConfig& config);

// PS-side training over an existing store. Touches no network: the result's
// meter is a copy of the store's. Repeated calls with different
// hyper-parameters reuse the same uploads.
RunResult train_from_features(const FeatureStore& store, const SimData& sim,
                              const FederationConfig& config);

RunResult run_fbftl(const SimData& sim, const FederationConfig& config);

struct EquivalenceResult {
  RunResult gradient_run;  // FTL_c through FedAvg
  RunResult feature_run;   // FbFTL, matched batching
  double max_param_deviation = 0.0;
  bool accuracies_identical = false;
  std::vector<double> test_accuracy_gradient;  // per round
  std::vector<double> test_accuracy_feature;
  int rounds = 0;
};

// Runs both protocols from one seed with matched batching and compares the
// head-parameter trajectories round by round.
EquivalenceResult run_matched_equivalence(const SimData& sim, const FederationConfig& config);

// Closed-form totals for a finished run, honoring the metering flags.
std::uint64_t analytic_uplink(const SimData& sim, const FederationConfig& config,
                              std::uint64_t batches);
std::uint64_t analytic_downlink(const SimData& sim, const FederationConfig& config,
                                std::uint64_t rounds_or_batches);

}  // namespace fbftl
