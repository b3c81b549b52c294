#include "fbftl/fed_sim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fbftl {

void CommMeter::add_uplink(int round, int client_id, std::uint64_t bits) {
  events_.push_back({round, client_id, true, bits});
  uplink_total_ += bits;
  uplink_events_ += 1;
}

void CommMeter::add_downlink(int round, std::uint64_t bits) {
  events_.push_back({round, -1, false, bits});
  downlink_total_ += bits;
}

std::vector<int> sample_clients(int num_clients, double fraction, Rng& rng) {
  if (num_clients < 1) throw std::invalid_argument("sample_clients: need at least one client");
  if (fraction <= 0.0 || fraction > 1.0)
    throw std::invalid_argument("sample_clients: fraction must be in (0, 1]");
  const long long n = std::llround(fraction * static_cast<double>(num_clients));
  if (n < 1)
    throw config_error("sample_clients: round(U*C) must be at least 1");
  std::vector<int> ids = rng.sample_without_replacement(num_clients, static_cast<int>(n));
  std::sort(ids.begin(), ids.end());
  return ids;
}

void FederationConfig::validate() const {
  if (num_clients < 1) throw config_error("federation: num_clients must be >= 1");
  if (client_fraction <= 0.0 || client_fraction > 1.0)
    throw config_error("federation: client_fraction must be in (0, 1]");
  if (std::llround(client_fraction * num_clients) < 1)
    throw config_error("federation: round(U*C) must be >= 1");
  if (samples_per_client < 1) throw config_error("federation: samples_per_client must be >= 1");
  if (max_rounds < 1) throw config_error("federation: max_rounds must be >= 1");
  if (patience < 0) throw config_error("federation: patience must be >= 0");
  if (ps_batch_size < 1) throw config_error("federation: ps_batch_size must be >= 1");
}

namespace {

int ceil_log2(int n) {
  if (n < 1) throw std::invalid_argument("ceil_log2: n must be >= 1");
  int bits = 0;
  int capacity = 1;
  while (capacity < n) {
    capacity *= 2;
    ++bits;
  }
  return bits;
}

void check_sim(const SimData& sim, const FederationConfig& config) {
  config.validate();
  sim.arch.validate();
  if (sim.train_X.rows() != static_cast<Eigen::Index>(sim.train_y.size()))
    throw config_error("sim data: train rows and labels disagree");
  if (sim.client_samples.size() != static_cast<std::size_t>(config.num_clients))
    throw config_error("sim data: partition size does not match num_clients");
  for (const auto& rows : sim.client_samples) {
    if (rows.empty()) throw config_error("sim data: client with no samples");
    for (int r : rows)
      if (r < 0 || r >= sim.train_X.rows())
        throw config_error("sim data: client sample index out of range");
  }
  if (sim.val_y.empty() || sim.test_y.empty())
    throw config_error("sim data: validation and test sets must be non-empty");
  if (sim.num_classes < 1) throw config_error("sim data: num_classes must be >= 1");
}

std::string divergence_trace(Method method, int round,
                             const std::vector<RoundMetrics>& trace) {
  std::ostringstream out;
  out << "method=" << to_string(method) << " round=" << round << " recent_losses=";
  const std::size_t n = trace.size();
  for (std::size_t i = n > 5 ? n - 5 : 0; i < n; ++i)
    out << trace[i].train_loss << (i + 1 < n ? "," : "");
  return out.str();
}

PayloadInputs inputs_for_run(const SimData& sim, const FederationConfig& config,
                             std::uint64_t batches) {
  const std::uint64_t per_round = static_cast<std::uint64_t>(
      std::llround(config.client_fraction * config.num_clients));
  PayloadInputs in = payload_inputs_from_arch(sim.arch, per_round);
  switch (config.method) {
    case Method::fl: in.batches_fl = batches; break;
    case Method::ftl_f: in.batches_ftl_f = batches; break;
    case Method::ftl_c: in.batches_ftl_c = batches; break;
    case Method::fbftl: in.batches_fbftl = batches; break;
  }
  return in;
}

// Early-stopping bookkeeping shared by both training loops.
struct Stopper {
  int patience = 0;
  double best = -1.0;
  int best_round = 0;
  bool should_stop(int round, double val_acc) {
    if (val_acc > best) {
      best = val_acc;
      best_round = round;
      return false;
    }
    return patience > 0 && round - best_round >= patience;
  }
};

}  // namespace

std::uint64_t analytic_uplink(const SimData& sim, const FederationConfig& config,
                              std::uint64_t batches) {
  const PayloadInputs in = inputs_for_run(sim, config, batches);
  std::uint64_t total = uplink_total(config.method, in);
  if (config.method == Method::fbftl) {
    if (config.meter_label_bits)
      total += batches * static_cast<std::uint64_t>(ceil_log2(sim.num_classes));
  } else if (config.meter_count_bits) {
    total += batches * 32;
  }
  return total;
}

std::uint64_t analytic_downlink(const SimData& sim, const FederationConfig& config,
                                std::uint64_t batches) {
  return downlink_total(config.method, inputs_for_run(sim, config, batches));
}

RunResult run_fedavg(const SimData& sim, const FederationConfig& config) {
  check_sim(sim, config);
  if (config.method == Method::fbftl)
    throw config_error("run_fedavg: feature sharing does not use FedAvg rounds");
  if (config.method != Method::fl && !sim.has_source)
    throw config_error("run_fedavg: transfer methods need a source model");

  const bool head_only = config.method == Method::ftl_c;
  SplitModel split;
  DenseNet full;
  if (config.method == Method::fl) {
    Rng init_rng = derive_rng(config.seed, "model_init");
    full = build_dense_net(sim.arch, init_rng);
  } else {
    Rng head_rng = derive_rng(config.seed, "head_init");
    split = split_at(sim.arch, sim.source_net, head_rng);
    if (!head_only) full = concat(split);
  }
  DenseNet& model = head_only ? split.head : full;

  RunResult result;
  result.method = config.method;
  if (head_only) result.frozen_checksum_before = param_checksum(split.extractor);

  const PayloadInputs arch_in = payload_inputs_from_arch(sim.arch);
  const std::uint64_t d = static_cast<std::uint64_t>(sim.arch.bit_width);
  const std::uint64_t broadcast_bits = d * arch_in.params_full;
  std::uint64_t upload_bits = d * params_per_batch(config.method, arch_in);
  if (config.meter_count_bits) upload_bits += 32;

  // Frozen-path evaluation reuses the extractor output; full-path evaluation
  // runs the whole network.
  Eigen::MatrixXd val_in = head_only ? extract_features_batch(split, sim.val_X) : sim.val_X;
  Eigen::MatrixXd test_in = head_only ? extract_features_batch(split, sim.test_X) : sim.test_X;

  ParamVector theta = pack_params(model);
  OptimizerState opt = OptimizerState::make(config.optimizer, theta.size());
  Rng client_rng = derive_rng(config.seed, "client_sampling");
  Stopper stopper{config.patience};

  for (int round = 1; round <= config.max_rounds; ++round) {
    result.meter.add_downlink(round, broadcast_bits);
    const std::vector<int> ids =
        sample_clients(config.num_clients, config.client_fraction, client_rng);

    GradientVector total_grad = GradientVector::Zero(theta.size());
    double loss_sum = 0.0;
    std::size_t sample_count = 0;
    for (int id : ids) {
      GradientVector client_grad = GradientVector::Zero(theta.size());
      for (int s : sim.client_samples[static_cast<std::size_t>(id)]) {
        const Eigen::VectorXd x = sim.train_X.row(s).transpose();
        const int label = sim.train_y[static_cast<std::size_t>(s)];
        const DropoutPlan plan{true, config.seed, static_cast<std::uint64_t>(round),
                               static_cast<std::uint64_t>(s)};
        double loss = 0.0;
        if (head_only) {
          const Eigen::VectorXd z = extract_features(split, x);
          client_grad += backward(split.head, z, label, &loss, plan);
        } else {
          client_grad += backward(model, x, label, &loss, plan);
        }
        loss_sum += loss;
        ++sample_count;
      }
      result.meter.add_uplink(round, id, upload_bits);
      total_grad += client_grad;
    }

    const double train_loss = loss_sum / static_cast<double>(sample_count);
    if (!std::isfinite(train_loss))
      throw aborted_run_error("training diverged",
                              divergence_trace(config.method, round, result.trace));
    theta = optimizer_step(opt, theta, total_grad);
    unpack_params(model, theta);

    const double val_acc = accuracy(model, val_in, sim.val_y);
    result.trace.push_back({round, train_loss, val_acc, result.meter.uplink_total(),
                            result.meter.downlink_total()});
    if (config.record_trajectory) result.trajectory.push_back(theta);
    result.rounds = round;
    if (stopper.should_stop(round, val_acc)) {
      result.early_stopped = true;
      break;
    }
  }

  result.final_params = theta;
  result.test_accuracy = accuracy(model, test_in, sim.test_y);
  const std::uint64_t per_round = result.meter.uplink_events() /
                                  static_cast<std::uint64_t>(result.rounds);
  const std::uint64_t batches = static_cast<std::uint64_t>(result.rounds) * per_round;
  result.analytic_uplink = analytic_uplink(sim, config, batches);
  result.analytic_downlink = analytic_downlink(sim, config, batches);
  result.meter_matches_analytic =
      result.meter.uplink_total() == result.analytic_uplink &&
      result.meter.downlink_total() == result.analytic_downlink;
  if (head_only) result.frozen_checksum_after = param_checksum(split.extractor);
  return result;
}

FeatureStore collect_uploads(const SimData& sim, const FederationConfig& config) {
  check_sim(sim, config);
  if (config.method != Method::fbftl)
    throw config_error("collect_uploads: configured method does not share features");
  if (!sim.has_source) throw config_error("collect_uploads: needs a source model");

  FeatureStore store;
  Rng head_rng = derive_rng(config.seed, "head_init");
  store.split = split_at(sim.arch, sim.source_net, head_rng);
  store.extractor_checksum = param_checksum(store.split.extractor);

  const PayloadInputs arch_in = payload_inputs_from_arch(sim.arch);
  const std::uint64_t d = static_cast<std::uint64_t>(sim.arch.bit_width);
  store.meter.add_downlink(0, d * (arch_in.params_full - arch_in.params_head));

  std::uint64_t upload_bits = d * arch_in.feature_dim;
  if (config.meter_label_bits)
    upload_bits += static_cast<std::uint64_t>(ceil_log2(sim.num_classes));

  struct Upload {
    Eigen::VectorXd z;
    int label;
    int sample_id;
  };
  std::vector<std::pair<int, Upload>> uploads;
  for (std::size_t id = 0; id < sim.client_samples.size(); ++id) {
    for (int s : sim.client_samples[id]) {
      Upload up;
      up.z = extract_features(store.split, sim.train_X.row(s).transpose());
      up.label = sim.train_y[static_cast<std::size_t>(s)];
      up.sample_id = s;
      store.meter.add_uplink(0, static_cast<int>(id), upload_bits);
      uploads.emplace_back(static_cast<int>(id), std::move(up));
    }
  }

  std::vector<Upload> contents;
  if (config.matched_batching) {
    // Analysis mode: keep the client grouping so PS batches can replay
    // FedAvg's selection. Nothing is anonymized here.
    store.client_rows.resize(sim.client_samples.size());
    contents.reserve(uploads.size());
    for (const auto& [id, up] : uploads) {
      store.client_rows[static_cast<std::size_t>(id)].push_back(
          static_cast<int>(contents.size()));
      contents.push_back(up);
    }
  } else {
    Rng shuffle_rng = derive_rng(config.seed, "shuffle");
    contents = shuffle_and_strip(uploads, shuffle_rng);
  }

  store.features.resize(static_cast<Eigen::Index>(contents.size()),
                        static_cast<Eigen::Index>(arch_in.feature_dim));
  store.labels.resize(contents.size());
  store.sample_ids.resize(contents.size());
  for (std::size_t i = 0; i < contents.size(); ++i) {
    store.features.row(static_cast<Eigen::Index>(i)) = contents[i].z.transpose();
    store.labels[i] = contents[i].label;
    store.sample_ids[i] = config.matched_batching ? contents[i].sample_id
                                                  : static_cast<int>(i);
  }
  return store;
}

RunResult train_from_features(const FeatureStore& store, const SimData& sim,
                              const FederationConfig& config) {
  check_sim(sim, config);
  if (config.method != Method::fbftl)
    throw config_error("train_from_features: configured method does not share features");
  if (store.labels.empty()) throw config_error("train_from_features: empty feature store");

  RunResult result;
  result.method = Method::fbftl;
  result.meter = store.meter;  // all communication happened at collection time
  result.frozen_checksum_before = store.extractor_checksum;

  DenseNet head = store.split.head;
  ParamVector theta = pack_params(head);
  OptimizerState opt = OptimizerState::make(config.optimizer, theta.size());
  Stopper stopper{config.patience};

  const Eigen::MatrixXd val_in = extract_features_batch(store.split, sim.val_X);
  const Eigen::MatrixXd test_in = extract_features_batch(store.split, sim.test_X);

  // One mini-batch per step: under matched batching the union of the clients
  // FedAvg would sample this round, otherwise the next slice of a reshuffled
  // epoch over the store.
  Rng client_rng = derive_rng(config.seed, "client_sampling");
  Rng shuffle_rng = derive_rng(config.seed, "ps_shuffle");
  std::vector<int> epoch_order(store.labels.size());
  for (std::size_t i = 0; i < epoch_order.size(); ++i) epoch_order[i] = static_cast<int>(i);
  std::size_t epoch_pos = epoch_order.size();  // forces a shuffle on first use

  for (int round = 1; round <= config.max_rounds; ++round) {
    // Groups preserve the per-client summation order of the FedAvg loop.
    std::vector<std::vector<int>> groups;
    if (config.matched_batching) {
      if (store.client_rows.empty())
        throw config_error("train_from_features: matched batching needs a grouped store");
      for (int id : sample_clients(config.num_clients, config.client_fraction, client_rng))
        groups.push_back(store.client_rows[static_cast<std::size_t>(id)]);
    } else {
      std::vector<int> batch;
      for (int i = 0; i < config.ps_batch_size; ++i) {
        if (epoch_pos == epoch_order.size()) {
          shuffle_rng.shuffle(epoch_order);
          epoch_pos = 0;
        }
        batch.push_back(epoch_order[epoch_pos++]);
      }
      groups.push_back(std::move(batch));
    }

    GradientVector total_grad = GradientVector::Zero(theta.size());
    double loss_sum = 0.0;
    std::size_t sample_count = 0;
    for (const auto& group : groups) {
      GradientVector group_grad = GradientVector::Zero(theta.size());
      for (int row : group) {
        const Eigen::VectorXd z = store.features.row(row).transpose();
        const int label = store.labels[static_cast<std::size_t>(row)];
        const DropoutPlan plan{
            true, config.seed, static_cast<std::uint64_t>(round),
            static_cast<std::uint64_t>(store.sample_ids[static_cast<std::size_t>(row)])};
        double loss = 0.0;
        group_grad += backward(head, z, label, &loss, plan);
        loss_sum += loss;
        ++sample_count;
      }
      total_grad += group_grad;
    }

    const double train_loss = loss_sum / static_cast<double>(sample_count);
    if (!std::isfinite(train_loss))
      throw aborted_run_error("training diverged",
                              divergence_trace(Method::fbftl, round, result.trace));
    theta = optimizer_step(opt, theta, total_grad);
    unpack_params(head, theta);

    const double val_acc = accuracy(head, val_in, sim.val_y);
    result.trace.push_back({round, train_loss, val_acc, result.meter.uplink_total(),
                            result.meter.downlink_total()});
    if (config.record_trajectory) result.trajectory.push_back(theta);
    result.rounds = round;
    if (stopper.should_stop(round, val_acc)) {
      result.early_stopped = true;
      break;
    }
  }

  result.final_params = theta;
  result.test_accuracy = accuracy(head, test_in, sim.test_y);
  const std::uint64_t batches = result.meter.uplink_events();
  result.analytic_uplink = analytic_uplink(sim, config, batches);
  result.analytic_downlink = analytic_downlink(sim, config, batches);
  result.meter_matches_analytic =
      result.meter.uplink_total() == result.analytic_uplink &&
      result.meter.downlink_total() == result.analytic_downlink;
  result.frozen_checksum_after = param_checksum(store.split.extractor);
  return result;
}

RunResult run_fbftl(const SimData& sim, const FederationConfig& config) {
  const FeatureStore store = collect_uploads(sim, config);
  return train_from_features(store, sim, config);
}

EquivalenceResult run_matched_equivalence(const SimData& sim, const FederationConfig& config) {
  FederationConfig gradient_config = config;
  gradient_config.method = Method::ftl_c;
  gradient_config.record_trajectory = true;

  FederationConfig feature_config = config;
  feature_config.method = Method::fbftl;
  feature_config.matched_batching = true;
  feature_config.record_trajectory = true;

  EquivalenceResult eq;
  eq.gradient_run = run_fedavg(sim, gradient_config);
  eq.feature_run = run_fbftl(sim, feature_config);
  eq.rounds = std::min(eq.gradient_run.rounds, eq.feature_run.rounds);

  for (int r = 0; r < eq.rounds; ++r) {
    const double dev = (eq.gradient_run.trajectory[static_cast<std::size_t>(r)] -
                        eq.feature_run.trajectory[static_cast<std::size_t>(r)])
                           .cwiseAbs()
                           .maxCoeff();
    eq.max_param_deviation = std::max(eq.max_param_deviation, dev);
  }

  // Accuracies evaluated per round from each trajectory, through the same
  // frozen extractor.
  Rng head_rng = derive_rng(config.seed, "head_init");
  SplitModel split = split_at(sim.arch, sim.source_net, head_rng);
  const Eigen::MatrixXd test_in = extract_features_batch(split, sim.test_X);
  DenseNet head = split.head;
  auto accuracy_of = [&](const ParamVector& theta) {
    unpack_params(head, theta);
    return accuracy(head, test_in, sim.test_y);
  };
  eq.accuracies_identical = true;
  for (int r = 0; r < eq.rounds; ++r) {
    const double a = accuracy_of(eq.gradient_run.trajectory[static_cast<std::size_t>(r)]);
    const double b = accuracy_of(eq.feature_run.trajectory[static_cast<std::size_t>(r)]);
    eq.test_accuracy_gradient.push_back(a);
    eq.test_accuracy_feature.push_back(b);
    if (a != b) eq.accuracies_identical = false;
  }
  return eq;
}

}  // namespace fbftl
