#include "fbftl/run_config.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fbftl {

OptimizerConfig parse_optimizer(const nlohmann::json& j) {
  OptimizerConfig config;
  if (!j.is_object()) throw config_error("optimizer: expected an object");
  const std::string kind = j.value("kind", std::string("sgd"));
  if (kind == "sgd") {
    config.kind = OptimizerKind::sgd_momentum;
  } else if (kind == "adam") {
    config.kind = OptimizerKind::adam;
  } else {
    throw config_error("optimizer: unknown kind '" + kind + "' (expected sgd or adam)");
  }
  config.learning_rate = j.value("learning_rate", config.learning_rate);
  config.momentum = j.value("momentum", config.momentum);
  config.l2_penalty = j.value("l2_penalty", config.l2_penalty);
  config.beta1 = j.value("beta1", config.beta1);
  config.beta2 = j.value("beta2", config.beta2);
  config.epsilon = j.value("epsilon", config.epsilon);
  if (config.learning_rate <= 0.0) throw config_error("optimizer: learning_rate must be positive");
  if (config.momentum < 0.0 || config.momentum >= 1.0)
    throw config_error("optimizer: momentum must be in [0, 1)");
  if (config.l2_penalty < 0.0) throw config_error("optimizer: l2_penalty must be >= 0");
  return config;
}

namespace {

std::string resolve_path(const std::string& base_dir, const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_absolute() || base_dir.empty()) return path;
  return (std::filesystem::path(base_dir) / p).string();
}

std::vector<int> parse_int_list(const nlohmann::json& j, const char* what) {
  if (!j.is_array()) throw config_error(std::string(what) + ": expected an array");
  std::vector<int> out;
  for (const auto& v : j) out.push_back(v.get<int>());
  return out;
}

}  // namespace

RunSpec parse_run_spec(const nlohmann::json& j, const std::string& base_dir) {
  if (!j.is_object()) throw config_error("run config: expected a JSON object");
  RunSpec spec;
  spec.seed = j.value("seed", 1ull);

  const std::string method = j.value("method", std::string());
  if (method.empty()) throw config_error("run config: missing method");
  if (method == "equivalence") {
    spec.equivalence = true;
    spec.federation.method = Method::ftl_c;
  } else {
    spec.federation.method = parse_method(method);
  }

  if (!j.contains("arch")) throw config_error("run config: missing arch");
  if (j.at("arch").is_string()) {
    spec.arch = load_architecture(resolve_path(base_dir, j.at("arch").get<std::string>()));
  } else {
    spec.arch = parse_architecture(j.at("arch"));
  }

  if (!j.contains("data")) throw config_error("run config: missing data");
  const auto& data = j.at("data");
  if (data.contains("csv")) {
    spec.csv_path = resolve_path(base_dir, data.at("csv").get<std::string>());
    if (data.contains("classes")) {
      for (const auto& name : data.at("classes")) spec.expected_classes.push_back(name);
    }
  } else if (data.contains("synthetic")) {
    const auto& s = data.at("synthetic");
    SyntheticSpec synth;
    synth.classes = s.value("classes", 0);
    synth.dim = s.value("dim", 0);
    synth.per_class = s.value("per_class", 0);
    synth.separation = s.value("separation", 4.0);
    spec.synthetic = synth;
  } else {
    throw config_error("run config: data needs either csv or synthetic");
  }

  if (j.contains("transfer")) {
    const auto& t = j.at("transfer");
    spec.source_classes = parse_int_list(t.at("source_classes"), "transfer.source_classes");
    spec.target_classes = parse_int_list(t.at("target_classes"), "transfer.target_classes");
  }

  spec.test_fraction = j.value("test_fraction", spec.test_fraction);
  spec.val_fraction = j.value("val_fraction", spec.val_fraction);
  if (spec.test_fraction < 0.0 || spec.test_fraction >= 1.0)
    throw config_error("run config: test_fraction must be in [0, 1)");
  if (spec.val_fraction <= 0.0 || spec.val_fraction >= 1.0)
    throw config_error("run config: val_fraction must be in (0, 1)");

  if (!j.contains("federation")) throw config_error("run config: missing federation");
  const auto& f = j.at("federation");
  spec.federation.num_clients = f.value("num_clients", 0);
  spec.federation.client_fraction = f.value("client_fraction", 1.0);
  spec.federation.samples_per_client = f.value("samples_per_client", 0);
  spec.federation.max_rounds = f.value("max_rounds", 100);
  spec.federation.patience = f.value("patience", 0);
  spec.federation.ps_batch_size = f.value("ps_batch_size", 32);
  spec.federation.meter_label_bits = f.value("meter_label_bits", false);
  spec.federation.meter_count_bits = f.value("meter_count_bits", false);
  if (f.contains("optimizer")) spec.federation.optimizer = parse_optimizer(f.at("optimizer"));
  spec.federation.seed = spec.seed;
  spec.federation.validate();

  if (j.contains("source_training")) {
    const auto& s = j.at("source_training");
    spec.source_training.epochs = s.value("epochs", spec.source_training.epochs);
    spec.source_training.batch_size = s.value("batch_size", spec.source_training.batch_size);
    if (s.contains("optimizer"))
      spec.source_training.optimizer = parse_optimizer(s.at("optimizer"));
    if (spec.source_training.epochs < 1)
      throw config_error("source_training: epochs must be >= 1");
    if (spec.source_training.batch_size < 1)
      throw config_error("source_training: batch_size must be >= 1");
  }
  return spec;
}

RunSpec load_run_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open run config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error("bad JSON in " + path + ": " + e.what());
  }
  return parse_run_spec(j, std::filesystem::path(path).parent_path().string());
}

DenseNet train_centrally(const ArchitectureSpec& arch, const Eigen::MatrixXd& X,
                         const std::vector<int>& labels, const SourceTrainingSpec& spec,
                         std::uint64_t seed) {
  if (X.rows() == 0 || static_cast<std::size_t>(X.rows()) != labels.size())
    throw config_error("central training: bad training set");
  Rng init_rng = derive_rng(seed, "source_init");
  DenseNet net = build_dense_net(arch, init_rng);
  ParamVector theta = pack_params(net);
  OptimizerState opt = OptimizerState::make(spec.optimizer, theta.size());
  Rng order_rng = derive_rng(seed, "source_order");

  std::vector<int> order(static_cast<std::size_t>(X.rows()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  std::uint64_t step = 0;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(spec.batch_size)) {
      const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(spec.batch_size));
      ++step;
      GradientVector grad = GradientVector::Zero(theta.size());
      double loss_sum = 0.0;
      for (std::size_t i = at; i < end; ++i) {
        const int row = order[i];
        const DropoutPlan plan{true, seed ^ 0x5057ull, step, static_cast<std::uint64_t>(row)};
        double loss = 0.0;
        grad += backward(net, X.row(row).transpose(), labels[static_cast<std::size_t>(row)],
                         &loss, plan);
        loss_sum += loss;
      }
      const double n = static_cast<double>(end - at);
      if (!std::isfinite(loss_sum))
        throw aborted_run_error("source training diverged",
                                "epoch=" + std::to_string(epoch) + " step=" + std::to_string(step));
      theta = optimizer_step(opt, theta, GradientVector(grad / n));
      unpack_params(net, theta);
    }
  }
  return net;
}

SimData build_sim_data(const RunSpec& spec) {
  Dataset base;
  if (spec.csv_path) {
    base = load_csv(*spec.csv_path, spec.expected_classes);
  } else if (spec.synthetic) {
    Rng gen_rng = derive_rng(spec.seed, "data_gen");
    base = synth_gaussian_mixture(spec.synthetic->classes, spec.synthetic->dim,
                                  spec.synthetic->per_class, spec.synthetic->separation,
                                  gen_rng);
  } else {
    throw config_error("run config: no data source");
  }

  const bool transfers = !spec.source_classes.empty() || !spec.target_classes.empty();
  Dataset target = base;
  Dataset source_task;
  if (transfers) {
    TransferSplit split = make_transfer_split(base, spec.source_classes, spec.target_classes);
    target = std::move(split.target);
    source_task = std::move(split.source);
  }

  SimData sim;
  sim.arch = spec.arch;
  sim.num_classes = target.num_classes();

  Rng target_split_rng = derive_rng(spec.seed, "split_target");
  auto [train_pool, test] = split_train_test(target, spec.test_fraction, target_split_rng);
  Rng val_split_rng = derive_rng(spec.seed, "split_val");
  auto [train, val] = split_train_test(train_pool, spec.val_fraction, val_split_rng);
  if (train.size() == 0 || val.size() == 0 || test.size() == 0)
    throw config_error("run config: a data split came out empty; adjust fractions or sizes");

  const Standardizer standardizer = Standardizer::fit(train.features);
  sim.train_X = standardizer.apply(train.features);
  sim.train_y = train.labels;
  sim.val_X = standardizer.apply(val.features);
  sim.val_y = val.labels;
  sim.test_X = standardizer.apply(test.features);
  sim.test_y = test.labels;

  Rng partition_rng = derive_rng(spec.seed, "partition");
  sim.client_samples = partition_clients(train, spec.federation.num_clients,
                                         spec.federation.samples_per_client, partition_rng);

  const bool needs_source = spec.equivalence || spec.federation.method != Method::fl;
  if (needs_source) {
    if (!transfers)
      throw config_error("run config: transfer methods need a transfer block");
    ArchitectureSpec source_arch = spec.arch;
    // The source task swaps in its own class count at the final layer.
    for (auto it = source_arch.layers.rbegin(); it != source_arch.layers.rend(); ++it) {
      if (it->kind == LayerKind::dense) {
        it->out_dim = source_task.num_classes();
        break;
      }
    }
    source_arch.validate();

    Rng source_split_rng = derive_rng(spec.seed, "split_source");
    auto [source_train, source_test] =
        split_train_test(source_task, spec.test_fraction, source_split_rng);
    if (source_train.size() == 0)
      throw config_error("run config: source training set came out empty");
    const Standardizer source_std = Standardizer::fit(source_train.features);
    sim.source_net = train_centrally(source_arch, source_std.apply(source_train.features),
                                     source_train.labels, spec.source_training, spec.seed);
    sim.has_source = true;
  }
  return sim;
}

std::uint64_t config_hash(const nlohmann::json& effective) {
  return detail::fnv1a(effective.dump());
}

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string metrics_csv(const RunResult& result, const std::string& config_hash_hex,
                        std::uint64_t seed) {
  std::ostringstream out;
  out << "# config_hash=" << config_hash_hex << " seed=" << seed << "\n";
  out << "round,train_loss,val_acc,cum_uplink_bits,cum_downlink_bits\n";
  for (const auto& row : result.trace)
    out << row.round << ',' << format_double(row.train_loss) << ','
        << format_double(row.val_accuracy) << ',' << row.cum_uplink_bits << ','
        << row.cum_downlink_bits << "\n";
  return out.str();
}

nlohmann::json run_summary(const RunResult& result, const std::string& config_hash_hex,
                           std::uint64_t seed) {
  nlohmann::json j;
  j["config_hash"] = config_hash_hex;
  j["seed"] = seed;
  j["method"] = to_string(result.method);
  j["rounds"] = result.rounds;
  j["early_stopped"] = result.early_stopped;
  j["final_test_accuracy"] = result.test_accuracy;
  j["metered_uplink_bits"] = result.meter.uplink_total();
  j["metered_downlink_bits"] = result.meter.downlink_total();
  j["analytic_uplink_bits"] = result.analytic_uplink;
  j["analytic_downlink_bits"] = result.analytic_downlink;
  j["analytic_matches_metered"] = result.meter_matches_analytic;
  j["uplink_events"] = result.meter.uplink_events();
  j["uplink_display"] = format_bits(static_cast<double>(result.meter.uplink_total()));
  j["downlink_display"] = format_bits(static_cast<double>(result.meter.downlink_total()));
  if (result.method == Method::ftl_c || result.method == Method::fbftl) {
    j["frozen_checksum_before"] = hash_hex(result.frozen_checksum_before);
    j["frozen_checksum_after"] = hash_hex(result.frozen_checksum_after);
    j["frozen_params_untouched"] =
        result.frozen_checksum_before == result.frozen_checksum_after;
  }
  return j;
}

nlohmann::json equivalence_summary(const EquivalenceResult& eq,
                                   const std::string& config_hash_hex, std::uint64_t seed,
                                   double tolerance) {
  nlohmann::json j;
  j["config_hash"] = config_hash_hex;
  j["seed"] = seed;
  j["mode"] = "equivalence";
  j["rounds"] = eq.rounds;
  j["max_param_deviation"] = eq.max_param_deviation;
  j["within_tolerance"] = eq.max_param_deviation <= tolerance;
  j["tolerance"] = tolerance;
  j["accuracies_identical"] = eq.accuracies_identical;
  j["gradient_run"] = run_summary(eq.gradient_run, config_hash_hex, seed);
  j["feature_run"] = run_summary(eq.feature_run, config_hash_hex, seed);
  return j;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw config_error("cannot write: " + path);
  out << content;
  if (!out) throw config_error("write failed: " + path);
}

}  // namespace fbftl
