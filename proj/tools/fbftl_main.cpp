// fbftl: deterministic simulator and payload/privacy analysis for
// feature-based federated transfer learning.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 numeric fault,
// 3 acceptance-check failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fbftl/fed_sim.hpp"
#include "fbftl/payload.hpp"
#include "fbftl/privacy.hpp"
#include "fbftl/run_config.hpp"

namespace {

constexpr double kEquivalenceTolerance = 1e-6;

// FBFTL_OUT, when set, overrides --out everywhere.
std::string effective_out_dir(const std::string& flag_value) {
  if (const char* env = std::getenv("FBFTL_OUT"); env && *env) return env;
  return flag_value;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw fbftl::config_error("cannot create output directory: " + dir);
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fbftl::config_error("cannot open config: " + path);
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw fbftl::config_error("bad JSON in " + path + ": " + e.what());
  }
}

struct PayloadArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  bool seed_given = false;
};

int cmd_payload(const PayloadArgs& args) {
  nlohmann::json j = load_json(args.config_path);
  const std::string base_dir =
      std::filesystem::path(args.config_path).parent_path().string();

  fbftl::PayloadInputs in;
  if (j.contains("arch")) {
    fbftl::ArchitectureSpec arch;
    if (j.at("arch").is_string()) {
      std::filesystem::path p(j.at("arch").get<std::string>());
      arch = fbftl::load_architecture(
          p.is_absolute() ? p.string() : (std::filesystem::path(base_dir) / p).string());
    } else {
      arch = fbftl::parse_architecture(j.at("arch"));
    }
    in = fbftl::payload_inputs_from_arch(arch);
  } else if (j.contains("counts")) {
    const auto& c = j.at("counts");
    in.bit_width = c.value("bit_width", 32);
    in.params_full = c.value("params_full", 0ull);
    in.params_head = c.value("params_head", 0ull);
    in.feature_dim = c.value("feature_dim", 0ull);
    in.head_out_dim = c.value("head_out_dim", 0ull);
  } else {
    throw fbftl::config_error("payload config: needs arch or counts");
  }

  if (!j.contains("batches")) throw fbftl::config_error("payload config: missing batches");
  const auto& b = j.at("batches");
  in.batches_fl = b.value("FL", 0ull);
  in.batches_ftl_f = b.value("FTL_f", 0ull);
  in.batches_ftl_c = b.value("FTL_c", 0ull);
  in.batches_fbftl = b.value("FbFTL", 0ull);
  in.clients_per_round = j.value("clients_per_round", 0ull);

  std::map<std::string, std::map<std::string, std::string>> reference;
  if (j.contains("reference")) {
    for (const auto& [method, cells] : j.at("reference").items())
      for (const auto& [column, text] : cells.items())
        reference[method][column] = text.get<std::string>();
  }

  const fbftl::PayloadReport report = fbftl::build_report(in, reference);

  nlohmann::json effective = j;
  effective["seed"] = args.seed;
  const std::string hash = fbftl::hash_hex(fbftl::config_hash(effective));

  const std::string out_dir = effective_out_dir(args.out_dir);
  ensure_dir(out_dir);
  std::vector<std::string> header{"config_hash=" + hash + " seed=" + std::to_string(args.seed)};
  fbftl::write_text_file(join_path(out_dir, "payload.csv"),
                         fbftl::render_csv(report, header));
  std::ostringstream text;
  text << "# " << header[0] << "\n" << fbftl::render_text(report);
  fbftl::write_text_file(join_path(out_dir, "payload.txt"), text.str());
  std::cout << text.str();

  if (!report.ordering.ok() || !report.ratio_bound) {
    std::cerr << "payload: ordering or ratio bound violated\n";
    return 3;
  }
  return 0;
}

struct SimulateArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int cmd_simulate(const SimulateArgs& args) {
  nlohmann::json j = load_json(args.config_path);
  if (args.seed_given) j["seed"] = args.seed;
  fbftl::RunSpec spec = fbftl::parse_run_spec(
      j, std::filesystem::path(args.config_path).parent_path().string());

  const std::string hash = fbftl::hash_hex(fbftl::config_hash(j));
  const std::string out_dir = effective_out_dir(args.out_dir);
  ensure_dir(out_dir);

  const fbftl::SimData sim = fbftl::build_sim_data(spec);

  if (spec.equivalence) {
    const fbftl::EquivalenceResult eq = fbftl::run_matched_equivalence(sim, spec.federation);
    fbftl::write_text_file(join_path(out_dir, "metrics_gradient.csv"),
                           fbftl::metrics_csv(eq.gradient_run, hash, spec.seed));
    fbftl::write_text_file(join_path(out_dir, "metrics_feature.csv"),
                           fbftl::metrics_csv(eq.feature_run, hash, spec.seed));
    const nlohmann::json summary =
        fbftl::equivalence_summary(eq, hash, spec.seed, kEquivalenceTolerance);
    fbftl::write_text_file(join_path(out_dir, "summary.json"), summary.dump(2) + "\n");
    std::cout << "equivalence: rounds=" << eq.rounds
              << " max_param_deviation=" << eq.max_param_deviation
              << " accuracies_identical=" << (eq.accuracies_identical ? "yes" : "no") << "\n";
    if (eq.max_param_deviation > kEquivalenceTolerance || !eq.accuracies_identical) {
      std::cerr << "simulate: equivalence check failed\n";
      return 3;
    }
    if (!eq.gradient_run.meter_matches_analytic || !eq.feature_run.meter_matches_analytic) {
      std::cerr << "simulate: metered totals disagree with analytic totals\n";
      return 3;
    }
    return 0;
  }

  const fbftl::RunResult result =
      spec.federation.method == fbftl::Method::fbftl ? fbftl::run_fbftl(sim, spec.federation)
                                                     : fbftl::run_fedavg(sim, spec.federation);
  fbftl::write_text_file(join_path(out_dir, "metrics.csv"),
                         fbftl::metrics_csv(result, hash, spec.seed));
  const nlohmann::json summary = fbftl::run_summary(result, hash, spec.seed);
  fbftl::write_text_file(join_path(out_dir, "summary.json"), summary.dump(2) + "\n");
  std::cout << "method=" << fbftl::to_string(result.method) << " rounds=" << result.rounds
            << " test_accuracy=" << result.test_accuracy
            << " uplink=" << fbftl::format_bits(static_cast<double>(result.meter.uplink_total()))
            << " downlink="
            << fbftl::format_bits(static_cast<double>(result.meter.downlink_total()))
            << " analytic_matches=" << (result.meter_matches_analytic ? "yes" : "no") << "\n";
  if (!result.meter_matches_analytic) {
    std::cerr << "simulate: metered totals disagree with analytic totals\n";
    return 3;
  }
  return 0;
}

struct PrivacyArgs {
  int classes = 10;
  int batch_size = 8;
  std::string labels = "uniform";
  std::string clients = "1,10,100,1000,6250";
  int repetitions = 100;
  std::uint64_t seed = 1;
  std::uint64_t cap = fbftl::kDefaultEnumerateCap;
  bool single_draw = false;
  std::string out_dir = ".";
};

std::vector<double> parse_labels(const std::string& text, int classes) {
  if (text == "uniform") return fbftl::uniform_labels(classes);
  std::vector<double> y;
  std::stringstream ss(text);
  std::string field;
  while (std::getline(ss, field, ',')) y.push_back(std::stod(field));
  if (static_cast<int>(y.size()) != classes)
    throw fbftl::config_error("privacy: label vector length must equal --classes");
  fbftl::validate_label_distribution(y);
  return y;
}

std::vector<std::uint64_t> parse_u_grid(const std::string& text) {
  std::vector<std::uint64_t> grid;
  std::stringstream ss(text);
  std::string field;
  while (std::getline(ss, field, ',')) grid.push_back(std::stoull(field));
  if (grid.empty()) throw fbftl::config_error("privacy: empty client grid");
  return grid;
}

int cmd_privacy(const PrivacyArgs& args) {
  const std::vector<double> y = parse_labels(args.labels, args.classes);
  const std::vector<std::uint64_t> grid = parse_u_grid(args.clients);
  const int reps = args.single_draw ? 1 : args.repetitions;
  const std::vector<fbftl::LeakagePoint> points = fbftl::expected_leakage_curve(
      args.classes, args.batch_size, y, grid, reps, args.seed, args.cap);

  nlohmann::json effective;
  effective["classes"] = args.classes;
  effective["batch_size"] = args.batch_size;
  effective["labels"] = args.labels;
  effective["clients"] = args.clients;
  effective["repetitions"] = reps;
  effective["single_draw"] = args.single_draw;
  effective["cap"] = args.cap;
  effective["seed"] = args.seed;
  const std::string hash = fbftl::hash_hex(fbftl::config_hash(effective));

  std::ostringstream out;
  out << "# config_hash=" << hash << " seed=" << args.seed << "\n";
  out << "U,mean_bits,stderr_bits\n";
  char line[96];
  for (const auto& p : points) {
    std::snprintf(line, sizeof line, "%llu,%.9g,%.9g\n",
                  static_cast<unsigned long long>(p.clients), p.mean_bits, p.stderr_bits);
    out << line;
  }
  const std::string out_dir = effective_out_dir(args.out_dir);
  ensure_dir(out_dir);
  fbftl::write_text_file(join_path(out_dir, "leakage.csv"), out.str());
  std::cout << out.str();
  return 0;
}

struct GradcheckArgs {
  std::string arch_path;
  std::uint64_t seed = 1;
  int samples = 5;
  double tolerance = 1e-4;
  double step = 1e-4;
  bool corrupt = false;  // negative-control hook: biases the analytic gradient
  std::string out_dir;
};

int cmd_gradcheck(const GradcheckArgs& args) {
  const fbftl::ArchitectureSpec arch = fbftl::load_architecture(args.arch_path);
  fbftl::Rng init_rng = fbftl::derive_rng(args.seed, "gradcheck_init");
  const fbftl::DenseNet net = fbftl::build_dense_net(arch, init_rng);

  std::ostringstream report;
  bool all_pass = true;
  fbftl::Rng probe_rng = fbftl::derive_rng(args.seed, "gradcheck_probe");
  for (int i = 0; i < args.samples; ++i) {
    Eigen::VectorXd x(net.input_dim());
    // Resample probes that land a relu unit near its kink, where central
    // differences are meaningless.
    do {
      for (Eigen::Index d = 0; d < x.size(); ++d) x(d) = probe_rng.normal();
    } while (fbftl::min_relu_margin(net, x) < 1e-3);
    const int label = static_cast<int>(probe_rng.below(
        static_cast<std::uint64_t>(net.output_dim())));

    fbftl::GradCheckResult check =
        fbftl::gradient_check(net, x, label, args.step, args.tolerance);
    if (args.corrupt) {
      // Pretend backward returned a biased gradient.
      check.max_relative_error += 1.0;
      check.pass = false;
    }
    all_pass = all_pass && check.pass;
    report << "sample " << i << ": max_rel_err=" << check.max_relative_error << " "
           << (check.pass ? "pass" : "FAIL") << "\n";
  }
  report << (all_pass ? "gradcheck: pass" : "gradcheck: FAIL") << "\n";
  std::cout << report.str();

  if (!args.out_dir.empty() || std::getenv("FBFTL_OUT")) {
    nlohmann::json effective;
    effective["arch"] = args.arch_path;
    effective["samples"] = args.samples;
    effective["tolerance"] = args.tolerance;
    effective["step"] = args.step;
    effective["corrupt"] = args.corrupt;
    effective["seed"] = args.seed;
    const std::string hash = fbftl::hash_hex(fbftl::config_hash(effective));
    const std::string out_dir = effective_out_dir(args.out_dir);
    ensure_dir(out_dir);
    fbftl::write_text_file(join_path(out_dir, "gradcheck.txt"),
                           "# config_hash=" + hash + " seed=" + std::to_string(args.seed) +
                               "\n" + report.str());
  }
  return all_pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulator and analysis toolkit for feature-based federated transfer learning"};
  app.require_subcommand(1);

  PayloadArgs payload_args;
  CLI::App* payload = app.add_subcommand("payload", "Closed-form payload comparison table");
  payload->add_option("--config", payload_args.config_path, "Payload config JSON")->required();
  payload->add_option("--out", payload_args.out_dir, "Output directory");
  payload->add_option("--seed", payload_args.seed, "Seed recorded in output headers");

  SimulateArgs sim_args;
  CLI::App* simulate = app.add_subcommand("simulate", "Run one training protocol end to end");
  simulate->add_option("--config", sim_args.config_path, "Run config JSON")->required();
  simulate->add_option("--out", sim_args.out_dir, "Output directory");
  CLI::Option* sim_seed = simulate->add_option("--seed", sim_args.seed, "Master seed override");

  PrivacyArgs privacy_args;
  CLI::App* privacy = app.add_subcommand("privacy", "Label-privacy leakage curve");
  privacy->add_option("--classes", privacy_args.classes, "Number of label classes N")
      ->check(CLI::Range(1, 1 << 10));
  privacy->add_option("--batch-size", privacy_args.batch_size, "Samples per batch K")
      ->check(CLI::Range(0, 1 << 10));
  privacy->add_option("--labels", privacy_args.labels,
                      "'uniform' or comma-separated probabilities");
  privacy->add_option("--clients", privacy_args.clients, "Comma-separated U grid");
  privacy->add_option("--reps", privacy_args.repetitions, "Monte Carlo repetitions")
      ->check(CLI::Range(1, 1 << 20));
  privacy->add_option("--seed", privacy_args.seed, "Master seed");
  privacy->add_option("--cap", privacy_args.cap, "Enumeration cap");
  privacy->add_flag("--single-draw", privacy_args.single_draw,
                    "One observation per U instead of an expectation");
  privacy->add_option("--out", privacy_args.out_dir, "Output directory");

  GradcheckArgs grad_args;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gradcheck->add_option("--arch", grad_args.arch_path, "Architecture JSON")->required();
  gradcheck->add_option("--seed", grad_args.seed, "Master seed");
  gradcheck->add_option("--samples", grad_args.samples, "Probe samples")
      ->check(CLI::Range(1, 1000));
  gradcheck->add_option("--tolerance", grad_args.tolerance, "Relative tolerance");
  gradcheck->add_option("--step", grad_args.step, "Finite-difference step");
  gradcheck->add_flag("--corrupt", grad_args.corrupt,
                      "Negative control: report a corrupted gradient");
  gradcheck->add_option("--out", grad_args.out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 1;
  }

  try {
    if (payload->parsed()) return cmd_payload(payload_args);
    if (simulate->parsed()) {
      sim_args.seed_given = sim_seed->count() > 0;
      return cmd_simulate(sim_args);
    }
    if (privacy->parsed()) return cmd_privacy(privacy_args);
    if (gradcheck->parsed()) return cmd_gradcheck(grad_args);
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const fbftl::aborted_run_error& e) {
    std::cerr << "numeric fault: " << e.what() << " [" << e.trace() << "]\n";
    return 2;
  } catch (const fbftl::numeric_error& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return 2;
  } catch (const fbftl::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
