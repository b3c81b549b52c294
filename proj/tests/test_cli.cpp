// End-to-end checks of the fbftl binary: every subcommand, the output files,
// and the exit-code contract (0 ok, 1 config, 2 numeric, 3 failed check).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr merged
};

CommandResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  const std::string cmd = env_prefix + FBFTL_BINARY_PATH + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string output;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) output.append(buf, n);
  const int status = pclose(pipe);
  REQUIRE(WIFEXITED(status));
  return {WEXITSTATUS(status), output};
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

int count_lines_with(const std::string& text, const std::string& needle) {
  int count = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.find(needle) != std::string::npos) ++count;
  return count;
}

std::string shipped_config(const std::string& name) {
  return std::string(FBFTL_SOURCE_DIR) + "/configs/" + name;
}

// Scratch tree with the fixture configs, rebuilt once per test-binary run.
const fs::path& scratch() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "fbftl_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);

    std::ofstream(d / "tiny_arch.json") << R"({
      "bit_width": 32,
      "cut_index": 2,
      "layers": [
        {"kind": "dense", "in": 4, "out": 8, "activation": "relu"},
        {"kind": "dense", "in": 8, "out": 3}
      ]
    })";

    const std::string sim_template = R"({
      "seed": 5,
      "method": "@METHOD@",
      "arch": "tiny_arch.json",
      "data": {"synthetic": {"classes": 6, "dim": 4, "per_class": 60, "separation": 4.0}},
      "transfer": {"source_classes": [3, 4, 5], "target_classes": [0, 1, 2]},
      "test_fraction": 0.25,
      "val_fraction": 0.2,
      "federation": {
        "num_clients": 20,
        "client_fraction": 0.2,
        "samples_per_client": 5,
        "max_rounds": 12,
        "patience": 0,
        "ps_batch_size": 8,
        "optimizer": {"kind": "sgd", "learning_rate": @LR@}
      },
      "source_training": {
        "epochs": 4,
        "batch_size": 16,
        "optimizer": {"kind": "sgd", "learning_rate": 0.05}
      }
    })";
    auto write_sim = [&](const std::string& file, const std::string& method,
                         const std::string& lr) {
      std::string text = sim_template;
      text.replace(text.find("@METHOD@"), 8, method);
      text.replace(text.find("@LR@"), 4, lr);
      std::ofstream(d / file) << text;
    };
    write_sim("tiny_fbftl.json", "FbFTL", "0.05");
    write_sim("tiny_fl.json", "FL", "0.05");
    write_sim("tiny_eq.json", "equivalence", "0.05");
    write_sim("tiny_bad_method.json", "fedsgd", "0.05");
    write_sim("tiny_divergent.json", "FL", "1e150");
    return d;
  }();
  return dir;
}

std::string in_scratch(const std::string& name) { return (scratch() / name).string(); }

}  // namespace

TEST_CASE("payload reproduces the reference comparison") {
  const std::string out = in_scratch("payload_bean");
  const CommandResult r =
      run_cli("payload --config " + shipped_config("payload_drybean.json") + " --out " + out);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("390.5 Kb") != std::string::npos);
  CHECK(r.output.find("336.1 Kb") != std::string::npos);
  CHECK(r.output.find("3.2 Kb") != std::string::npos);
  CHECK(r.output.find("16.1 Gb") != std::string::npos);
  CHECK(r.output.find("12.4 Gb") != std::string::npos);
  CHECK(r.output.find("15.0 Mb") != std::string::npos);
  CHECK(r.output.find("ordering: fbftl_far_below=yes ftl_f_below_fl=yes ftl_c_below_ftl_c=no") ==
        std::string::npos);  // guard against a typo'd flag name
  CHECK(r.output.find("ordering: fbftl_far_below=yes ftl_f_below_fl=yes ftl_c_below_ftl_f=no") !=
        std::string::npos);
  CHECK(r.output.find("ratio_bound: holds") != std::string::npos);
  // The two cells the closed forms cannot reconcile are called out, nothing else.
  CHECK(count_lines_with(r.output, "note:") == 2);
  CHECK(r.output.find("note: FTL_c uplink: computed 13.0 Gb, reference 15.2 Gb") !=
        std::string::npos);
  CHECK(r.output.find("note: FbFTL downlink: computed 54.4 Kb, reference 336 Kb") !=
        std::string::npos);

  const std::string csv = read_file(fs::path(out) / "payload.csv");
  CHECK(csv.find("FL,41160,12204,390528,16074132480,2009266560,16.1 Gb,2.0 Gb") !=
        std::string::npos);
  CHECK(csv.find("FbFTL,4703,100,3200,15049600,54400,15.0 Mb,54.4 Kb") != std::string::npos);
  CHECK(read_file(fs::path(out) / "payload.txt").find("ratio_bound: holds") != std::string::npos);
}

TEST_CASE("payload handles the image-scale counts") {
  const CommandResult r =
      run_cli("payload --config " + shipped_config("payload_vgg16_cifar.json") + " --out " +
              in_scratch("payload_vgg"));
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("3216.0 Tb") != std::string::npos);
  CHECK(r.output.find("131.1 Kb") != std::string::npos);
  CHECK(r.output.find("6.6 Gb") != std::string::npos);
  CHECK(r.output.find("3.8 Gb") != std::string::npos);
  CHECK(r.output.find("ordering: fbftl_far_below=yes ftl_f_below_fl=yes ftl_c_below_ftl_f=yes") !=
        std::string::npos);
  CHECK(count_lines_with(r.output, "note:") == 1);
  CHECK(r.output.find("note: FTL_f downlink: computed 118.7 Tb, reference 253 Tb") !=
        std::string::npos);
}

TEST_CASE("simulate runs the one-shot protocol end to end") {
  const std::string out = in_scratch("sim_fbftl");
  const CommandResult r =
      run_cli("simulate --config " + in_scratch("tiny_fbftl.json") + " --out " + out);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("method=FbFTL rounds=12") != std::string::npos);
  // Closed forms for the tiny net: 100 samples x 32 x 8 up, 32 x 40 down.
  CHECK(r.output.find("uplink=25.6 Kb downlink=1.3 Kb") != std::string::npos);
  CHECK(r.output.find("analytic_matches=yes") != std::string::npos);

  const json summary = json::parse(read_file(fs::path(out) / "summary.json"));
  CHECK(summary.at("method") == "FbFTL");
  CHECK(summary.at("seed") == 5);
  CHECK(summary.at("rounds") == 12);
  CHECK(summary.at("uplink_events") == 100);
  CHECK(summary.at("metered_uplink_bits") == 25600);
  CHECK(summary.at("metered_downlink_bits") == 1280);
  CHECK(summary.at("analytic_matches_metered") == true);
  CHECK(summary.at("frozen_params_untouched") == true);
  CHECK(summary.at("final_test_accuracy").get<double>() > 0.8);

  const std::string metrics = read_file(fs::path(out) / "metrics.csv");
  CHECK(metrics.find("round,train_loss,val_acc,cum_uplink_bits,cum_downlink_bits") !=
        std::string::npos);
  CHECK(count_lines_with(metrics, ",25600,1280") == 12);  // one-shot totals never grow
}

TEST_CASE("simulate reruns are byte identical") {
  const std::string a = in_scratch("rerun_a");
  const std::string b = in_scratch("rerun_b");
  CHECK(run_cli("simulate --config " + in_scratch("tiny_fbftl.json") + " --out " + a).exit_code ==
        0);
  CHECK(run_cli("simulate --config " + in_scratch("tiny_fbftl.json") + " --out " + b).exit_code ==
        0);
  CHECK(read_file(fs::path(a) / "metrics.csv") == read_file(fs::path(b) / "metrics.csv"));
  CHECK(read_file(fs::path(a) / "summary.json") == read_file(fs::path(b) / "summary.json"));
}

TEST_CASE("seed override changes the run and is recorded") {
  const std::string base = in_scratch("seed_base");
  const std::string alt = in_scratch("seed_alt");
  const CommandResult r1 =
      run_cli("simulate --config " + in_scratch("tiny_fbftl.json") + " --out " + base);
  const CommandResult r2 = run_cli("simulate --config " + in_scratch("tiny_fbftl.json") +
                                   " --seed 99 --out " + alt);
  CHECK(r1.exit_code == 0);
  CHECK(r2.exit_code == 0);
  CHECK(r1.output != r2.output);

  const json summary = json::parse(read_file(fs::path(alt) / "summary.json"));
  CHECK(summary.at("seed") == 99);
  CHECK(summary.at("config_hash") !=
        json::parse(read_file(fs::path(base) / "summary.json")).at("config_hash"));
}

TEST_CASE("environment variable overrides the output directory") {
  const std::string env_dir = in_scratch("env_out");
  const std::string flag_dir = in_scratch("flag_out_ignored");
  const CommandResult r = run_cli(
      "simulate --config " + in_scratch("tiny_fbftl.json") + " --out " + flag_dir,
      "FBFTL_OUT=" + env_dir + " ");
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(fs::path(env_dir) / "summary.json"));
  CHECK_FALSE(fs::exists(fs::path(flag_dir) / "summary.json"));
}

TEST_CASE("matched equivalence through the config file") {
  const std::string out = in_scratch("sim_eq");
  const CommandResult r =
      run_cli("simulate --config " + in_scratch("tiny_eq.json") + " --out " + out);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("equivalence: rounds=12 max_param_deviation=0 accuracies_identical=yes") !=
        std::string::npos);
  CHECK(fs::exists(fs::path(out) / "metrics_gradient.csv"));
  CHECK(fs::exists(fs::path(out) / "metrics_feature.csv"));

  const json summary = json::parse(read_file(fs::path(out) / "summary.json"));
  CHECK(summary.at("mode") == "equivalence");
  CHECK(summary.at("max_param_deviation") == 0.0);
  CHECK(summary.at("within_tolerance") == true);
  CHECK(summary.at("accuracies_identical") == true);
  CHECK(summary.at("gradient_run").at("method") == "FTL_c");
  CHECK(summary.at("feature_run").at("method") == "FbFTL");
  CHECK(summary.at("feature_run").at("uplink_events") == 100);
  CHECK(summary.at("gradient_run").at("uplink_events") == 48);  // 4 clients x 12 rounds
}

TEST_CASE("privacy emits the leakage curve") {
  const std::string out = in_scratch("priv");
  const CommandResult r = run_cli(
      "privacy --classes 10 --batch-size 8 --clients 1,10 --reps 5 --seed 3 --out " + out);
  CHECK(r.exit_code == 0);

  std::istringstream lines(r.output);
  std::string header, columns, u1, u10;
  std::getline(lines, header);
  std::getline(lines, columns);
  std::getline(lines, u1);
  std::getline(lines, u10);
  CHECK(header.find("# config_hash=") == 0);
  CHECK(header.find("seed=3") != std::string::npos);
  CHECK(columns == "U,mean_bits,stderr_bits");
  // A single client leaks the whole prior, deterministically.
  CHECK(u1 == "1,13.8600456,0");
  CHECK(u10.substr(0, 3) == "10,");
  CHECK(std::stod(u10.substr(3)) < 13.86);

  CHECK(read_file(fs::path(out) / "leakage.csv") == r.output);
}

TEST_CASE("privacy rejects a zero repetition count") {
  CHECK(run_cli("privacy --reps 0").exit_code == 1);
}

TEST_CASE("gradcheck passes on a healthy net and flags a corrupted one") {
  const std::string out = in_scratch("gc");
  const CommandResult pass = run_cli("gradcheck --arch " + in_scratch("tiny_arch.json") +
                                     " --seed 2 --samples 3 --out " + out);
  CHECK(pass.exit_code == 0);
  CHECK(count_lines_with(pass.output, "sample ") == 3);
  CHECK(count_lines_with(pass.output, " pass") == 4);  // three samples plus the verdict
  CHECK(count_lines_with(pass.output, "FAIL") == 0);
  CHECK(pass.output.find("gradcheck: pass") != std::string::npos);
  CHECK(read_file(fs::path(out) / "gradcheck.txt").find("gradcheck: pass") != std::string::npos);

  const CommandResult corrupt =
      run_cli("gradcheck --arch " + in_scratch("tiny_arch.json") + " --samples 2 --corrupt");
  CHECK(corrupt.exit_code == 3);
  CHECK(corrupt.output.find("gradcheck: FAIL") != std::string::npos);
}

TEST_CASE("usage errors exit with the configuration code") {
  const CommandResult missing_arch = run_cli("gradcheck --arch nowhere.json");
  CHECK(missing_arch.exit_code == 1);
  CHECK(missing_arch.output.find("cannot open architecture file") != std::string::npos);

  const CommandResult bad_method =
      run_cli("simulate --config " + in_scratch("tiny_bad_method.json"));
  CHECK(bad_method.exit_code == 1);
  CHECK(bad_method.output.find("unknown method: fedsgd") != std::string::npos);

  CHECK(run_cli("simulate --config nowhere.json").exit_code == 1);
  CHECK(run_cli("").exit_code == 1);  // a subcommand is required
  CHECK(run_cli("simulate --config " + in_scratch("tiny_fbftl.json") + " --frobnicate")
            .exit_code == 1);
}

TEST_CASE("a diverging run exits with the numeric code") {
  const CommandResult r = run_cli("simulate --config " + in_scratch("tiny_divergent.json") +
                                  " --out " + in_scratch("div"));
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("numeric fault: training diverged") != std::string::npos);
  CHECK(r.output.find("recent_losses=") != std::string::npos);
}
