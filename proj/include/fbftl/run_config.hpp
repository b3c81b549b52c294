#pragma once

#include "json.hpp"
#include <optional>
#include <string>
#include <vector>

#include "fbftl/fed_sim.hpp"

namespace fbftl {

struct SyntheticSpec {
  int classes = 0;
  int dim = 0;
  int per_class = 0;
  double separation = 4.0;
};

struct SourceTrainingSpec {
  int epochs = 30;
  int batch_size = 32;
  OptimizerConfig optimizer;
};

// One simulate invocation, parsed from JSON. Paths resolve against the
// config file's directory.
struct RunSpec {
  std::uint64_t seed = 1;
  bool equivalence = false;  // run the matched FTL_c / FbFTL pair instead of one method
  ArchitectureSpec arch;
  std::optional<std::string> csv_path;
  std::vector<std::string> expected_classes;
  std::optional<SyntheticSpec> synthetic;
  std::vector<int> source_classes;  // empty pair of lists = no transfer split
  std::vector<int> target_classes;
  double test_fraction = 1.0 / 3.0;
  double val_fraction = 0.15;
  FederationConfig federation;
  SourceTrainingSpec source_training;
};

OptimizerConfig parse_optimizer(const nlohmann::json& j);
RunSpec parse_run_spec(const nlohmann::json& j, const std::string& base_dir);
RunSpec load_run_spec(const std::string& path);

// Data generation/loading, transfer split, test/val carving, standardization
// from training statistics, client partitioning, and source pretraining when
// the method transfers. Everything derives from spec.seed.
SimData build_sim_data(const RunSpec& spec);

// Central mini-batch training used for the source task.
DenseNet train_centrally(const ArchitectureSpec& arch, const Eigen::MatrixXd& X,
                         const std::vector<int>& labels, const SourceTrainingSpec& spec,
                         std::uint64_t seed);

// FNV-1a over the canonical (sorted-key) dump; ties every output artifact to
// the exact effective configuration.
std::uint64_t config_hash(const nlohmann::json& effective);
std::string hash_hex(std::uint64_t h);

std::string metrics_csv(const RunResult& result, const std::string& config_hash_hex,
                        std::uint64_t seed);
nlohmann::json run_summary(const RunResult& result, const std::string& config_hash_hex,
                           std::uint64_t seed);
nlohmann::json equivalence_summary(const EquivalenceResult& eq,
                                   const std::string& config_hash_hex, std::uint64_t seed,
                                   double tolerance);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace fbftl
