#pragma once

// Seeded sweeps, the memorization experiment and information-plane output.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ceb/evalkit.hpp"
#include "ceb/model.hpp"
#include "ceb/tabular.hpp"

namespace ceb {

inline constexpr int kConfigSchemaVersion = 1;

/// 64-bit FNV-1a of a string, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& text);
/// Hash of the compact JSON dump (keys are sorted by nlohmann::json).
std::string config_hash(const nlohmann::json& j);

struct ExperimentConfig {
  nlohmann::json dataset = MixtureSpec{}.to_json();
  int test_per_class = 100;
  std::uint64_t data_seed = 0;
  std::vector<std::string> objectives{"vceb"};
  std::vector<double> rho_grid{0.0};
  std::vector<std::uint64_t> seeds{0};
  ModelConfig model;  // kind, rho, input_dim and classes are filled per run
  TrainConfig train;  // seed is filled per run
  std::string output_dir = "out";
  int workers = 1;
  bool save_checkpoints = true;

  void validate() const;
  nlohmann::json to_json() const;
  /// Rejects unknown keys and a missing or unsupported schema_version.
  static ExperimentConfig from_json(const nlohmann::json& j);
};

struct RunRecord {
  std::string objective;
  std::optional<double> rho;  // absent for the deterministic baseline
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string trace_path;
  std::string checkpoint_prefix;
  bool ok = false;
  std::string error;
  double final_train_acc = 0;
  double final_test_acc = 0;
  double max_rate_lower_bound = 0;
  double final_residual = 0;
  double final_rate = 0;

  nlohmann::json to_json() const;
};

struct SweepManifest {
  nlohmann::json config;
  std::vector<RunRecord> runs;

  bool all_ok() const;
  nlohmann::json to_json() const;
};

/// The train/test pair an experiment config describes.
std::pair<Dataset, Dataset> experiment_datasets(const ExperimentConfig& config);

/// One training run per (objective, rho, seed); the deterministic baseline
/// ignores rho and runs once per seed. Runs execute on `workers` threads and
/// are merged in (objective, rho, seed) order. A failed run is recorded, not
/// rethrown. Writes <output_dir>/manifest.json.
SweepManifest run_sweep(const ExperimentConfig& config);

struct MemorizationConfig {
  int examples = 256;
  int classes = 10;
  int dim = 16;
  std::vector<std::string> objectives{"determ", "vceb"};
  double rho = 0.0;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  ModelConfig model;
  TrainConfig train;
  double learned_threshold = 0.9;
  double chance_ceiling = 0.15;

  void validate() const;
  static MemorizationConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct MemorizationRun {
  std::string objective;
  std::uint64_t seed = 0;
  std::vector<std::pair<int, double>> train_accuracy;  // (step, accuracy)
  double max_train_acc = 0;
  double final_train_acc = 0;
  bool learned = false;          // max accuracy reached learned_threshold
  bool stayed_at_chance = false; // every evaluation at or below chance_ceiling
};

struct MemorizationReport {
  double chance = 0;
  std::vector<MemorizationRun> runs;
  nlohmann::json to_json() const;
};

/// Random labels on uniform inputs in [0, 1]^dim (both fixed per seed); trains
/// every objective on the same labelled set.
MemorizationReport run_memorization(const MemorizationConfig& config);

/// CSV columns rho,i_xz,i_yz,residual,converged (values in nats or bits).
void emit_plane_csv(std::ostream& out, const std::vector<PlanePoint>& points, bool bits);
/// Static scatter of the points in the information plane with the feasible
/// boundary lines i_yz = i_xz and i_yz = mutual_information.
void emit_plane_svg(std::ostream& out, const std::vector<PlanePoint>& points, double mutual_information, bool bits);

}  // namespace ceb
