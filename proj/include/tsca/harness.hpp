#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsca/augment.hpp"
#include "tsca/checkpoint.hpp"
#include "tsca/dataio.hpp"
#include "tsca/evaluate.hpp"
#include "tsca/train_config.hpp"

namespace tsca {

/// The 12 candidate pre-training datasets used by the improvement sweeps.
const std::vector<std::string>& default_candidates();

/// Everything an experiment run needs, assembled from the JSON config
/// file, profile defaults and CLI flags.
struct ExperimentConfig {
  std::string data_root;
  std::uint64_t seed = 0;
  int jobs = 1;
  bool deterministic = false;
  std::string profile = "desk";  // "desk" | "paper"
  bool znormalize = true;

  EncoderConfig encoder;
  TrainConfig train;
  CropResizeConfig aug;
  CAConfig ca;
  ProbeConfig probe;

  // subset experiment
  std::string pretrain_dataset;
  std::vector<double> ratios = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

  // improvement experiment
  std::vector<std::string> candidates;   // defaults to default_candidates()
  std::string sweep_mode = "fix_base";   // "fix_base" | "fix_new" | "pairs"
  std::string fixed_dataset;             // the fixed side of the sweep
  std::vector<std::pair<std::string, std::string>> pairs;  // explicit (base, new)

  // downstream evaluation tasks (both experiments)
  std::vector<std::string> downstream;

  void validate_common() const;
};

/// Applies profile defaults, then the config file, onto built-in defaults.
ExperimentConfig make_experiment_config(const nlohmann::json& file_json,
                                        const std::string& profile);
nlohmann::ordered_json config_echo(const ExperimentConfig& cfg);

struct ReportRow {
  std::string condition;
  double ca = 0;       // contrastive accuracy, or its delta for pair rows
  double p_train = 0;  // averaged probe accuracy (delta for pair rows)
  double p_test = 0;
  double seconds = 0;
  nlohmann::ordered_json extra;  // experiment-specific detail
};

struct ExperimentReport {
  std::string kind;  // "subset" | "improvement"
  nlohmann::ordered_json config_echo;
  std::vector<ReportRow> rows;
  std::map<std::string, double> summary;  // Pearson correlations when defined
  std::vector<std::string> provenance;    // training/cache event log
};

/// Pre-trains on subsampled fractions of one dataset and relates the
/// contrastive accuracy on the full pool to downstream probe accuracy.
ExperimentReport run_subset_experiment(const ExperimentConfig& cfg);

/// For dataset pairs (base, new): trains models on base, new and their
/// union, then relates the contrastive-accuracy gain on the new pool to
/// the downstream accuracy gain of the union model. Checkpoints are
/// cached by pool content + configuration + seed, so shared models train
/// once per sweep.
ExperimentReport run_improvement_experiment(const ExperimentConfig& cfg);

nlohmann::ordered_json report_to_json(const ExperimentReport& report);
std::string report_to_csv(const ExperimentReport& report);

/// Writes <out>/report.json and <out>/report.csv.
void write_report_files(const ExperimentReport& report, const std::filesystem::path& out_dir);

}  // namespace tsca
