// Command-line front end: pre-training, contrastive-accuracy evaluation,
// linear probing, the two correlation experiments, and checkpoint
// inspection.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "tsca/config.hpp"
#include "tsca/evaluate.hpp"
#include "tsca/harness.hpp"
#include "tsca/training.hpp"

namespace {

namespace fs = std::filesystem;

struct CommonOpts {
  std::string data_root;
  std::string config_path;
  std::string out_dir = "out";
  std::string profile = "desk";
  std::uint64_t seed = 0;
  int jobs = 1;
  bool deterministic = false;
  bool no_znorm = false;
};

void add_common_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--data-root", o.data_root, "Directory with <Name>_TRAIN.tsv / <Name>_TEST.tsv");
  cmd->add_option("--config", o.config_path, "JSON config file");
  cmd->add_option("--seed", o.seed, "Base seed");
  cmd->add_option("--out", o.out_dir, "Output directory");
  cmd->add_option("--jobs", o.jobs, "Parallel experiment conditions")->check(CLI::PositiveNumber);
  cmd->add_flag("--deterministic", o.deterministic,
                "Single-threaded, bit-exact reproducible execution");
  cmd->add_option("--profile", o.profile, "desk (reduced epochs) or paper (full settings)")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_flag("--no-znorm", o.no_znorm, "Disable per-series z-normalization");
}

nlohmann::json load_config_file(const std::string& path) {
  if (path.empty()) return nlohmann::json();
  std::ifstream in(path);
  if (!in) throw tsca::IoError("cannot open config file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw tsca::ConfigError(path + ": " + e.what());
  }
}

tsca::ExperimentConfig build_config(const CommonOpts& o) {
  auto cfg = tsca::make_experiment_config(load_config_file(o.config_path), o.profile);
  cfg.data_root = o.data_root;
  cfg.seed = o.seed;
  cfg.jobs = o.deterministic ? 1 : o.jobs;
  cfg.deterministic = o.deterministic;
  if (o.no_znorm) cfg.znormalize = false;
  if (o.deterministic) tsca::set_compute_threads(1);
  return cfg;
}

tsca::CanonicalizeOptions canon(const tsca::ExperimentConfig& cfg) {
  return {cfg.encoder.seq_len, cfg.znormalize};
}

int cmd_pretrain(const CommonOpts& o, const std::string& dataset) {
  auto cfg = build_config(o);
  if (cfg.data_root.empty()) throw tsca::ConfigError("--data-root is required");
  const auto d = tsca::load_dataset(cfg.data_root, dataset, canon(cfg));
  tsca::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const auto result = tsca::pretrain(d, tc, cfg.encoder, cfg.aug);

  fs::create_directories(o.out_dir);
  const fs::path path = fs::path(o.out_dir) / "checkpoint.tsca";
  tsca::save_checkpoint(result.checkpoint, path);

  nlohmann::ordered_json j;
  j["dataset"] = dataset;
  j["train_size"] = d.train.size();
  j["epochs"] = tc.epochs;
  j["first_epoch_loss"] = result.epoch_losses.empty() ? 0.0 : result.epoch_losses.front();
  j["final_epoch_loss"] = result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back();
  j["checkpoint"] = path.string();
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_eval_ca(const CommonOpts& o, const std::string& ckpt_path, const std::string& dataset) {
  auto cfg = build_config(o);
  if (cfg.data_root.empty()) throw tsca::ConfigError("--data-root is required");
  const auto ckpt = tsca::load_checkpoint(ckpt_path);
  const auto d = tsca::load_dataset(cfg.data_root, dataset,
                                    {ckpt.params.cfg.seq_len, cfg.znormalize});
  tsca::CAConfig ca = cfg.ca;
  ca.seed = cfg.seed;
  const double value = tsca::contrastive_accuracy(ckpt, tsca::series_pool(d), ca, cfg.aug);
  nlohmann::ordered_json j;
  j["dataset"] = dataset;
  j["checkpoint"] = ckpt_path;
  j["draws"] = ca.draws;
  j["ca"] = value;
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_probe(const CommonOpts& o, const std::string& ckpt_path, const std::string& dataset,
              bool freeze) {
  auto cfg = build_config(o);
  if (cfg.data_root.empty()) throw tsca::ConfigError("--data-root is required");
  const auto ckpt = tsca::load_checkpoint(ckpt_path);
  const auto task = tsca::load_dataset(cfg.data_root, dataset,
                                       {ckpt.params.cfg.seq_len, cfg.znormalize});
  tsca::ProbeConfig pc = cfg.probe;
  pc.seed = cfg.seed;
  if (freeze) pc.freeze_encoder = true;
  const auto r = tsca::fit_probe(ckpt, task, pc);
  nlohmann::ordered_json j;
  j["dataset"] = dataset;
  j["train_accuracy"] = r.train_accuracy;
  j["test_accuracy"] = r.test_accuracy;
  j["degenerate"] = r.degenerate;
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_experiment(const CommonOpts& o, bool subset) {
  auto cfg = build_config(o);
  const auto report =
      subset ? tsca::run_subset_experiment(cfg) : tsca::run_improvement_experiment(cfg);
  tsca::write_report_files(report, o.out_dir);
  nlohmann::ordered_json j;
  j["experiment"] = report.kind;
  j["rows"] = report.rows.size();
  j["summary"] = report.summary;
  j["report"] = (fs::path(o.out_dir) / "report.json").string();
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_inspect(const std::string& ckpt_path) {
  const auto ckpt = tsca::load_checkpoint(ckpt_path);
  std::cout << tsca::checkpoint_header(ckpt).dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive time-series pre-training and data-quality evaluation"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string dataset, ckpt_path;
  bool freeze = false;

  auto* pretrain = app.add_subcommand("pretrain", "Contrastive pre-training on one dataset");
  add_common_flags(pretrain, opts);
  pretrain->add_option("--dataset", dataset, "Dataset name")->required();

  auto* eval_ca = app.add_subcommand("eval-ca", "Contrastive accuracy of a checkpoint on a dataset");
  add_common_flags(eval_ca, opts);
  eval_ca->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  eval_ca->add_option("--dataset", dataset, "Evaluation dataset name")->required();

  auto* probe = app.add_subcommand("probe", "Classification head fine-tuning on one task");
  add_common_flags(probe, opts);
  probe->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  probe->add_option("--dataset", dataset, "Task dataset name")->required();
  probe->add_flag("--freeze-encoder", freeze, "Train only the head");

  auto* exp_subset = app.add_subcommand("exp-subset", "Subset-ratio correlation experiment");
  add_common_flags(exp_subset, opts);

  auto* exp_improve = app.add_subcommand("exp-improve", "Improvement-prediction experiment");
  add_common_flags(exp_improve, opts);

  auto* inspect = app.add_subcommand("inspect-checkpoint", "Print a checkpoint's header");
  inspect->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (pretrain->parsed()) return cmd_pretrain(opts, dataset);
    if (eval_ca->parsed()) return cmd_eval_ca(opts, ckpt_path, dataset);
    if (probe->parsed()) return cmd_probe(opts, ckpt_path, dataset, freeze);
    if (exp_subset->parsed()) return cmd_experiment(opts, true);
    if (exp_improve->parsed()) return cmd_experiment(opts, false);
    if (inspect->parsed()) return cmd_inspect(ckpt_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
