#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "support/waveforms.hpp"
#include "tsca/harness.hpp"

using namespace tsca;
namespace fs = std::filesystem;

namespace {

/// Temp data root with one pre-training corpus, two extra candidate
/// corpora and two downstream tasks, all tiny.
struct Fixture {
  fs::path root;

  Fixture() {
    root = fs::temp_directory_path() / "tsca_harness_data";
    fs::remove_all(root);
    testing::write_ucr_tsv(testing::make_waveform_dataset("WavesA", 16, 4, 1), root);
    testing::write_ucr_tsv(testing::make_waveform_dataset("WavesB", 12, 4, 2), root);
    testing::write_ucr_tsv(testing::make_waveform_dataset("WavesC", 12, 4, 3), root);
    testing::write_ucr_tsv(
        testing::make_waveform_dataset("TaskA", 12, 8, 4, {.class_ids = {0, 1}}), root);
    testing::write_ucr_tsv(
        testing::make_waveform_dataset("TaskB", 12, 8, 5, {.class_ids = {1, 2}}), root);
  }
  ~Fixture() {
    std::error_code ec;
    fs::remove_all(root, ec);
  }

  nlohmann::json base_json() const {
    return nlohmann::json::parse(R"({
      "encoder": {"seq_len": 64, "cnn_channels": 8, "token_dim": 8, "layers": 2,
                  "heads": 2, "head_dim": 8, "mlp_dim": 16, "stat_dim": 4,
                  "proj_hidden": 16, "proj_out": 8},
      "train": {"epochs": 4, "warmup_epochs": 1, "batch": 4, "lr": 1e-3},
      "ca": {"draws": 2, "eval_batch": 64},
      "probe": {"epochs": 10, "warmup_epochs": 1, "batch": 32, "freeze_encoder": true},
      "experiment": {
        "pretrain": "WavesA",
        "ratios": [0.25, 0.5, 1.0],
        "downstream": ["TaskA", "TaskB"],
        "candidates": ["WavesA", "WavesB", "WavesC"],
        "mode": "fix_base",
        "fixed": "WavesA"
      }
    })");
  }

  ExperimentConfig config(const nlohmann::json& j, std::uint64_t seed = 11) const {
    auto cfg = make_experiment_config(j, "desk");
    cfg.data_root = root.string();
    cfg.seed = seed;
    return cfg;
  }
};

nlohmann::ordered_json normalized(const ExperimentReport& r) {
  auto j = report_to_json(r);
  for (auto& row : j.at("rows")) row["seconds"] = 0.0;
  return j;
}

}  // namespace

TEST_CASE("config assembly: profiles, file overrides, defaults") {
  auto desk = make_experiment_config(nlohmann::json(), "desk");
  CHECK(desk.train.epochs == 100);
  CHECK(desk.probe.epochs == 100);
  auto paper = make_experiment_config(nlohmann::json(), "paper");
  CHECK(paper.train.epochs == 500);
  CHECK(paper.probe.epochs == 500);
  CHECK(paper.train.batch == 64);
  CHECK(paper.probe.batch == 256);
  CHECK(paper.candidates == default_candidates());
  CHECK(paper.candidates.size() == 12);
  CHECK(paper.ratios.size() == 10);

  auto j = nlohmann::json::parse(
      R"({"train": {"epochs": 7}, "loss": {"symmetric": true}, "dataio": {"znormalize": false}})");
  auto merged = make_experiment_config(j, "desk");
  CHECK(merged.train.epochs == 7);
  CHECK(merged.train.symmetric_loss);
  CHECK(!merged.znormalize);
}

TEST_CASE("subset experiment: degenerate single-ratio grid has no correlations") {
  Fixture fx;
  auto j = fx.base_json();
  j["experiment"]["ratios"] = {1.0};
  const auto report = run_subset_experiment(fx.config(j));
  CHECK(report.kind == "subset");
  REQUIRE(report.rows.size() == 1);
  CHECK(report.rows[0].condition == "r=100%");
  CHECK(report.summary.empty());
}

TEST_CASE("subset experiment: full schema, correlations, csv") {
  Fixture fx;
  const auto report = run_subset_experiment(fx.config(fx.base_json()));
  REQUIRE(report.rows.size() == 3);
  CHECK(report.rows[0].condition == "r=25%");
  CHECK(report.rows[2].condition == "r=100%");
  for (const auto& row : report.rows) {
    CHECK(row.ca >= 0.0);
    CHECK(row.ca <= 1.0);
    CHECK(row.p_train >= 0.0);
    CHECK(row.p_train <= 1.0);
    CHECK(row.p_test >= 0.0);
    CHECK(row.p_test <= 1.0);
  }
  CHECK(report.summary.count("rho_ca_p_test") == 1);
  CHECK(report.summary.count("rho_ca_p_train") == 1);

  const std::string csv = report_to_csv(report);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "condition,ca,p_train,p_test,seconds");
  int rows = 0;
  while (std::getline(lines, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3);

  // the report embeds the effective config and seeds
  const auto j = report_to_json(report);
  CHECK(j.at("config").at("seed").get<std::uint64_t>() == 11);
  CHECK(j.at("config").at("train").at("epochs").get<int>() == 4);
  CHECK(j.at("config").at("experiment").at("pretrain").get<std::string>() == "WavesA");
}

TEST_CASE("subset experiment: deterministic reruns match modulo wall time") {
  Fixture fx;
  auto j = fx.base_json();
  j["experiment"]["ratios"] = {0.5, 1.0};
  const auto a = run_subset_experiment(fx.config(j));
  const auto b = run_subset_experiment(fx.config(j));
  CHECK(normalized(a) == normalized(b));
  CHECK(normalized(a).dump() == normalized(b).dump());
}

TEST_CASE("subset experiment: validation") {
  Fixture fx;
  auto j = fx.base_json();
  j["experiment"]["downstream"] = {"TaskA", "WavesA"};
  CHECK_THROWS_AS(static_cast<void>(run_subset_experiment(fx.config(j))), ConfigError);

  j = fx.base_json();
  j["experiment"]["ratios"] = nlohmann::json::array();
  CHECK_THROWS_AS(static_cast<void>(run_subset_experiment(fx.config(j))), ConfigError);

  j = fx.base_json();
  j["experiment"]["pretrain"] = "DoesNotExist";
  CHECK_THROWS_WITH_AS(static_cast<void>(run_subset_experiment(fx.config(j))),
                       doctest::Contains("DoesNotExist"), IoError);
}

TEST_CASE("improvement experiment: sweep rows, correlation, checkpoint cache") {
  Fixture fx;
  const auto report = run_improvement_experiment(fx.config(fx.base_json()));
  CHECK(report.kind == "improvement");
  REQUIRE(report.rows.size() == 2);  // fix_base over {WavesB, WavesC}
  CHECK(report.rows[0].condition == "WavesA+WavesB");
  CHECK(report.rows[1].condition == "WavesA+WavesC");
  CHECK(report.summary.count("rho_dca_dp_test") == 1);

  // five distinct pools train once each: A, B, C, A+B, A+C; the shared
  // base model must be a cache hit on its second use
  int trained = 0, hits = 0;
  for (const auto& line : report.provenance) {
    if (line.rfind("pretrain ", 0) == 0) ++trained;
    if (line.rfind("cache-hit ", 0) == 0) ++hits;
  }
  CHECK(trained == 5);
  CHECK(hits >= 1);

  for (const auto& row : report.rows) {
    CHECK(row.extra.at("degenerate_pair").get<bool>() == false);
    CHECK(std::abs(row.ca) <= 1.0);
  }
}

TEST_CASE("improvement experiment: explicit pairs and the self-pair edge case") {
  Fixture fx;
  auto j = fx.base_json();
  j["experiment"]["mode"] = "pairs";
  j["experiment"]["pairs"] = nlohmann::json::array(
      {nlohmann::json::array({"WavesB", "WavesB"}), nlohmann::json::array({"WavesB", "WavesC"})});
  const auto report = run_improvement_experiment(fx.config(j));
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].extra.at("degenerate_pair").get<bool>());
  // both CA terms of the self-pair share model and pool
  CHECK(report.rows[0].ca == 0.0);
  CHECK(!report.rows[1].extra.at("degenerate_pair").get<bool>());
}

TEST_CASE("improvement experiment: candidate/downstream overlap rejected") {
  Fixture fx;
  auto j = fx.base_json();
  j["experiment"]["candidates"] = {"WavesA", "TaskA"};
  CHECK_THROWS_WITH_AS(static_cast<void>(run_improvement_experiment(fx.config(j))),
                       doctest::Contains("TaskA"), ConfigError);

  j = fx.base_json();
  j["experiment"]["mode"] = "fix_base";
  j["experiment"]["fixed"] = "NotACandidate";
  CHECK_THROWS_AS(static_cast<void>(run_improvement_experiment(fx.config(j))), ConfigError);
}

TEST_CASE("improvement experiment: fix_new sweep direction") {
  Fixture fx;
  auto j = fx.base_json();
  j["experiment"]["mode"] = "fix_new";
  j["experiment"]["candidates"] = {"WavesA", "WavesB"};
  j["experiment"]["fixed"] = "WavesB";
  const auto report = run_improvement_experiment(fx.config(j));
  REQUIRE(report.rows.size() == 1);
  CHECK(report.rows[0].extra.at("base").get<std::string>() == "WavesA");
  CHECK(report.rows[0].extra.at("new").get<std::string>() == "WavesB");
}

TEST_CASE("report files: json and csv written") {
  Fixture fx;
  auto j = fx.base_json();
  j["experiment"]["ratios"] = {1.0};
  const auto report = run_subset_experiment(fx.config(j));
  const fs::path out = fs::temp_directory_path() / "tsca_harness_out";
  fs::remove_all(out);
  write_report_files(report, out);
  CHECK(fs::exists(out / "report.json"));
  CHECK(fs::exists(out / "report.csv"));
  std::ifstream in(out / "report.json");
  const auto parsed = nlohmann::json::parse(in);
  CHECK(parsed.at("experiment") == "subset");
  CHECK(parsed.at("rows").size() == 1);
  fs::remove_all(out);
}

TEST_CASE("parallel jobs produce the same rows as a sequential run") {
  Fixture fx;
  auto j = fx.base_json();
  auto sequential = fx.config(j);
  auto parallel = fx.config(j);
  parallel.jobs = 3;
  const auto a = run_subset_experiment(sequential);
  const auto b = run_subset_experiment(parallel);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].condition == b.rows[i].condition);
    CHECK(a.rows[i].ca == b.rows[i].ca);
    CHECK(a.rows[i].p_train == b.rows[i].p_train);
    CHECK(a.rows[i].p_test == b.rows[i].p_test);
  }
}
