// Acceptance suite: one pass/fail line per criterion. Usage:
//   acceptance <path-to-cli> [criterion ids...]
// With no ids, every criterion runs. Exit code 0 iff all selected pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "support/tiny_config.hpp"
#include "support/waveforms.hpp"
#include "tsca/checkpoint.hpp"
#include "tsca/evaluate.hpp"
#include "tsca/harness.hpp"
#include "tsca/training.hpp"

using namespace tsca;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

std::string g_cli_path;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

// -------------------------------------------------------------------
// 1. gradient correctness on the tiny configuration
// -------------------------------------------------------------------

double pipeline_loss(const EncoderParamsT<double>& p, const std::vector<Eigen::VectorXd>& batch,
                     const std::vector<CropDraw>& draws, double temperature) {
  const int b = static_cast<int>(batch.size());
  MatX<double> views(2 * b, p.cfg.seq_len);
  for (int i = 0; i < b; ++i) {
    views.row(i) = apply_crop_resize(draws[static_cast<std::size_t>(i)],
                                     batch[static_cast<std::size_t>(i)], p.cfg.seq_len)
                       .transpose();
    views.row(b + i) = apply_crop_resize(draws[static_cast<std::size_t>(b + i)],
                                         batch[static_cast<std::size_t>(i)], p.cfg.seq_len)
                           .transpose();
  }
  MatX<double> proj = project_batch(p, encode_batch(p, views));
  MatX<double> sim =
      similarity_rows(MatX<double>(proj.topRows(b)), MatX<double>(proj.bottomRows(b)));
  return info_nce(sim, temperature);
}

bool criterion_gradients(std::string& detail) {
  const auto t0 = Clock::now();
  auto params = init_params<double>(testing::tiny_encoder_config(), 2026);
  std::mt19937_64 rng(41);
  std::normal_distribution<double> dist(0, 1);
  std::vector<Eigen::VectorXd> batch(3);
  for (auto& s : batch) {
    s.resize(params.cfg.seq_len);
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = dist(rng);
  }
  CropResizeConfig aug;
  aug.out_len = params.cfg.seq_len;
  auto draw_rng = make_rng(42);
  std::vector<CropDraw> draws(6);
  for (auto& d : draws) d = sample_crop(draw_rng, aug, params.cfg.seq_len);

  const auto lg = loss_and_gradients(params, batch, draws, 0.1);

  std::vector<MatX<double>*> tensors;
  std::vector<std::string> names;
  params.for_each_tensor([&](const std::string& n, MatX<double>& t) {
    tensors.push_back(&t);
    names.push_back(n);
  });
  std::vector<const MatX<double>*> grads;
  lg.grads.for_each_tensor(
      [&](const std::string&, const MatX<double>& t) { grads.push_back(&t); });

  const double h = 1e-4;
  double worst = 0;
  std::string worst_tensor;
  for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
    for (Eigen::Index e = 0; e < tensors[ti]->size(); ++e) {
      double& slot = tensors[ti]->data()[e];
      const double orig = slot;
      slot = orig + h;
      const double lp = pipeline_loss(params, batch, draws, 0.1);
      slot = orig - h;
      const double lm = pipeline_loss(params, batch, draws, 0.1);
      slot = orig;
      const double fd = (lp - lm) / (2 * h);
      const double an = grads[ti]->data()[e];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      if (rel > worst) {
        worst = rel;
        worst_tensor = names[ti];
      }
    }
  }
  const double secs = seconds_since(t0);
  detail = "max relative error " + fmt("%.2e", worst) + " (" + worst_tensor + "), " +
           fmt("%.1f", secs) + "s";
  return worst < 1e-3 && secs < 120.0;
}

// -------------------------------------------------------------------
// 2. InfoNCE against explicit softmax cross-entropy
// -------------------------------------------------------------------

bool criterion_infonce(std::string& detail) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> dist(0, 1);
  std::uniform_int_distribution<int> size(2, 8);
  double worst = 0;
  for (int it = 0; it < 100; ++it) {
    const int b = size(rng);
    MatX<double> sim(b, b);
    for (Eigen::Index i = 0; i < sim.size(); ++i) sim.data()[i] = dist(rng);
    for (const double t : {0.1, 1.0}) {
      double expected = 0;
      for (int i = 0; i < b; ++i) {
        double denom = 0;
        for (int j = 0; j < b; ++j) denom += std::exp(sim(i, j) / t);
        expected += -std::log(std::exp(sim(i, i) / t) / denom);
      }
      worst = std::max(worst, std::abs(info_nce(sim, t) - expected));
    }
  }

  MatX<double> one(1, 1);
  one << 0.73;
  const double singleton = info_nce(one, 0.1);
  double uniform_err = 0;
  for (int b = 2; b <= 8; ++b) {
    const MatX<double> u = MatX<double>::Constant(b, b, -0.4);
    uniform_err = std::max(uniform_err,
                           std::abs(info_nce(u, 0.1) - b * std::log(static_cast<double>(b))));
  }
  detail = "max |err| " + fmt("%.2e", std::max({worst, singleton, uniform_err})) +
           " over 100 random matrices + closed forms";
  return worst < 1e-6 && singleton == 0.0 && uniform_err < 1e-9;
}

// -------------------------------------------------------------------
// 3. contrastive accuracy vs exhaustive nearest-neighbor oracle
// -------------------------------------------------------------------

std::vector<Eigen::VectorXd> tagged_series(int n) {
  std::vector<Eigen::VectorXd> out;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(16);
    s[0] = static_cast<double>(i);
    out.push_back(std::move(s));
  }
  return out;
}

bool criterion_ca_oracle(std::string& detail) {
  std::mt19937_64 rng(19);
  std::normal_distribution<float> dist(0, 1);
  CropResizeConfig aug;
  aug.out_len = 16;
  bool ok = true;
  for (const int n : {2, 3, 8, 17, 32}) {
    auto vectors = std::make_shared<MatXf>(n, 24);
    for (Eigen::Index i = 0; i < vectors->size(); ++i) vectors->data()[i] = dist(rng);
    ViewProjector stub = [vectors](const std::vector<Eigen::VectorXd>& series,
                                   const CropDraw&) -> MatXf {
      MatXf out(static_cast<Eigen::Index>(series.size()), vectors->cols());
      for (std::size_t i = 0; i < series.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = vectors->row(static_cast<int>(series[i][0]));
      return out;
    };
    CAConfig cfg;
    cfg.draws = 3;
    cfg.seed = static_cast<std::uint64_t>(n);
    const double ca = contrastive_accuracy(stub, tagged_series(n), cfg, aug);

    int matches = 0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      float best_val = -2;
      for (int j = 0; j < n; ++j) {
        const float v = cosine_similarity(VecX<float>(vectors->row(i).transpose()),
                                          VecX<float>(vectors->row(j).transpose()));
        if (v > best_val) {
          best_val = v;
          best = j;
        }
      }
      matches += (best == i);
    }
    ok = ok && ca == static_cast<double>(matches) / n;
  }

  // all projections identical: lowest-index tie break gives exactly 1/n
  const int n = 24;
  auto flat = std::make_shared<MatXf>(MatXf::Constant(n, 8, 0.5f));
  ViewProjector stub = [flat](const std::vector<Eigen::VectorXd>& series,
                              const CropDraw&) -> MatXf {
    MatXf out(static_cast<Eigen::Index>(series.size()), flat->cols());
    for (std::size_t i = 0; i < series.size(); ++i)
      out.row(static_cast<Eigen::Index>(i)) = flat->row(static_cast<int>(series[i][0]));
    return out;
  };
  CAConfig cfg;
  cfg.draws = 2;
  cfg.seed = 5;
  const double degenerate = contrastive_accuracy(stub, tagged_series(n), cfg, aug);
  ok = ok && degenerate == 1.0 / n;
  detail = std::string("exact match for n in {2,3,8,17,32}; degenerate case = 1/n ") +
           (ok ? "held" : "violated");
  return ok;
}

// -------------------------------------------------------------------
// 4. chance baseline for i.i.d. Gaussian projections
// -------------------------------------------------------------------

bool criterion_ca_chance(std::string& detail) {
  const int n = 256;
  CAConfig cfg;
  cfg.draws = 40;  // 40 draws x 256 examples = 10240 trials
  cfg.eval_batch = 256;
  cfg.seed = 31;
  CropResizeConfig aug;
  aug.out_len = 16;
  auto rng = std::make_shared<std::mt19937_64>(808);
  ViewProjector gaussian = [rng](const std::vector<Eigen::VectorXd>& series,
                                 const CropDraw&) -> MatXf {
    std::normal_distribution<float> dist(0, 1);
    MatXf out(static_cast<Eigen::Index>(series.size()), 256);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = dist(*rng);
    return out;
  };
  const double ca = contrastive_accuracy(gaussian, tagged_series(n), cfg, aug);
  const double chance = 1.0 / 256.0;
  const double se = std::sqrt(chance * (1 - chance) / (40.0 * 256.0));
  detail = "estimate " + fmt("%.5f", ca) + " vs 1/256 = " + fmt("%.5f", chance) + " (3 SE = " +
           fmt("%.5f", 3 * se) + ")";
  return std::abs(ca - chance) <= 3 * se;
}

// -------------------------------------------------------------------
// 5. training smoke on the synthetic waveform corpus
// -------------------------------------------------------------------

bool criterion_training_smoke(std::string& detail) {
  const auto t0 = Clock::now();
  EncoderConfig ec;  // full-size configuration
  TrainConfig tc;
  tc.epochs = 50;
  tc.warmup_epochs = 10;
  tc.batch = 64;
  tc.seed = 7;
  CropResizeConfig ac;

  const auto pool_ds = canonicalize(testing::make_waveform_dataset("SmokePool", 300, 0, 10));
  const auto held_out = canonicalize(testing::make_waveform_dataset("SmokeHeld", 200, 0, 11));
  const auto task = canonicalize(testing::make_waveform_dataset("SmokeTask", 150, 150, 12));

  const auto result = pretrain(pool_ds, tc, ec, ac);
  const double first = result.epoch_losses.front();
  const double last = result.epoch_losses.back();
  const bool loss_ok = last <= 0.7 * first;

  CAConfig ca_cfg;
  ca_cfg.seed = 3;  // defaults: 10 draws, eval batch 256
  const double ca = contrastive_accuracy(result.checkpoint, series_pool(held_out), ca_cfg, ac);
  const double ca_floor = 5.0 / tc.batch;
  const bool ca_ok = ca >= ca_floor;

  ProbeConfig probe;
  probe.freeze_encoder = true;  // linear probe on frozen features
  probe.epochs = 150;
  probe.warmup_epochs = 15;
  probe.batch = 150;
  probe.lr = 1e-3;
  probe.seed = 5;
  const auto pr = fit_probe(result.checkpoint, task, probe);
  const bool probe_ok = pr.test_accuracy >= 0.90;

  const double secs = seconds_since(t0);
  detail = "loss " + fmt("%.3f", first) + " -> " + fmt("%.3f", last) + " (need <= " +
           fmt("%.3f", 0.7 * first) + "); held-out CA " + fmt("%.3f", ca) + " (floor " +
           fmt("%.3f", ca_floor) + "); probe test acc " + fmt("%.3f", pr.test_accuracy) +
           " (floor 0.90); " + fmt("%.0f", secs) + "s";
  return loss_ok && ca_ok && probe_ok;
}

// -------------------------------------------------------------------
// 6. subset-ratio sign check through the experiment harness
// -------------------------------------------------------------------

bool criterion_subset_sign(std::string& detail) {
  const fs::path root = fs::temp_directory_path() / "tsca_acceptance_subset";
  fs::remove_all(root);

  // a small, frequency-diverse pool (six shape/band modes over a wide
  // cycle range) so low subsampling ratios are genuinely coverage-starved
  testing::WaveformOptions pool_opt;
  pool_opt.class_ids = {0, 1, 2, 3, 4, 5};
  pool_opt.split_bands = true;
  pool_opt.noise = 0.8;
  pool_opt.max_cycles = 20.0;
  testing::write_ucr_tsv(testing::make_waveform_dataset("SignPool", 48, 4, 21, pool_opt), root);

  testing::WaveformOptions six = pool_opt;
  six.noise = 1.0;
  testing::write_ucr_tsv(testing::make_waveform_dataset("SignTaskAll", 30, 240, 22, six), root);
  auto band_task = [&root](const char* name, std::vector<int> ids, std::uint64_t seed) {
    testing::WaveformOptions o;
    o.class_ids = std::move(ids);
    o.split_bands = true;
    o.noise = 1.2;
    o.max_cycles = 20.0;
    testing::write_ucr_tsv(testing::make_waveform_dataset(name, 20, 160, seed, o), root);
  };
  band_task("SignTaskSine", {0, 3}, 23);
  band_task("SignTaskSquare", {1, 4}, 24);
  band_task("SignTaskSaw", {2, 5}, 25);
  testing::WaveformOptions shapes;
  shapes.noise = 1.4;
  shapes.max_cycles = 20.0;
  testing::write_ucr_tsv(testing::make_waveform_dataset("SignTaskShape", 15, 180, 26, shapes),
                         root);

  // a reduced (but non-trivial) encoder keeps 4 x 100 epochs tractable
  const auto file_json = nlohmann::json::parse(R"({
    "encoder": {"cnn_channels": 64, "token_dim": 64, "layers": 3, "heads": 4,
                "head_dim": 32, "mlp_dim": 128, "stat_dim": 8,
                "proj_hidden": 128, "proj_out": 64},
    "train": {"epochs": 100, "warmup_epochs": 10, "batch": 12},
    "ca": {"draws": 10},
    "probe": {"epochs": 100, "warmup_epochs": 10, "batch": 256, "lr": 2e-4},
    "experiment": {
      "pretrain": "SignPool",
      "ratios": [0.25, 0.5, 0.75, 1.0],
      "downstream": ["SignTaskAll", "SignTaskSine", "SignTaskSquare",
                     "SignTaskSaw", "SignTaskShape"]
    }
  })");
  auto cfg = make_experiment_config(file_json, "desk");
  cfg.data_root = root.string();
  cfg.seed = 1;

  const auto report = run_subset_experiment(cfg);
  fs::remove_all(root);

  std::ostringstream rows;
  for (const auto& r : report.rows)
    rows << " [" << r.condition << " ca=" << fmt("%.3f", r.ca)
         << " p_test=" << fmt("%.3f", r.p_test) << "]";
  const auto rho = report.summary.find("rho_ca_p_test");
  if (rho == report.summary.end()) {
    detail = "correlation undefined;" + rows.str();
    return false;
  }
  detail = "rho(CA, P_test) = " + fmt("%.3f", rho->second) + ";" + rows.str();
  return rho->second > 0.0;
}

// -------------------------------------------------------------------
// 7. bit-identical checkpoints from --deterministic CLI runs
// -------------------------------------------------------------------

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool criterion_determinism(std::string& detail) {
  if (g_cli_path.empty()) {
    detail = "CLI path not supplied";
    return false;
  }
  const fs::path root = fs::temp_directory_path() / "tsca_acceptance_det";
  fs::remove_all(root);
  testing::write_ucr_tsv(testing::make_waveform_dataset("DetPool", 72, 4, 31), root);
  const fs::path cfg_path = root / "cfg.json";
  {
    std::ofstream cfg(cfg_path);
    cfg << R"({"train": {"epochs": 2, "warmup_epochs": 1, "batch": 64}})";
  }
  auto run = [&](const char* out_dir) {
    const std::string cmd = g_cli_path + " pretrain --dataset DetPool --data-root " +
                            root.string() + " --config " + cfg_path.string() +
                            " --seed 99 --deterministic --out " + (root / out_dir).string() +
                            " > /dev/null";
    return std::system(cmd.c_str());
  };
  if (run("a") != 0 || run("b") != 0) {
    detail = "CLI invocation failed";
    fs::remove_all(root);
    return false;
  }
  const auto a = slurp(root / "a" / "checkpoint.tsca");
  const auto b = slurp(root / "b" / "checkpoint.tsca");
  fs::remove_all(root);
  detail = "two runs, " + std::to_string(a.size()) + " bytes each, " +
           (a == b ? "identical" : "DIFFERENT");
  return !a.empty() && a == b;
}

// -------------------------------------------------------------------
// 8. checkpoint format: round trip and rejection of corrupt files
// -------------------------------------------------------------------

bool criterion_checkpoint_format(std::string& detail) {
  Checkpoint ckpt;
  ckpt.params = init_params<float>(testing::tiny_encoder_config(), 17);
  ckpt.aug.out_len = ckpt.params.cfg.seq_len;
  ckpt.seed = 17;
  ckpt.epochs_run = 3;
  ckpt.final_loss = 0.5;

  const fs::path path = fs::temp_directory_path() / "tsca_acceptance_ckpt.tsca";
  save_checkpoint(ckpt, path);
  const auto loaded = load_checkpoint(path);
  bool roundtrip = true;
  {
    std::vector<const MatXf*> a, b;
    ckpt.params.for_each_tensor([&](const std::string&, const MatXf& t) { a.push_back(&t); });
    loaded.params.for_each_tensor([&](const std::string&, const MatXf& t) { b.push_back(&t); });
    for (std::size_t i = 0; i < a.size(); ++i)
      roundtrip = roundtrip && a[i]->size() == b[i]->size() &&
                  (a[i]->size() == 0 || (*a[i] - *b[i]).cwiseAbs().maxCoeff() == 0.0f);
  }

  auto expect_format_error = [&](const std::function<void(std::vector<char>&)>& corrupt) {
    auto bytes = slurp(path);
    corrupt(bytes);
    const fs::path bad = fs::temp_directory_path() / "tsca_acceptance_bad.tsca";
    std::ofstream out(bad, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    try {
      (void)load_checkpoint(bad);
      return false;
    } catch (const FormatError&) {
      return true;
    } catch (...) {
      return false;
    }
  };

  const bool magic_rejected = expect_format_error([](std::vector<char>& b) { b[0] = 'Z'; });
  const bool trunc_rejected =
      expect_format_error([](std::vector<char>& b) { b.resize(b.size() - 40); });
  const bool shape_rejected = expect_format_error([](std::vector<char>& b) {
    std::string s(b.begin(), b.end());
    const std::string needle = "\"cnn.weight\":{\"shape\":[17,";
    const auto at = s.find(needle);
    if (at != std::string::npos) s[at + needle.size() - 3] = '9';
    b.assign(s.begin(), s.end());
  });
  std::error_code ec;
  fs::remove(path, ec);
  fs::remove(fs::temp_directory_path() / "tsca_acceptance_bad.tsca", ec);

  detail = std::string("round trip ") + (roundtrip ? "bit-exact" : "BROKEN") +
           "; rejected: magic=" + (magic_rejected ? "yes" : "no") +
           " truncation=" + (trunc_rejected ? "yes" : "no") +
           " shape=" + (shape_rejected ? "yes" : "no");
  return roundtrip && magic_rejected && trunc_rejected && shape_rejected;
}

// -------------------------------------------------------------------
// 9. schedule and optimizer unit values
// -------------------------------------------------------------------

bool criterion_schedule_optimizer(std::string& detail) {
  TrainConfig cfg;  // lr 2e-4, epochs 500, warmup 10
  const bool warmup_exact = lr_at(10, cfg) == 2e-4;
  const bool continuous = std::abs(lr_at(9, cfg) - lr_at(10, cfg)) < 1e-18;

  MatX<double> p(1, 1), g(1, 1), m(1, 1), v(1, 1);
  p << 1.0;
  g << 1.0;
  m.setZero();
  v.setZero();
  detail::adamw_tensor(p, g, m, v, 1, 0.1, 0.0, 0.9, 0.999, 1e-8);
  const double hand = 1.0 - 0.1 / (1.0 + 1e-8);
  const bool adam_ok = std::abs(p(0, 0) - hand) < 1e-9 && std::abs(p(0, 0) - 0.9) <= 1e-9;

  detail = "lr_at(10) = " + fmt("%.6e", lr_at(10, cfg)) + " exact=" +
           (warmup_exact ? "yes" : "no") + "; boundary continuous=" +
           (continuous ? "yes" : "no") + "; AdamW step-1 |err| " +
           fmt("%.2e", std::abs(p(0, 0) - hand));
  return warmup_exact && continuous && adam_ok;
}

struct Criterion {
  int id;
  const char* title;
  bool (*run)(std::string&);
};

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_cli_path = argv[1];
  std::set<int> selected;
  for (int i = 2; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  const std::vector<Criterion> criteria = {
      {1, "gradient correctness (analytic vs central finite differences)", criterion_gradients},
      {2, "InfoNCE matches explicit softmax cross-entropy", criterion_infonce},
      {3, "contrastive accuracy equals exhaustive nearest-neighbor oracle", criterion_ca_oracle},
      {4, "contrastive accuracy chance baseline (i.i.d. Gaussian projections)",
       criterion_ca_chance},
      {5, "training smoke on the synthetic waveform corpus", criterion_training_smoke},
      {6, "subset-ratio experiment: positive CA/performance correlation", criterion_subset_sign},
      {7, "deterministic pre-training yields bit-identical checkpoints", criterion_determinism},
      {8, "checkpoint format round trip and corruption rejection", criterion_checkpoint_format},
      {9, "learning-rate schedule and AdamW unit values", criterion_schedule_optimizer},
  };

  bool all_ok = true;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    std::string detail;
    bool ok = false;
    try {
      ok = c.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::printf("[%s] criterion %d: %s — %s\n", ok ? "PASS" : "FAIL", c.id, c.title,
                detail.c_str());
    std::fflush(stdout);
    all_ok = all_ok && ok;
  }
  return all_ok ? 0 : 1;
}
