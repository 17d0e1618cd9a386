#include "tsca/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <future>
#include <mutex>
#include <set>
#include <thread>

#include "tsca/config.hpp"
#include "tsca/training.hpp"

namespace tsca {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// seed streams for the independent random choices of one experiment run
constexpr std::uint64_t kSubsampleStream = 100;
constexpr std::uint64_t kTrainStream = 200;
constexpr std::uint64_t kCaStream = 300;
constexpr std::uint64_t kProbeStream = 400;

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Content hash of an unordered pool of series (order-independent).
std::uint64_t pool_hash(const std::vector<Eigen::VectorXd>& pool) {
  std::vector<std::uint64_t> hashes;
  hashes.reserve(pool.size());
  for (const auto& s : pool)
    hashes.push_back(fnv1a(s.data(), static_cast<std::size_t>(s.size()) * sizeof(double)));
  std::sort(hashes.begin(), hashes.end());
  return fnv1a(hashes.data(), hashes.size() * sizeof(std::uint64_t));
}

std::string cache_key(const std::vector<Eigen::VectorXd>& pool, const ExperimentConfig& cfg,
                      const TrainConfig& tc) {
  const std::string cfg_dump =
      to_json(cfg.encoder).dump() + to_json(tc).dump() + to_json(cfg.aug).dump();
  const std::uint64_t h =
      fnv1a(cfg_dump.data(), cfg_dump.size(), pool_hash(pool) ^ 0x9e3779b97f4a7c15ULL);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Runs fn(0..n-1), optionally on a bounded worker pool; rethrows the
/// first exception after joining.
void run_indexed(int n, int jobs, const std::function<void(int)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    int i;
    while ((i = next.fetch_add(1)) < n) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int workers = std::min(jobs, n);
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

/// Memoizing checkpoint store; concurrent requests for the same key train
/// once and share the result.
class CheckpointCache {
 public:
  using Value = std::shared_ptr<const Checkpoint>;

  Value get_or_train(const std::string& key, const std::function<Checkpoint()>& train,
                     std::vector<std::string>& log, std::mutex& log_mu,
                     const std::string& what) {
    std::shared_future<Value> fut;
    bool owner = false;
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = entries_.find(key);
      if (it == entries_.end()) {
        std::promise<Value> prom;
        fut = prom.get_future().share();
        entries_.emplace(key, fut);
        promises_.emplace(key, std::move(prom));
        owner = true;
      } else {
        fut = it->second;
      }
    }
    if (owner) {
      {
        std::lock_guard<std::mutex> lock(log_mu);
        log.push_back("pretrain " + what + " key=" + key);
      }
      try {
        auto value = std::make_shared<const Checkpoint>(train());
        promise_for(key).set_value(value);
      } catch (...) {
        promise_for(key).set_exception(std::current_exception());
        throw;
      }
    } else {
      std::lock_guard<std::mutex> lock(log_mu);
      log.push_back("cache-hit " + what + " key=" + key);
    }
    return fut.get();
  }

 private:
  std::promise<Value>& promise_for(const std::string& key) {
    std::lock_guard<std::mutex> lock(mu_);
    return promises_.at(key);
  }

  std::mutex mu_;
  std::map<std::string, std::shared_future<Value>> entries_;
  std::map<std::string, std::promise<Value>> promises_;
};

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void add_pearson_if_defined(std::map<std::string, double>& summary, const std::string& key,
                            const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() < 2) return;
  try {
    summary[key] = pearson(xs, ys);
  } catch (const NumericError&) {
    // constant inputs: correlation undefined, field omitted
  }
}

}  // namespace

const std::vector<std::string>& default_candidates() {
  static const std::vector<std::string> names = {
      "AllGestureWiimoteX", "CricketY",       "EOGVerticalSignal",
      "Haptics",            "MelbournePedestrian", "PLAID",
      "Phoneme",            "ScreenType",     "UWaveGestureLibraryX",
      "WordSynonyms",       "WormsTwoClass",  "Yoga"};
  return names;
}

void ExperimentConfig::validate_common() const {
  encoder.validate();
  train.validate();
  aug.validate();
  ca.validate();
  probe.validate();
  if (data_root.empty()) throw ConfigError("experiment: data_root is required");
  if (downstream.empty()) throw ConfigError("experiment: downstream task list is empty");
  if (jobs < 1) throw ConfigError("experiment: jobs must be >= 1");
  if (profile != "desk" && profile != "paper")
    throw ConfigError("experiment: profile must be 'desk' or 'paper'");
}

ExperimentConfig make_experiment_config(const nlohmann::json& file_json,
                                        const std::string& profile) {
  ExperimentConfig cfg;
  cfg.profile = profile.empty() ? "desk" : profile;
  if (cfg.profile == "desk") {
    cfg.train.epochs = 100;
    cfg.probe.epochs = 100;
  } else if (cfg.profile != "paper") {
    throw ConfigError("unknown profile: " + profile);
  }
  cfg.candidates = default_candidates();

  const auto& j = file_json;
  if (j.is_null()) return cfg;
  if (!j.is_object()) throw ConfigError("config file: expected a JSON object");

  if (j.contains("encoder")) merge_config(j.at("encoder"), cfg.encoder);
  if (j.contains("train")) merge_config(j.at("train"), cfg.train);
  if (j.contains("augment")) merge_config(j.at("augment"), cfg.aug);
  if (j.contains("ca")) merge_config(j.at("ca"), cfg.ca);
  if (j.contains("probe")) merge_config(j.at("probe"), cfg.probe);
  if (j.contains("loss")) {
    const auto& loss = j.at("loss");
    if (loss.contains("symmetric")) cfg.train.symmetric_loss = loss.at("symmetric").get<bool>();
  }
  if (j.contains("dataio")) {
    const auto& d = j.at("dataio");
    if (d.contains("znormalize")) cfg.znormalize = d.at("znormalize").get<bool>();
  }
  if (j.contains("experiment")) {
    const auto& e = j.at("experiment");
    auto read_names = [&e](const char* key, std::vector<std::string>& out) {
      if (e.contains(key)) out = e.at(key).get<std::vector<std::string>>();
    };
    if (e.contains("pretrain")) cfg.pretrain_dataset = e.at("pretrain").get<std::string>();
    if (e.contains("ratios")) cfg.ratios = e.at("ratios").get<std::vector<double>>();
    read_names("downstream", cfg.downstream);
    read_names("candidates", cfg.candidates);
    if (e.contains("mode")) cfg.sweep_mode = e.at("mode").get<std::string>();
    if (e.contains("fixed")) cfg.fixed_dataset = e.at("fixed").get<std::string>();
    if (e.contains("pairs")) {
      cfg.pairs.clear();
      for (const auto& p : e.at("pairs")) {
        if (!p.is_array() || p.size() != 2)
          throw ConfigError("experiment.pairs entries must be [base, new]");
        cfg.pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
      }
    }
  }
  return cfg;
}

nlohmann::ordered_json config_echo(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["data_root"] = cfg.data_root;
  j["seed"] = cfg.seed;
  j["jobs"] = cfg.jobs;
  j["deterministic"] = cfg.deterministic;
  j["profile"] = cfg.profile;
  j["dataio"] = {{"znormalize", cfg.znormalize}};
  j["encoder"] = to_json(cfg.encoder);
  j["train"] = to_json(cfg.train);
  j["augment"] = to_json(cfg.aug);
  j["ca"] = to_json(cfg.ca);
  j["probe"] = to_json(cfg.probe);
  j["loss"] = {{"symmetric", cfg.train.symmetric_loss}};
  nlohmann::ordered_json e;
  e["pretrain"] = cfg.pretrain_dataset;
  e["ratios"] = cfg.ratios;
  e["downstream"] = cfg.downstream;
  e["candidates"] = cfg.candidates;
  e["mode"] = cfg.sweep_mode;
  e["fixed"] = cfg.fixed_dataset;
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (const auto& [a, b] : cfg.pairs) pairs.push_back({a, b});
  e["pairs"] = pairs;
  j["experiment"] = e;
  return j;
}

namespace {

struct LoadedTasks {
  std::vector<Dataset> tasks;
};

CanonicalizeOptions canonical_options(const ExperimentConfig& cfg) {
  return {cfg.encoder.seq_len, cfg.znormalize};
}

std::vector<Dataset> load_downstream(const ExperimentConfig& cfg) {
  std::vector<Dataset> tasks;
  tasks.reserve(cfg.downstream.size());
  for (const auto& name : cfg.downstream)
    tasks.push_back(load_dataset(cfg.data_root, name, canonical_options(cfg)));
  return tasks;
}

TrainConfig train_config_for_run(const ExperimentConfig& cfg) {
  TrainConfig tc = cfg.train;
  tc.seed = mix_seed(cfg.seed, kTrainStream);
  return tc;
}

CAConfig ca_config_for_run(const ExperimentConfig& cfg) {
  CAConfig ca = cfg.ca;
  ca.seed = mix_seed(cfg.seed, kCaStream);
  return ca;
}

ProbeConfig probe_config_for_run(const ExperimentConfig& cfg) {
  ProbeConfig pc = cfg.probe;
  pc.seed = mix_seed(cfg.seed, kProbeStream);
  return pc;
}

}  // namespace

ExperimentReport run_subset_experiment(const ExperimentConfig& cfg) {
  cfg.validate_common();
  if (cfg.pretrain_dataset.empty())
    throw ConfigError("subset experiment: experiment.pretrain dataset name is required");
  if (cfg.ratios.empty()) throw ConfigError("subset experiment: ratio grid is empty");
  for (double r : cfg.ratios)
    if (!(r > 0.0) || r > 1.0) throw ConfigError("subset experiment: ratios must be in (0, 1]");
  for (const auto& d : cfg.downstream)
    if (d == cfg.pretrain_dataset)
      throw ConfigError("subset experiment: pre-training dataset also listed downstream");

  const Dataset pre = load_dataset(cfg.data_root, cfg.pretrain_dataset, canonical_options(cfg));
  const std::vector<Dataset> tasks = load_downstream(cfg);
  const std::vector<Eigen::VectorXd> full_pool = series_pool(pre);

  const TrainConfig tc = train_config_for_run(cfg);
  const CAConfig ca_cfg = ca_config_for_run(cfg);
  const ProbeConfig probe_cfg = probe_config_for_run(cfg);

  ExperimentReport report;
  report.kind = "subset";
  report.config_echo = config_echo(cfg);
  report.rows.resize(cfg.ratios.size());

  std::mutex log_mu;
  run_indexed(static_cast<int>(cfg.ratios.size()), cfg.jobs, [&](int i) {
    const auto t0 = Clock::now();
    const double ratio = cfg.ratios[static_cast<std::size_t>(i)];
    const Dataset sub = subsample_dataset(
        pre, ratio, mix_seed(cfg.seed, kSubsampleStream + static_cast<std::uint64_t>(i)));
    {
      std::lock_guard<std::mutex> lock(log_mu);
      report.provenance.push_back("pretrain " + pre.name + " ratio=" + format_double(ratio) +
                                  " train_size=" + std::to_string(sub.train.size()));
    }
    const PretrainResult pr = pretrain(sub, tc, cfg.encoder, cfg.aug);
    // the evaluation pool is the full dataset; the model saw only the subset
    const double ca = contrastive_accuracy(pr.checkpoint, full_pool, ca_cfg, cfg.aug);
    const auto [p_train, p_test] = avg_performance(pr.checkpoint, tasks, probe_cfg);

    ReportRow& row = report.rows[static_cast<std::size_t>(i)];
    char cond[32];
    std::snprintf(cond, sizeof(cond), "r=%d%%", static_cast<int>(std::lround(ratio * 100)));
    row.condition = cond;
    row.ca = ca;
    row.p_train = p_train;
    row.p_test = p_test;
    row.extra = {{"ratio", ratio},
                 {"train_size", sub.train.size()},
                 {"final_loss", pr.checkpoint.final_loss}};
    row.seconds = seconds_since(t0);
  });

  std::vector<double> cas, p_trains, p_tests;
  for (const auto& r : report.rows) {
    cas.push_back(r.ca);
    p_trains.push_back(r.p_train);
    p_tests.push_back(r.p_test);
  }
  add_pearson_if_defined(report.summary, "rho_ca_p_test", cas, p_tests);
  add_pearson_if_defined(report.summary, "rho_ca_p_train", cas, p_trains);
  return report;
}

ExperimentReport run_improvement_experiment(const ExperimentConfig& cfg) {
  cfg.validate_common();
  {
    std::set<std::string> downstream(cfg.downstream.begin(), cfg.downstream.end());
    for (const auto& c : cfg.candidates) {
      if (downstream.count(c))
        throw ConfigError("improvement experiment: '" + c +
                          "' appears in both candidates and downstream");
    }
  }

  std::vector<std::pair<std::string, std::string>> pairs;
  if (cfg.sweep_mode == "pairs") {
    if (cfg.pairs.empty()) throw ConfigError("improvement experiment: no pairs configured");
    pairs = cfg.pairs;
  } else if (cfg.sweep_mode == "fix_base" || cfg.sweep_mode == "fix_new") {
    if (cfg.fixed_dataset.empty())
      throw ConfigError("improvement experiment: experiment.fixed dataset name is required");
    if (std::find(cfg.candidates.begin(), cfg.candidates.end(), cfg.fixed_dataset) ==
        cfg.candidates.end())
      throw ConfigError("improvement experiment: fixed dataset must be one of the candidates");
    for (const auto& other : cfg.candidates) {
      if (other == cfg.fixed_dataset) continue;
      if (cfg.sweep_mode == "fix_base")
        pairs.emplace_back(cfg.fixed_dataset, other);
      else
        pairs.emplace_back(other, cfg.fixed_dataset);
    }
  } else {
    throw ConfigError("improvement experiment: mode must be fix_base, fix_new or pairs");
  }

  const std::vector<Dataset> tasks = load_downstream(cfg);

  // load each needed dataset once
  std::set<std::string> needed;
  for (const auto& [a, b] : pairs) {
    needed.insert(a);
    needed.insert(b);
  }
  std::map<std::string, Dataset> datasets;
  for (const auto& name : needed)
    datasets.emplace(name, load_dataset(cfg.data_root, name, canonical_options(cfg)));

  const TrainConfig tc = train_config_for_run(cfg);
  const CAConfig ca_cfg = ca_config_for_run(cfg);
  const ProbeConfig probe_cfg = probe_config_for_run(cfg);

  ExperimentReport report;
  report.kind = "improvement";
  report.config_echo = config_echo(cfg);
  report.rows.resize(pairs.size());

  CheckpointCache cache;
  std::mutex log_mu;
  std::mutex probe_mu;
  std::map<std::string, std::pair<double, double>> probe_cache;

  auto train_cached = [&](const Dataset& d) {
    const auto pool = series_pool(d);
    const std::string key = cache_key(pool, cfg, tc);
    return cache.get_or_train(
        key, [&] { return pretrain(pool, tc, cfg.encoder, cfg.aug).checkpoint; },
        report.provenance, log_mu, d.name + " (n=" + std::to_string(pool.size()) + ")");
  };
  auto probes_cached = [&](const Dataset& d, const CheckpointCache::Value& ckpt) {
    const std::string key = cache_key(series_pool(d), cfg, tc);
    {
      std::lock_guard<std::mutex> lock(probe_mu);
      auto it = probe_cache.find(key);
      if (it != probe_cache.end()) return it->second;
    }
    const auto result = avg_performance(*ckpt, tasks, probe_cfg);
    std::lock_guard<std::mutex> lock(probe_mu);
    probe_cache.emplace(key, result);
    return result;
  };

  run_indexed(static_cast<int>(pairs.size()), cfg.jobs, [&](int i) {
    const auto t0 = Clock::now();
    const auto& [base_name, new_name] = pairs[static_cast<std::size_t>(i)];
    const Dataset& base = datasets.at(base_name);
    const Dataset& fresh = datasets.at(new_name);
    const Dataset merged = union_datasets(base, fresh);
    const std::vector<Eigen::VectorXd> new_pool = series_pool(fresh);

    const auto ckpt_base = train_cached(base);
    const auto ckpt_new = train_cached(fresh);
    const auto ckpt_union = train_cached(merged);

    // both contrastive-accuracy terms are evaluated on the new pool
    const double ca_new_model = contrastive_accuracy(*ckpt_new, new_pool, ca_cfg, cfg.aug);
    const double ca_base_model = contrastive_accuracy(*ckpt_base, new_pool, ca_cfg, cfg.aug);
    const double delta_ca = ca_new_model - ca_base_model;

    const auto [pt_base_train, pt_base_test] = probes_cached(base, ckpt_base);
    const auto [pt_union_train, pt_union_test] = probes_cached(merged, ckpt_union);
    const double delta_p_train = pt_union_train - pt_base_train;
    const double delta_p_test = pt_union_test - pt_base_test;

    ReportRow& row = report.rows[static_cast<std::size_t>(i)];
    row.condition = base_name + "+" + new_name;
    row.ca = delta_ca;
    row.p_train = delta_p_train;
    row.p_test = delta_p_test;
    row.extra = {{"base", base_name},
                 {"new", new_name},
                 {"ca_new_model", ca_new_model},
                 {"ca_base_model", ca_base_model},
                 {"p_train_base", pt_base_train},
                 {"p_test_base", pt_base_test},
                 {"p_train_union", pt_union_train},
                 {"p_test_union", pt_union_test},
                 {"degenerate_pair", base_name == new_name}};
    row.seconds = seconds_since(t0);
  });

  std::vector<double> dcas, dp_trains, dp_tests;
  for (const auto& r : report.rows) {
    dcas.push_back(r.ca);
    dp_trains.push_back(r.p_train);
    dp_tests.push_back(r.p_test);
  }
  add_pearson_if_defined(report.summary, "rho_dca_dp_test", dcas, dp_tests);
  add_pearson_if_defined(report.summary, "rho_dca_dp_train", dcas, dp_trains);
  return report;
}

nlohmann::ordered_json report_to_json(const ExperimentReport& report) {
  nlohmann::ordered_json j;
  j["experiment"] = report.kind;
  j["config"] = report.config_echo;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) {
    nlohmann::ordered_json row;
    row["condition"] = r.condition;
    row["ca"] = r.ca;
    row["p_train"] = r.p_train;
    row["p_test"] = r.p_test;
    row["seconds"] = r.seconds;
    if (!r.extra.is_null()) row["detail"] = r.extra;
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  j["summary"] = report.summary;
  j["provenance"] = report.provenance;
  return j;
}

std::string report_to_csv(const ExperimentReport& report) {
  std::string csv = "condition,ca,p_train,p_test,seconds\n";
  for (const auto& r : report.rows) {
    csv += r.condition;
    csv += ',';
    csv += format_double(r.ca);
    csv += ',';
    csv += format_double(r.p_train);
    csv += ',';
    csv += format_double(r.p_test);
    csv += ',';
    csv += format_double(r.seconds);
    csv += '\n';
  }
  return csv;
}

void write_report_files(const ExperimentReport& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "report.json");
    if (!out) throw IoError("cannot write " + (out_dir / "report.json").string());
    out << report_to_json(report).dump(2) << '\n';
  }
  {
    std::ofstream out(out_dir / "report.csv");
    if (!out) throw IoError("cannot write " + (out_dir / "report.csv").string());
    out << report_to_csv(report);
  }
}

}  // namespace tsca
