#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tsca/common.hpp"

namespace tsca {

/// One univariate sequence plus an optional dense class id.
struct TimeSeries {
  Eigen::VectorXd values;
  std::optional<int> label;
};

struct Dataset {
  std::string name;
  std::vector<TimeSeries> train;
  std::vector<TimeSeries> test;
  int num_classes = 0;
};

inline constexpr int kCanonicalLength = 512;

/// Maps raw class tokens to dense 0-based ids in order of first appearance.
/// Shared across the TRAIN/TEST splits of one dataset so ids agree.
class LabelIndex {
 public:
  int id_for(const std::string& raw_token);
  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> names_;
};

/// Parses UCR-style text: one record per line, first token is the class
/// label, remaining tokens are samples, tab- or comma-separated. Blank
/// lines are skipped. Missing samples (empty or NaN tokens) are repaired
/// by linear interpolation between finite neighbors, edge gaps by
/// nearest-value extension.
std::vector<TimeSeries> parse_ucr_split(std::istream& in, LabelIndex& labels);
std::vector<TimeSeries> parse_ucr_split(std::istream& in);

/// Linear resampling onto out_len evenly spaced positions; endpoints are
/// preserved exactly. A length-1 input replicates its single value.
Eigen::VectorXd resample_linear(const Eigen::Ref<const Eigen::VectorXd>& values, int out_len);

/// (v - mean) / (population std + 1e-8); a constant series maps to zeros.
Eigen::VectorXd znormalize(const Eigen::Ref<const Eigen::VectorXd>& values);

struct CanonicalizeOptions {
  int length = kCanonicalLength;
  bool znormalize = true;
};

TimeSeries canonicalize(const TimeSeries& s, const CanonicalizeOptions& opt = {});
Dataset canonicalize(const Dataset& d, const CanonicalizeOptions& opt = {});

/// Reads <root>/<name>_TRAIN.tsv and <name>_TEST.tsv (also looked up under
/// <root>/<name>/) and canonicalizes every series.
Dataset load_dataset(const std::string& data_root, const std::string& name,
                     const CanonicalizeOptions& opt = {});

/// Uniform subset of the train split without replacement, size
/// round(ratio * |train|); the test split is untouched. Deterministic per
/// seed.
Dataset subsample_dataset(const Dataset& d, double ratio, std::uint64_t seed);

/// Multiset union of the train splits (duplicates kept), named "a+b".
Dataset union_datasets(const Dataset& a, const Dataset& b);

/// The unlabeled pre-training view of a dataset: its train-split values.
std::vector<Eigen::VectorXd> series_pool(const Dataset& d);

}  // namespace tsca
