#include "tsca/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace tsca {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool is_blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(),
                     [](unsigned char c) { return std::isspace(c); });
}

std::vector<std::string> split_keep_empty(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t next = line.find(delim, pos);
    if (next == std::string::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
}

bool is_nan_token(const std::string& tok) {
  if (tok.size() != 3) return false;
  auto low = [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); };
  return low(tok[0]) == 'n' && low(tok[1]) == 'a' && low(tok[2]) == 'n';
}

std::optional<double> parse_double(const std::string& tok) {
  try {
    std::size_t used = 0;
    double v = std::stod(tok, &used);
    // trailing whitespace is fine, other trailing garbage is not
    for (std::size_t i = used; i < tok.size(); ++i) {
      if (!std::isspace(static_cast<unsigned char>(tok[i]))) return std::nullopt;
    }
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

/// Canonical key for a raw label token: integral numerics ("2", "2.0",
/// "1e0") collapse to the same key; anything else is kept verbatim.
std::string label_key(const std::string& raw) {
  if (auto v = parse_double(raw)) {
    double r = std::round(*v);
    if (std::isfinite(*v) && std::abs(*v - r) < 1e-9 && std::abs(r) < 1e15) {
      return std::to_string(static_cast<long long>(r));
    }
  }
  std::string trimmed = raw;
  while (!trimmed.empty() && std::isspace(static_cast<unsigned char>(trimmed.back())))
    trimmed.pop_back();
  std::size_t b = 0;
  while (b < trimmed.size() && std::isspace(static_cast<unsigned char>(trimmed[b]))) ++b;
  return trimmed.substr(b);
}

/// Fills NaN gaps in place: interior gaps by linear interpolation between
/// the nearest finite neighbors, edge gaps by nearest-value extension.
void repair_missing(Eigen::VectorXd& v, int line_no) {
  const Eigen::Index n = v.size();
  Eigen::Index first = -1;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(v[i])) { first = i; break; }
  }
  if (first < 0) {
    throw UnrecoverableRecordError("line " + std::to_string(line_no) +
                                   ": all values missing");
  }
  for (Eigen::Index i = 0; i < first; ++i) v[i] = v[first];
  Eigen::Index prev = first;
  for (Eigen::Index i = first + 1; i < n; ++i) {
    if (!std::isfinite(v[i])) continue;
    if (i > prev + 1) {
      const double step = (v[i] - v[prev]) / static_cast<double>(i - prev);
      for (Eigen::Index j = prev + 1; j < i; ++j)
        v[j] = v[prev] + step * static_cast<double>(j - prev);
    }
    prev = i;
  }
  for (Eigen::Index i = prev + 1; i < n; ++i) v[i] = v[prev];
}

}  // namespace

int LabelIndex::id_for(const std::string& raw_token) {
  const std::string key = label_key(raw_token);
  auto it = ids_.find(key);
  if (it != ids_.end()) return it->second;
  const int id = static_cast<int>(names_.size());
  ids_.emplace(key, id);
  names_.push_back(key);
  return id;
}

std::vector<TimeSeries> parse_ucr_split(std::istream& in, LabelIndex& labels) {
  std::vector<TimeSeries> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_blank(line)) continue;

    const char delim = line.find('\t') != std::string::npos ? '\t' : ',';
    const std::vector<std::string> tokens = split_keep_empty(line, delim);
    if (tokens.size() < 2) {
      throw FormatError("line " + std::to_string(line_no) +
                        ": expected a label and at least one value");
    }

    TimeSeries s;
    s.label = labels.id_for(tokens[0]);
    s.values.resize(static_cast<Eigen::Index>(tokens.size()) - 1);
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      const std::string& tok = tokens[i];
      if (tok.empty() || is_nan_token(tok)) {
        s.values[static_cast<Eigen::Index>(i - 1)] = kNaN;
        continue;
      }
      auto v = parse_double(tok);
      if (!v) {
        throw FormatError("line " + std::to_string(line_no) + ": bad value token '" +
                          tok + "'");
      }
      s.values[static_cast<Eigen::Index>(i - 1)] = std::isfinite(*v) ? *v : kNaN;
    }
    repair_missing(s.values, line_no);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<TimeSeries> parse_ucr_split(std::istream& in) {
  LabelIndex labels;
  return parse_ucr_split(in, labels);
}

Eigen::VectorXd resample_linear(const Eigen::Ref<const Eigen::VectorXd>& values,
                                int out_len) {
  const Eigen::Index n = values.size();
  if (n < 1) throw ArgumentError("resample_linear: empty input");
  if (out_len < 2) throw ArgumentError("resample_linear: out_len must be >= 2");
  if (n == 1) return Eigen::VectorXd::Constant(out_len, values[0]);

  Eigen::VectorXd out(out_len);
  // multiply before dividing so the final position is exactly n-1
  for (int j = 0; j < out_len; ++j) {
    const double p =
        static_cast<double>(j) * static_cast<double>(n - 1) / static_cast<double>(out_len - 1);
    Eigen::Index i0 = static_cast<Eigen::Index>(p);
    if (i0 > n - 2) i0 = n - 2;
    const double frac = p - static_cast<double>(i0);
    out[j] = values[i0] * (1.0 - frac) + values[i0 + 1] * frac;
  }
  return out;
}

Eigen::VectorXd znormalize(const Eigen::Ref<const Eigen::VectorXd>& values) {
  if (values.size() == 0) throw ArgumentError("znormalize: empty input");
  const double mean = values.mean();
  const double var = (values.array() - mean).square().mean();
  const double sd = std::sqrt(var);
  return (values.array() - mean) / (sd + 1e-8);
}

TimeSeries canonicalize(const TimeSeries& s, const CanonicalizeOptions& opt) {
  TimeSeries out;
  out.label = s.label;
  Eigen::VectorXd v = opt.znormalize ? znormalize(s.values) : s.values;
  out.values = static_cast<int>(v.size()) == opt.length ? std::move(v)
                                                        : resample_linear(v, opt.length);
  return out;
}

Dataset canonicalize(const Dataset& d, const CanonicalizeOptions& opt) {
  Dataset out;
  out.name = d.name;
  out.num_classes = d.num_classes;
  out.train.reserve(d.train.size());
  out.test.reserve(d.test.size());
  for (const auto& s : d.train) out.train.push_back(canonicalize(s, opt));
  for (const auto& s : d.test) out.test.push_back(canonicalize(s, opt));
  return out;
}

namespace {

std::filesystem::path resolve_split(const std::string& root, const std::string& name,
                                    const char* suffix) {
  namespace fs = std::filesystem;
  const std::string file = name + suffix;
  const fs::path flat = fs::path(root) / file;
  if (fs::exists(flat)) return flat;
  const fs::path nested = fs::path(root) / name / file;
  if (fs::exists(nested)) return nested;
  throw IoError("dataset file not found: " + flat.string() + " (also tried " +
                nested.string() + ")");
}

std::vector<TimeSeries> read_split(const std::filesystem::path& path, LabelIndex& labels) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return parse_ucr_split(in, labels);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace

Dataset load_dataset(const std::string& data_root, const std::string& name,
                     const CanonicalizeOptions& opt) {
  const auto train_path = resolve_split(data_root, name, "_TRAIN.tsv");
  const auto test_path = resolve_split(data_root, name, "_TEST.tsv");
  LabelIndex labels;
  Dataset d;
  d.name = name;
  d.train = read_split(train_path, labels);
  d.test = read_split(test_path, labels);
  d.num_classes = labels.size();
  return canonicalize(d, opt);
}

Dataset subsample_dataset(const Dataset& d, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0) || ratio > 1.0)
    throw ArgumentError("subsample_dataset: ratio must be in (0, 1]");
  const auto n = static_cast<long long>(d.train.size());
  const auto k = std::llround(ratio * static_cast<double>(n));
  if (k < 1) throw ArgumentError("subsample_dataset: ratio * |train| < 1");

  std::vector<std::size_t> idx(d.train.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto rng = make_rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(std::min(k, n)));
  std::sort(idx.begin(), idx.end());

  Dataset out;
  out.name = d.name;
  out.num_classes = d.num_classes;
  out.test = d.test;
  out.train.reserve(idx.size());
  for (std::size_t i : idx) out.train.push_back(d.train[i]);
  return out;
}

Dataset union_datasets(const Dataset& a, const Dataset& b) {
  Dataset out;
  out.name = a.name + "+" + b.name;
  out.num_classes = std::max(a.num_classes, b.num_classes);
  out.train = a.train;
  out.train.insert(out.train.end(), b.train.begin(), b.train.end());
  out.test = a.test;
  out.test.insert(out.test.end(), b.test.begin(), b.test.end());
  return out;
}

std::vector<Eigen::VectorXd> series_pool(const Dataset& d) {
  std::vector<Eigen::VectorXd> pool;
  pool.reserve(d.train.size());
  for (const auto& s : d.train) pool.push_back(s.values);
  return pool;
}

}  // namespace tsca
