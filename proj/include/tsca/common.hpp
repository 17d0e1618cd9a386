#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace tsca {

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using MatXf = MatX<float>;
using VecXf = VecX<float>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or shape/precondition violation.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Malformed input text or on-disk structure.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A record whose content cannot be repaired (e.g. all samples missing).
class UnrecoverableRecordError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Numerical degeneracy or non-finite intermediate values.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// splitmix64 finalizer; decorrelates (seed, stream) pairs.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return std::mt19937_64(mix_seed(seed, stream));
}

/// Caps Eigen (and OpenMP, when enabled) worker threads; n <= 1 forces
/// fully sequential execution for bit-exact reproducibility.
void set_compute_threads(int n);

int compute_threads();

}  // namespace tsca
