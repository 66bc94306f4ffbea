// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sderf {

// ============================================================================
// Error taxonomy. The CLI maps these onto process exit codes, so keep the
// hierarchy flat and the categories coarse.
// ============================================================================

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user input: malformed config, contradictory flags, invalid ranges.
struct ConfigError : Error {
  using Error::Error;
};

// Bad or missing data on disk: manifests, images, checkpoints.
struct DataError : Error {
  using Error::Error;
};

// File could not be opened, read, or written.
struct IOError : DataError {
  using DataError::DataError;
};

// Structurally invalid scene manifest (schema, dimensions, roles).
struct ManifestError : DataError {
  using DataError::DataError;
};

// Non-finite values or failed numeric preconditions at runtime.
struct NumericError : Error {
  using Error::Error;
};

// Degenerate geometry: rays parallel to the image plane, zero-length axes.
struct GeometryError : Error {
  using Error::Error;
};

// A structural invariant the code promises to maintain was violated.
struct InvariantError : Error {
  using Error::Error;
};

// ============================================================================
// Deterministic RNG. splitmix64 core with keyed forks: a fork derives a new
// independent stream from the parent's seed and a key, never from the parent's
// evolving state. That keeps substreams stable no matter how many draws other
// code paths consumed, which is what makes multi-threaded runs reproducible.
// ============================================================================

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : seed_(seed), state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() {
    return double(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. No spare caching: two draws per sample
  // keeps the stream position independent of call history.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derive an independent substream. Forking from the construction seed (not
  // the current state) means fork(k) is the same stream regardless of how
  // many numbers were drawn from this generator before the fork.
  Rng fork(uint64_t key) const {
    uint64_t z = seed_ ^ (key + 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z ^= z >> 31;
    return Rng(z);
  }

  Rng fork(uint64_t k1, uint64_t k2) const { return fork(k1).fork(k2); }
  Rng fork(uint64_t k1, uint64_t k2, uint64_t k3) const {
    return fork(k1).fork(k2).fork(k3);
  }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t state_;
};

inline double sqr(double x) { return x * x; }

}  // namespace sderf
