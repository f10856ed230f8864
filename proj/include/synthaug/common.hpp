// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace synthaug {

/// Invalid configuration or input data. The CLI maps it to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A generation backend could not be reached or misbehaved (exit code 3).
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Some work units completed, some did not (exit code 4).
class PartialFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { train, val, test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

/// Seeded generator whose output is identical on every platform.
///
/// std::mt19937_64 is fully specified by the standard, but the library
/// distributions are not, so index draws and gaussians are derived here
/// from raw 64-bit words.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  /// Uniform double in [0, 1).
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  /// k distinct indices drawn from [0, n), returned in ascending order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// splitmix64 finalizer; combines seeds into decorrelated streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string sha256_hex(std::span<const std::uint8_t> data);

std::string base64_encode(std::span<const std::uint8_t> data);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Half-up rounding of a nonnegative real count.
std::size_t round_half_up(double x);

std::string trim(std::string_view s);

/// Whitespace tokenization used for length bounds.
std::vector<std::string> split_whitespace(std::string_view s);

}  // namespace synthaug
