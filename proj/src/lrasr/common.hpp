#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lrasr {

// Error categories line up with the CLI exit codes and the C API status codes.
enum class ErrorKind { Usage = 1, Data = 2, Divergence = 3, Internal = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what)
      : Error(ErrorKind::Divergence, what) {}
};

// Stable 64-bit mixing, used to derive per-item seeds so that results never
// depend on iteration or thread order.
uint64_t splitmix64(uint64_t x);
uint64_t hash_string(std::string_view s);
uint64_t derive_seed(uint64_t seed, std::string_view tag);
uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0);

using Rng = std::mt19937_64;

// Portable draws (std distributions are implementation-defined).
double uniform01(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
double gaussian(Rng& rng);
// Uniform integer in [lo, hi].
int64_t uniform_int(Rng& rng, int64_t lo, int64_t hi);

template <typename Vec>
void shuffle(Vec& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(uniform_int(rng, 0, static_cast<int64_t>(i) - 1));
    using std::swap;
    swap(v[i - 1], v[j]);
  }
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
// is rethrown after all workers stop.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

}  // namespace lrasr
