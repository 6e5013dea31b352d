#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace prefpipe {

// 64-bit FNV-1a. Used wherever a stable, platform-independent hash is needed
// (feature buckets, mock clients, derived seeds).
constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

inline std::uint64_t fnv1a(std::string_view data,
                           std::uint64_t h = kFnvOffset) {
  for (unsigned char c : data) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a_u64(std::uint64_t v, std::uint64_t h = kFnvOffset) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffU;
    h *= kFnvPrime;
  }
  return h;
}

// splitmix64 finalizer; spreads FNV output before it is used as a seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed derived from a base seed and a list of string parts.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::string_view> parts) {
  std::uint64_t h = fnv1a_u64(base);
  for (auto p : parts) {
    h = fnv1a(p, h);
    h = fnv1a("\x1f", h);
  }
  return mix64(h);
}

// Uniform double in [0, 1) from a 64-bit hash.
inline double unit_from_hash(std::uint64_t h) {
  return static_cast<double>(mix64(h) >> 11) * 0x1.0p-53;
}

// Unbiased integer in [0, n). std::uniform_int_distribution is
// implementation-defined, which would make seeded outputs differ across
// standard libraries.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t bound = n;
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

template <typename T>
void seeded_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller; portable unlike std::normal_distribution.
inline double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// Random UUID-formatted id drawn from a seeded engine, so runs with the same
// seed assign the same ids.
class IdGenerator {
 public:
  explicit IdGenerator(std::uint64_t seed) : rng_(seed) {}

  std::string next() {
    static constexpr char kHex[] = "0123456789abcdef";
    const std::uint64_t hi = rng_();
    const std::uint64_t lo = rng_();
    std::string out;
    out.reserve(36);
    for (int i = 0; i < 32; ++i) {
      const std::uint64_t word = i < 16 ? hi : lo;
      int nibble = static_cast<int>((word >> (4 * (15 - i % 16))) & 0xf);
      if (i == 12) nibble = 4;                    // version
      if (i == 16) nibble = 8 | (nibble & 0x3);   // variant
      if (i == 8 || i == 12 || i == 16 || i == 20) out.push_back('-');
      out.push_back(kHex[nibble]);
    }
    return out;
  }

 private:
  std::mt19937_64 rng_;
};

// Runs fn(i) for i in [0, n) on up to max_in_flight threads. Results are
// written by index, so the output order never depends on scheduling. The
// first exception thrown by any task is rethrown after all workers join.
template <typename Result>
std::vector<Result> parallel_map(std::size_t n, std::size_t max_in_flight,
                                 const std::function<Result(std::size_t)>& fn) {
  std::vector<Result> out(n);
  if (n == 0) return out;
  const std::size_t workers = std::clamp<std::size_t>(max_in_flight, 1, n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          out[i] = fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace prefpipe
