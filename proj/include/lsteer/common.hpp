#pragma once

// Shared plumbing: error taxonomy, counter-based RNG, a minimal row-major
// matrix, hashing, and a bounded parallel_for. No module below this one.

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace lsteer {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are unsupported");

// Raised for caller mistakes (bad flags, bad config values, violated
// preconditions the caller controls). The CLI maps these to exit code 2;
// everything else derived from std::runtime_error exits 1.
class usage_error : public std::runtime_error {
 public:
  explicit usage_error(const std::string& what) : std::runtime_error(what) {}
};

class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Deterministic counter-based RNG.
//
// One 64-bit seed expands into independent streams keyed by (tag, a, b).
// Every draw is a pure function of (key, counter), so per-head / per-sample
// generation is order-independent and safe to parallelize.

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

struct RngStream {
  std::uint64_t key = 0;
  std::uint64_t counter = 0;

  std::uint64_t next_u64() { return splitmix64(key + 0x9E3779B97F4A7C15ULL * ++counter); }

  // Uniform in the open interval (0,1).
  double next_unit_open() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53 + 0x1.0p-54;
  }

  // Uniform in [0,1).
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in the open interval (-b, b).
  double next_symmetric(double b) { return b * (2.0 * next_unit_open() - 1.0); }

  // Standard normal via Box-Muller; consumes two draws.
  double next_normal() {
    const double u1 = next_unit_open();
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Uniform integer in [0, n) via 128-bit multiply (no modulo bias concerns
  // here, but this keeps the mapping platform-independent).
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }
};

// Derives a stream from a seed plus a textual tag and up to two indices.
inline RngStream make_stream(std::uint64_t seed, std::string_view tag,
                             std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t k = splitmix64(seed ^ fnv1a64(tag));
  k = splitmix64(k ^ (a + 0x632BE59BD9B4E019ULL));
  k = splitmix64(k ^ (b + 0x9E6C63D0876A9A47ULL));
  return RngStream{k, 0};
}

// Seeded in-place Fisher-Yates.
template <class T>
void seeded_shuffle(std::vector<T>& v, RngStream rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

// ---------------------------------------------------------------------------
// Row-major dense matrix. Feature storage is float; numeric kernels that
// need 64-bit run on Mat<double>.

template <class T>
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

  T* row(std::size_t r) { return data.data() + r * cols; }
  const T* row(std::size_t r) const { return data.data() + r * cols; }
  T& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const { return data.size(); }

  bool all_finite() const {
    for (const T& x : data)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  bool operator==(const Mat& o) const {
    return rows == o.rows && cols == o.cols && data == o.data;
  }
};

// C[b,:] += A[b,:] * W, with A: B x M, W: M x N, C: B x N (all row-major).
template <class T>
void matmul_add(const T* a, std::size_t b_rows, std::size_t m, const T* w,
                std::size_t n, T* c) {
  for (std::size_t b = 0; b < b_rows; ++b) {
    const T* arow = a + b * m;
    T* crow = c + b * n;
    for (std::size_t k = 0; k < m; ++k) {
      const T av = arow[k];
      const T* wrow = w + k * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * wrow[j];
    }
  }
}

// W_grad[k,j] += sum_b A[b,k] * D[b,j], A: B x M, D: B x N, W_grad: M x N.
template <class T>
void outer_accumulate(const T* a, std::size_t b_rows, std::size_t m, const T* d,
                      std::size_t n, T* w_grad) {
  for (std::size_t b = 0; b < b_rows; ++b) {
    const T* arow = a + b * m;
    const T* drow = d + b * n;
    for (std::size_t k = 0; k < m; ++k) {
      const T av = arow[k];
      if (av == T{}) continue;
      T* grow = w_grad + k * n;
      for (std::size_t j = 0; j < n; ++j) grow[j] += av * drow[j];
    }
  }
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T{0}) {
    return T{1} / (T{1} + std::exp(-x));
  }
  const T e = std::exp(x);
  return e / (T{1} + e);
}

// ---------------------------------------------------------------------------
// Worker threads. LATENT_STEER_THREADS caps the pool; 0 or unset means
// hardware concurrency.

inline unsigned max_worker_threads() {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("LATENT_STEER_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0 && static_cast<unsigned>(v) < hw) hw = static_cast<unsigned>(v);
  }
  return hw;
}

// Runs fn(i) for i in [0, n). Work items must be independent; results must
// not depend on the thread assignment.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = std::min<std::size_t>(max_worker_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// Content hashing for fingerprints (FNV-1a over raw bytes).

struct Hasher {
  std::uint64_t h = 0xCBF29CE484222325ULL;

  void bytes(const void* p, std::size_t n) {
    const unsigned char* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001B3ULL;
    }
  }
  template <class T>
  void pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    bytes(&v, sizeof(v));
  }
  void str(std::string_view s) {
    pod(s.size());
    bytes(s.data(), s.size());
  }
};

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace lsteer
