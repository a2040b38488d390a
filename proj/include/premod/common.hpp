#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace premod {

// Every thrown error carries a short stable name (used for CLI diagnostics
// and exit reporting) plus a human-readable message.
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& msg)
      : std::runtime_error(name + ": " + msg), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

constexpr double kDaysPerYear = 365.25;

inline long years_to_days(double years) {
  return static_cast<long>(std::llround(years * kDaysPerYear));
}

// FNV-1a, used for vocabulary fingerprints, input-file hashes and child seeds.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t h = 1469598103934665603ull) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::uint64_t hash_strings(const std::vector<std::string>& v) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& s : v) {
    h = fnv1a64(s.data(), s.size(), h);
    h = fnv1a64("\x1f", 1, h);  // separator so {"ab","c"} != {"a","bc"}
  }
  return h;
}

inline std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("FileError", "cannot open " + path);
  std::uint64_t h = 1469598103934665603ull;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Named child seed; all pipeline randomness flows from one root seed through
// these so that runs are auditable and reproducible.
inline std::uint64_t child_seed(std::uint64_t seed, const std::string& label) {
  return splitmix64(seed ^ fnv1a64(label));
}

// Deterministic RNG with hand-rolled distributions. std::* distributions are
// implementation-defined, which would break the byte-identical-output
// contract across toolchains; the raw engine below is fully specified.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    s_[0] = splitmix64(seed);
    s_[1] = splitmix64(s_[0]);
    s_[2] = splitmix64(s_[1]);
    s_[3] = splitmix64(s_[2]);
  }

  std::uint64_t u64() {  // xoshiro256++
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Knuth's product method; fine for the event-count scales used here.
  long poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    if (lambda > 600.0)
      throw Error("OutOfRange", "poisson lambda too large: " + std::to_string(lambda));
    const double limit = std::exp(-lambda);
    long k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(u64() % n); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace premod
