#ifndef HCMT_RNG_HPP
#define HCMT_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace hcmt {

// Deterministic random stream. mt19937_64 gives the engine (fully specified by
// the standard); uniform/normal are generated here rather than through
// std::*_distribution, whose output is implementation-defined. Normal draws use
// Box-Muller.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform() {  // [0,1)
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  // [0,n), n > 0
  std::int64_t uniform_int(std::int64_t n) {
    return static_cast<std::int64_t>(uniform() * static_cast<double>(n));
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.28318530717958647692 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<std::int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 mixing step, used to derive independent substream seeds from a
// master seed plus context words (iteration, purpose tag, item slot, ...).
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = mix64(seed);
  for (auto w : words) h = mix64(h ^ w);
  return h;
}

// Stream purpose tags. Keeping them centralized means skipping a stream in one
// mode (e.g. no teacher noise in supervised-only runs) cannot shift any other
// stream.
enum class Stream : std::uint64_t {
  kParamInit = 1,
  kSplit = 2,
  kSyntheticSample = 3,
  kBatchLabeled = 4,
  kBatchUnlabeled = 5,
  kCrop = 6,
  kStudentNoise = 7,
  kTeacherNoise = 8,
};

inline std::uint64_t stream_seed(std::uint64_t seed, Stream s,
                                 std::initializer_list<std::uint64_t> words = {}) {
  std::uint64_t h = derive_seed(seed, {static_cast<std::uint64_t>(s)});
  for (auto w : words) h = mix64(h ^ w);
  return h;
}

}  // namespace hcmt

#endif  // HCMT_RNG_HPP
