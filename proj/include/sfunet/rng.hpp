#pragma once

// Deterministic random streams. std::mt19937_64 has a portable state and
// stream; the distributions here are hand-rolled because the standard
// library's are implementation-defined and would break bit-exact
// reproducibility of checkpoint/resume and seeded sampling.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace sfunet {

class RngState {
 public:
  explicit RngState(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller with a cached spare, N(0, 1)
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.28318530717958647692 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // uniform integer in [0, n), rejection sampled so the stream is portable
  int64_t uniform_int(int64_t n) {
    if (n <= 0) throw std::runtime_error("uniform_int: n must be positive");
    const uint64_t range = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return static_cast<int64_t>(x % range);
  }

  // Fisher-Yates
  template <typename Vec>
  void shuffle(Vec& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      const int64_t j = uniform_int(i + 1);
      std::swap(v[i], v[static_cast<size_t>(j)]);
    }
  }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_ << " " << (has_spare_ ? 1 : 0) << " ";
    uint64_t bits = 0;
    static_assert(sizeof(bits) == sizeof(spare_));
    std::memcpy(&bits, &spare_, sizeof(bits));
    os << bits;
    return os.str();
  }

  static RngState deserialize(const std::string& blob) {
    RngState r;
    std::istringstream is(blob);
    int spare_flag = 0;
    uint64_t bits = 0;
    is >> r.engine_ >> spare_flag >> bits;
    if (!is) throw std::runtime_error("RngState: malformed serialized state");
    r.has_spare_ = spare_flag != 0;
    std::memcpy(&r.spare_, &bits, sizeof(bits));
    return r;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sfunet
