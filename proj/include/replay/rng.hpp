#pragma once

#include <cstdint>
#include <random>

namespace replay {

// Seeded random source shared by a single run. The two draw primitives are
// virtual so tests can script the reservoir gate and victim choice.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  virtual ~Rng() = default;

  // Uniform integer in [0, n). n must be positive.
  virtual std::uint64_t index(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  // Uniform real in [0, 1).
  virtual double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Derives independent sub-seeds (model init, replay, stream order) from one run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x9e3779b9u};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace replay
