#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace tobias {

// Seeded xoshiro256++ with splitmix64 state expansion. The generator is
// fully specified here so that a given seed yields the same draw sequence
// on every platform; no std::random distributions are used anywhere.
class RngState {
public:
  RngState() : RngState(0) {}

  explicit RngState(uint64_t seed) : seed_(seed) {
    uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n must be > 0. Rejection-free modulo of a
  // 64-bit draw; the bias is < 2^-50 for any n that fits our use.
  uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller. Two uniforms are consumed per draw and
  // the sine branch is discarded, keeping the state a pure 4-word record.
  double normal() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Derive an independent child stream. Streams are identified by name so
  // that consuming one (e.g. merge selection) never shifts another
  // (e.g. crop parameters).
  RngState stream(std::string_view name) const {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : name) {
      h ^= static_cast<uint8_t>(c);
      h *= 0x100000001b3ULL;
    }
    uint64_t s = seed_ ^ h;
    return RngState(splitmix64(s));
  }

  RngState stream(std::string_view name, uint64_t index) const {
    return stream(std::string(name) + "#" + std::to_string(index));
  }

  std::array<uint64_t, 4> words() const { return state_; }
  void set_words(const std::array<uint64_t, 4>& w) { state_ = w; }

private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t seed_;
  std::array<uint64_t, 4> state_;
};

}  // namespace tobias
