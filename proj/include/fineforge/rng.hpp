#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace fineforge {

// FNV-1a over length-framed parts. Used wherever a stable, platform-independent
// 64-bit hash is needed (per-record RNG seeding, content change detection).
// Not cryptographic.
std::uint64_t stable_hash64(std::initializer_list<std::string_view> parts);
std::uint64_t stable_hash64_bytes(const void* data, std::size_t size);

// Deterministic RNG wrapper. mt19937_64 output is fully specified by the
// standard; unit doubles are derived with a fixed bit recipe so streams are
// byte-identical across platforms and standard library implementations.
class DetRng {
 public:
  explicit DetRng(std::uint64_t seed) : engine_(seed) {}

  // Uniform double in [0, 1).
  double unit() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). Rejection sampling, n >= 1.
  std::uint64_t next_below(std::uint64_t n);

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

// Per-record RNG stream: seed derives from the run seed, a stage tag, and the
// record id, so parallel execution order cannot change outputs and distinct
// stages draw from independent streams.
DetRng record_rng(std::uint64_t run_seed, std::string_view stage,
                  std::string_view record_id);

}  // namespace fineforge
