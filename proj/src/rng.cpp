#include "fineforge/rng.hpp"

namespace fineforge {
namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a(std::uint64_t state, const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state ^= bytes[i];
    state *= kFnvPrime;
  }
  return state;
}

std::uint64_t fnv1a_u64(std::uint64_t state, std::uint64_t value) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) {
    buf[i] = static_cast<unsigned char>(value >> (8 * i));
  }
  return fnv1a(state, buf, 8);
}

}  // namespace

std::uint64_t stable_hash64(std::initializer_list<std::string_view> parts) {
  std::uint64_t state = kFnvOffset;
  for (std::string_view part : parts) {
    state = fnv1a_u64(state, part.size());
    state = fnv1a(state, part.data(), part.size());
  }
  return state;
}

std::uint64_t stable_hash64_bytes(const void* data, std::size_t size) {
  return fnv1a(kFnvOffset, data, size);
}

std::uint64_t DetRng::next_below(std::uint64_t n) {
  if (n <= 1) {
    return 0;
  }
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t draw;
  do {
    draw = engine_();
  } while (draw >= limit);
  return draw % n;
}

DetRng record_rng(std::uint64_t run_seed, std::string_view stage,
                  std::string_view record_id) {
  unsigned char seed_bytes[8];
  for (int i = 0; i < 8; ++i) {
    seed_bytes[i] = static_cast<unsigned char>(run_seed >> (8 * i));
  }
  const std::string_view seed_view(reinterpret_cast<const char*>(seed_bytes), 8);
  return DetRng(stable_hash64({seed_view, stage, record_id}));
}

}  // namespace fineforge
