#pragma once

#include <cstdint>

namespace faqs {

// splitmix64 finalizer over a + golden * (b + 1). Used to derive independent
// counter-based streams, e.g. derive_seed(derive_seed(master, client), round).
inline std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace faqs
