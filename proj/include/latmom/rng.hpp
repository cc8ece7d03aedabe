#pragma once

#include <cstdint>

namespace latmom {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for stream `stream`, item `counter` under a master seed. Every
/// independent unit of work (chain, replication, grid point) draws its own
/// generator from this so results do not depend on execution order.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                    std::uint64_t counter = 0) {
  return mix64(mix64(mix64(master) ^ (stream * 0xd1b54a32d192ed03ULL)) ^
               (counter * 0x8cb92ba72f3d8dd7ULL));
}

}  // namespace latmom
