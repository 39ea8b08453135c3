#pragma once
#include <cstddef>
#include <functional>

namespace mvb {

// worker cap; results never depend on it (fixed chunking + pure per-particle work)
void set_max_threads(int n);
int max_threads();

inline constexpr std::size_t default_chunk = 8192;

// runs fn(begin, end) over fixed-size chunks of [0, n); chunk boundaries are
// independent of the thread count, and chunks write disjoint state
void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                     std::size_t chunk = default_chunk);

}  // namespace mvb
