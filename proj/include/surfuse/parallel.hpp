#pragma once

#include <cstddef>
#include <functional>

namespace surfuse {

/// Thread cap for per-item work (decoding, feature extraction). Initialised from
/// SURFUSE_THREADS, falling back to the hardware concurrency.
int max_threads();
void set_max_threads(int n);

/// Runs fn(i) for i in [0, n). Each index is handled by exactly one thread, so the
/// result is independent of the thread count as long as fn writes only to slot i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace surfuse
