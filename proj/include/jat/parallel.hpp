#pragma once

#include <cstddef>
#include <functional>

namespace jat {

// Global worker cap (CLI --threads); 0 means hardware concurrency.
void set_thread_cap(int threads);
int thread_cap();

// Runs fn(i) for i in [0, n) across workers. Each index is processed exactly
// once and results must be written to per-index slots, so the outcome is
// independent of the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace jat
