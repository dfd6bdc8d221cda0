#pragma once

#include <cstdint>
#include <functional>

namespace simmil {

// Number of worker threads, capped by the SIMMIL_THREADS environment
// variable (default: hardware concurrency).
int thread_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks across
// the pool. Kernels must write only to locations owned by index i; with
// that rule the result is bit-identical for any thread count. Nested calls
// from inside a worker run inline.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

// Chunked variant: fn(begin, end) over disjoint ranges covering [0, n).
void parallel_for_chunks(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace simmil
