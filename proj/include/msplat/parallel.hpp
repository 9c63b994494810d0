#pragma once

#include <functional>

namespace msplat {

/// Worker count: MSPLAT_THREADS env var if set (>= 1), else hardware
/// concurrency, else 1.
int thread_count();

/// Runs chunk(0..n_chunks-1) across up to thread_count() workers.
/// Chunk boundaries are fixed by the caller, never by the worker count, so
/// any computation that reduces per-chunk partials in chunk order is
/// bit-stable across thread counts.
void parallel_chunks(int n_chunks, const std::function<void(int)>& chunk);

}  // namespace msplat
