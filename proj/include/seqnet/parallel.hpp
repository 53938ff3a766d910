#pragma once

#include <cstddef>
#include <functional>

namespace seqnet {

/// Worker count: hardware concurrency, capped by SEQNET_THREADS when set.
std::size_t thread_count();

/// Overrides thread_count() for this process (0 restores the default).
void set_thread_count(std::size_t n);

// Activations of tens of megabytes are allocated and freed every step. With the
// default glibc policy each one is a fresh mmap that has to be faulted in again;
// this keeps freed blocks in the heap instead. Call once at startup.
void retain_heap_memory();

// Calls fn(i) for every i in [0, n), splitting the range into contiguous chunks
// across workers. fn must only write state owned by index i; results are then
// independent of the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace seqnet
