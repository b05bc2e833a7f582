#pragma once

#include <functional>

namespace softseg {

/// Worker count used by every parallel kernel. 1 selects the fully
/// deterministic single-threaded mode.
void set_num_threads(int n);
int num_threads();

/// Runs fn(i) for i in [begin, end). Iterations are split into contiguous
/// blocks, one per worker; fn must only write state owned by index i.
void parallel_for(int begin, int end, const std::function<void(int)>& fn);

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// OS. Training reallocates the same large buffers every step and otherwise
/// pays a page fault per 4 KiB on each of them. No-op off glibc.
void retain_heap_memory();

}  // namespace softseg
