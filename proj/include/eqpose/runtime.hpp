#pragma once

// Process-level tuning for long training runs.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace eqpose {

/// Keeps large tape buffers on the heap instead of fresh mmap regions. Each
/// training step frees and reallocates tens of megabytes; with glibc defaults
/// every step pays the page faults again.
inline void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace eqpose
