#pragma once

// Process-level tuning for the executables.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace lcfed {

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// kernel. Training allocates and frees the same large buffers every step,
/// and with the default thresholds each reuse pays fresh page faults.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace lcfed
