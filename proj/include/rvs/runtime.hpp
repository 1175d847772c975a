#ifndef RVS_RUNTIME_HPP
#define RVS_RUNTIME_HPP

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace rvs {

/// Keeps large activation buffers on the heap between training steps instead of
/// returning them to the kernel; repeated mmap/munmap page faults otherwise dominate.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace rvs

#endif  // RVS_RUNTIME_HPP
