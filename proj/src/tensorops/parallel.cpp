#include "llts/parallel.hpp"

#include <malloc.h>
#include <omp.h>

#include <cstdlib>
#include <string>

namespace llts {

namespace {
int initial_worker_count() {
  int n = omp_get_num_procs();
  if (const char* env = std::getenv("LLTS_THREADS")) {
    try {
      int cap = std::stoi(env);
      if (cap >= 1 && cap < n) n = cap;
    } catch (...) {
    }
  }
  return n < 1 ? 1 : n;
}

int g_workers = initial_worker_count();

// Tensors are large, short-lived buffers. Keeping them on the heap instead of
// fresh mmap pages avoids a page fault per 4 KiB on every allocation.
[[maybe_unused]] const bool g_allocator_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
  return true;
}();
}  // namespace

int worker_count() { return g_workers; }

void set_worker_count(int n) { g_workers = n < 1 ? 1 : n; }

}  // namespace llts
