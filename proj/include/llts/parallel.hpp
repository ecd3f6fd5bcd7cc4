#pragma once

#include <cstddef>

namespace llts {

/// Worker cap for data-parallel loops: LLTS_THREADS if set, else the
/// hardware concurrency. Results never depend on this value.
int worker_count();
void set_worker_count(int n);

}  // namespace llts
