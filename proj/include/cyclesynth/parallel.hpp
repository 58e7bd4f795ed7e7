#pragma once

#include <cstdint>
#include <functional>

namespace cyclesynth {

// Worker cap from CYCLESYNTH_THREADS (default: hardware concurrency, min 1).
int max_threads();
void set_max_threads(int n);

// Runs fn(i) for i in [0, n). Each index is handled by exactly one worker;
// callers must only write disjoint outputs per index.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

} // namespace cyclesynth
