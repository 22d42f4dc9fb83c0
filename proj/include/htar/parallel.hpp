#pragma once

#include <functional>

#include "htar/tensor.hpp"

namespace htar {

/// Worker count: HTAR_THREADS if set and positive, else the hardware concurrency.
int thread_count();

/// Runs body(0..count-1) on up to thread_count() threads. Every index runs
/// exactly once; the exception of the lowest failing index is rethrown.
void parallel_for(Index count, const std::function<void(Index)>& body);

} // namespace htar
