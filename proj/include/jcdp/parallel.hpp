#pragma once

#include <cstdint>
#include <functional>

namespace jcdp {

// Runs fn(begin, end, chunk_index) over a fixed partition of [0, n).
// The partition depends only on n and n_chunks, never on thread count, so
// reductions that accumulate per chunk and combine in chunk order are
// bit-deterministic on any machine.
inline constexpr int kGradChunks = 16;

void parallel_for_chunks(std::int64_t n, int n_chunks,
                         const std::function<void(std::int64_t, std::int64_t, int)>& fn);

}  // namespace jcdp
