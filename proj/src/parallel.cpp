#include "jcdp/parallel.hpp"

#include <algorithm>
#include <thread>
#include <vector>

namespace jcdp {

void parallel_for_chunks(std::int64_t n, int n_chunks,
                         const std::function<void(std::int64_t, std::int64_t, int)>& fn) {
  if (n <= 0) return;
  const int chunks = int(std::min<std::int64_t>(n, std::max(1, n_chunks)));
  const std::int64_t step = (n + chunks - 1) / chunks;

  const unsigned hw = std::thread::hardware_concurrency();
  if (hw <= 1 || chunks == 1) {
    for (int c = 0; c < chunks; ++c) {
      const std::int64_t b = std::int64_t(c) * step;
      const std::int64_t e = std::min<std::int64_t>(n, b + step);
      if (b < e) fn(b, e, c);
    }
    return;
  }

  std::vector<std::thread> workers;
  workers.reserve(std::size_t(chunks));
  for (int c = 0; c < chunks; ++c) {
    const std::int64_t b = std::int64_t(c) * step;
    const std::int64_t e = std::min<std::int64_t>(n, b + step);
    if (b < e) workers.emplace_back([&fn, b, e, c] { fn(b, e, c); });
  }
  for (auto& w : workers) w.join();
}

}  // namespace jcdp
