#include "voxseg/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace voxseg {

namespace {
std::atomic<int> g_threads{1};
}

int num_threads() { return g_threads.load(); }

void set_num_threads(int n) { g_threads.store(std::max(1, n)); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body) {
  const int workers = static_cast<int>(std::min<std::int64_t>(num_threads(), n));
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::int64_t i = w; i < n; i += workers) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace voxseg
