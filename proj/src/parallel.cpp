#include "jat/parallel.hpp"

#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace jat {

namespace {
int g_thread_cap = 0;
}

void set_thread_cap(int threads) { g_thread_cap = threads < 0 ? 0 : threads; }

int thread_cap() {
  if (g_thread_cap > 0) return g_thread_cap;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const int workers = std::min<std::size_t>(static_cast<std::size_t>(thread_cap()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (failed.load() && error) std::rethrow_exception(error);
}

}  // namespace jat
