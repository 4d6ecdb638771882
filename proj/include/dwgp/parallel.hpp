#pragma once

// Ordered parallel map.  Work items run on a small pool of std::threads;
// results land in input order, so output never depends on scheduling.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace dwgp {

/// Thread count from DWGP_THREADS, else 1.
inline std::size_t default_thread_count() {
  if (const char* env = std::getenv("DWGP_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

/// out[i] = f(in[i]).  If any call throws, the exception of the lowest
/// failing index is rethrown after all workers have joined.
template <class T, class F>
auto ordered_map(const std::vector<T>& in, F&& f, std::size_t threads = 0)
    -> std::vector<decltype(f(in.front()))> {
  using R = decltype(f(in.front()));
  const std::size_t n = in.size();
  if (threads == 0) threads = default_thread_count();
  threads = std::max<std::size_t>(1, std::min(threads, n));

  std::vector<std::optional<R>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i].emplace(f(in[i]));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
  }
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace dwgp
