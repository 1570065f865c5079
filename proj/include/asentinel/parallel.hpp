#pragma once

// Small ordered worker pool for seed-parallel runs.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace asentinel {

/// Worker count from ASENTINEL_THREADS, else hardware concurrency (at least 1).
inline int worker_count() {
  if (const char* env = std::getenv("ASENTINEL_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v >= 1) return v;
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs job(i) for i in [0, count) on up to `workers` threads. Results are
/// stored by index, so the output order never depends on scheduling. The first
/// exception thrown by any job is rethrown after all workers stop.
template <class Result>
std::vector<Result> parallel_map(std::size_t count, const std::function<Result(std::size_t)>& job,
                                 int workers = worker_count()) {
  std::vector<Result> out(count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        out[i] = job(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(count)));
  if (n == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(run);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace asentinel
