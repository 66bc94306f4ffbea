// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic block-partitioned parallel loop. Worker t handles the
// contiguous index range [t*n/T, (t+1)*n/T), so the work assignment depends
// only on n and the thread count, never on scheduling order.

#pragma once

#include <exception>
#include <stdexcept>
#include <thread>
#include <vector>

namespace sderf {

inline int hardware_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : int(n);
}

// f(i, tid) is called for every i in [0, n). With threads <= 1 everything
// runs inline on tid 0. Exceptions propagate from the lowest worker id.
template <class F>
inline void parallel_for(int n, int threads, F&& f) {
  if (n <= 0) return;
  if (threads > n) threads = n;
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) f(i, 0);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
  std::vector<std::thread> pool;
  pool.reserve(size_t(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      int lo = int(int64_t(t) * n / threads);
      int hi = int(int64_t(t + 1) * n / threads);
      try {
        for (int i = lo; i < hi; ++i) f(i, t);
      } catch (...) {
        errors[size_t(t)] = std::current_exception();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace sderf
