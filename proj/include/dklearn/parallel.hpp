#pragma once

#include <cstddef>
#include <exception>
#include <future>
#include <utility>
#include <vector>

namespace dklearn {

/// Runs f(0..n-1), optionally on separate threads. Each task must be
/// self-contained (own derived seed, own output slot) so serial and parallel
/// execution produce identical results. Exceptions are rethrown in index
/// order, so the first failing index wins deterministically.
template <typename F>
void for_each_index(std::size_t n, bool parallel, F&& f) {
  if (!parallel || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::future<void>> tasks;
  tasks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    tasks.push_back(std::async(std::launch::async, [&f, i] { f(i); }));
  }
  std::exception_ptr first;
  for (auto& t : tasks) {
    try {
      t.get();
    } catch (...) {
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace dklearn
