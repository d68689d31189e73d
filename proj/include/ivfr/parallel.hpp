#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace ivfr {

//! Run fn(i) for i in [0, count). Each index writes only its own slot, so the
//! result is independent of the worker count and schedule.
inline void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const auto nw = static_cast<std::size_t>(workers);
  std::vector<std::thread> threads;
  threads.reserve(nw);
  for (std::size_t t = 0; t < nw; ++t) {
    threads.emplace_back([&, t] {
      for (std::size_t i = t; i < count; i += nw) fn(i);
    });
  }
  for (auto& th : threads) th.join();
}

}  // namespace ivfr
