// Copyright 2026 The DPGM Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPGM_PARALLEL_HPP
#define DPGM_PARALLEL_HPP

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace dpgm {

/// Runs fn(chunk, worker) for chunk in [0, num_chunks) on `workers` threads.
///
/// Chunks are claimed dynamically, so callers must make results independent
/// of which worker ran a chunk (keyed RNG streams, per-chunk partial sums).
/// The first exception thrown by any chunk is rethrown on the caller.
template <typename Fn>
void parallel_chunks(std::size_t num_chunks, std::size_t workers, Fn&& fn) {
  if (workers <= 1 || num_chunks <= 1) {
    for (std::size_t c = 0; c < num_chunks; ++c) fn(c, std::size_t{0});
    return;
  }
  if (workers > num_chunks) workers = num_chunks;
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&](std::size_t w) {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= num_chunks) return;
      try {
        fn(c, w);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(num_chunks);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body, w);
  body(0);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace dpgm

#endif  // DPGM_PARALLEL_HPP
