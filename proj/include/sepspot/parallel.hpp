// Copyright (c) 2026 The sepspot Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Index-parallel loops. Results are written by index so output never depends
// on scheduling.

#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace sepspot {

namespace detail {
inline std::atomic<std::size_t>& WorkerOverride() {
  static std::atomic<std::size_t> n{0};
  return n;
}
}  // namespace detail

/// Hardware threads, capped by SEPSPOT_THREADS and by any scoped override.
inline std::size_t WorkerCount() {
  if (std::size_t o = detail::WorkerOverride().load()) return o;
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SEPSPOT_THREADS")) {
    try {
      const long cap = std::stol(env);
      if (cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
    } catch (const std::exception&) {
      // Unparseable values are ignored.
    }
  }
  return n;
}

/// Pins WorkerCount() for the lifetime of the guard.
class ScopedWorkers {
 public:
  explicit ScopedWorkers(std::size_t n)
      : previous_(detail::WorkerOverride().exchange(std::max<std::size_t>(n, 1))) {}
  ~ScopedWorkers() { detail::WorkerOverride().store(previous_); }
  ScopedWorkers(const ScopedWorkers&) = delete;
  ScopedWorkers& operator=(const ScopedWorkers&) = delete;

 private:
  std::size_t previous_;
};

/// Calls f(i) for i in [0, n). The lowest-index exception is rethrown.
template <typename F>
void ParallelFor(std::size_t n, F&& f) {
  const std::size_t workers = std::min(WorkerCount(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto run = [&]() {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace sepspot
