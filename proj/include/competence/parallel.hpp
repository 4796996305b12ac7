#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

#include <Eigen/Core>

namespace competence {

/// Splits [0, n) into contiguous chunks, one per worker. Each chunk writes
/// only its own output slots, so results do not depend on scheduling.
template <class Fn>
void parallel_chunks(Eigen::Index n, unsigned threads, Fn&& fn) {
  const auto workers = static_cast<Eigen::Index>(std::max(1u, threads));
  if (workers == 1 || n < 2 * workers) {
    fn(Eigen::Index{0}, n);
    return;
  }
  const Eigen::Index chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (Eigen::Index w = 0; w < workers; ++w) {
    const Eigen::Index begin = w * chunk;
    const Eigen::Index end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, w, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// --threads fallback: COMPETENCE_KIT_THREADS, else 1.
inline unsigned default_threads() {
  if (const char* env = std::getenv("COMPETENCE_KIT_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return 1;
}

}  // namespace competence
