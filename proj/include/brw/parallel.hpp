#pragma once

// Deterministic replica harness. Replica i always draws from
// replica_stream(seed, i, salt); replicas are grouped in fixed-size blocks
// whose partial results are merged in block order, so every output is a pure
// function of (seed, count) and never of the worker count.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <optional>
#include <thread>
#include <vector>

#include "brw/rng.hpp"

namespace brw {

inline constexpr std::size_t kReplicaBlock = 256;

inline unsigned resolve_workers(unsigned hint) noexcept {
  if (hint > 0) return hint;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

namespace detail {

template <class Task>
void run_blocks(std::size_t num_blocks, unsigned workers, Task&& task) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(num_blocks, 1))));
  std::vector<std::exception_ptr> errors(num_blocks);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1, std::memory_order_relaxed);
      if (b >= num_blocks || failed.load(std::memory_order_relaxed)) return;
      try {
        task(b);
      } catch (...) {
        errors[b] = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Folds `body(acc, rng, index)` over replicas [0, count) and merges the
/// per-block accumulators with `merge(into, from)` in block order.
template <class Init, class Body, class Merge>
auto reduce_replicas(std::size_t count, std::uint64_t seed, std::uint64_t salt, unsigned workers,
                     Init init, Body body, Merge merge) {
  using Acc = decltype(init());
  const std::size_t num_blocks = (count + kReplicaBlock - 1) / kReplicaBlock;
  std::vector<std::optional<Acc>> partial(num_blocks);
  detail::run_blocks(num_blocks, resolve_workers(workers), [&](std::size_t b) {
    Acc acc = init();
    const std::size_t lo = b * kReplicaBlock;
    const std::size_t hi = std::min(count, lo + kReplicaBlock);
    for (std::size_t i = lo; i < hi; ++i) {
      Rng rng = replica_stream(seed, i, salt);
      body(acc, rng, i);
    }
    partial[b] = std::move(acc);
  });
  Acc total = init();
  for (auto& p : partial) merge(total, *p);
  return total;
}

/// Evaluates `fn(rng, index)` for every replica; results are in index order.
template <class Fn>
auto map_replicas(std::size_t count, std::uint64_t seed, std::uint64_t salt, unsigned workers, Fn fn) {
  using Result = decltype(fn(std::declval<Rng&>(), std::size_t{}));
  std::vector<Result> out(count);
  const std::size_t num_blocks = (count + kReplicaBlock - 1) / kReplicaBlock;
  detail::run_blocks(num_blocks, resolve_workers(workers), [&](std::size_t b) {
    const std::size_t lo = b * kReplicaBlock;
    const std::size_t hi = std::min(count, lo + kReplicaBlock);
    for (std::size_t i = lo; i < hi; ++i) {
      Rng rng = replica_stream(seed, i, salt);
      out[i] = fn(rng, i);
    }
  });
  return out;
}

}  // namespace brw
