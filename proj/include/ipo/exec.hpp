#pragma once

#include <cstddef>
#include <functional>
#include <memory>

namespace ipo {

namespace internal {
class ThreadPool;
}

/// Work-sharing context handed down from the CLI. parallel_for partitions
/// [0, n) across at most threads() workers; bodies must write only to their
/// own index's output slot so the combined result is order-independent.
/// Workers are spawned once at construction and reused, so per-call overhead
/// stays small even for short batches.
class ExecContext {
 public:
  ExecContext() = default;
  explicit ExecContext(unsigned threads);

  unsigned threads() const { return threads_; }

  void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) const;

  /// Single-threaded context for library callers without a pool.
  static const ExecContext& serial();

  /// Context sized to hardware parallelism.
  static ExecContext hardware();

 private:
  unsigned threads_ = 1;
  std::shared_ptr<internal::ThreadPool> pool_;
};

}  // namespace ipo
