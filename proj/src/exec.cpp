#include "ipo/exec.hpp"

#include <atomic>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ipo {
namespace internal {

// Persistent workers sharing an atomic index; the caller participates too.
class ThreadPool {
 public:
  explicit ThreadPool(unsigned workers) {
    workers_.reserve(workers);
    for (unsigned t = 0; t < workers; ++t)
      workers_.emplace_back([this] { worker_loop(); });
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_start_.notify_all();
    for (auto& t : workers_) t.join();
  }

  void run(std::size_t n, const std::function<void(std::size_t)>& body) {
    std::unique_lock<std::mutex> lock(mu_);
    body_ = &body;
    n_ = n;
    next_.store(0, std::memory_order_relaxed);
    error_ = nullptr;
    active_ = static_cast<unsigned>(workers_.size());
    ++generation_;
    lock.unlock();
    cv_start_.notify_all();

    drain();

    lock.lock();
    cv_done_.wait(lock, [this] { return active_ == 0; });
    body_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void drain() {
    while (true) {
      const std::size_t i = next_.fetch_add(1, std::memory_order_relaxed);
      if (i >= n_) return;
      try {
        (*body_)(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu_);
        if (!error_) error_ = std::current_exception();
        next_.store(n_, std::memory_order_relaxed);
        return;
      }
    }
  }

  void worker_loop() {
    std::size_t seen = 0;
    while (true) {
      std::unique_lock<std::mutex> lock(mu_);
      cv_start_.wait(lock, [&] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
      lock.unlock();

      drain();

      lock.lock();
      if (--active_ == 0) cv_done_.notify_all();
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_start_, cv_done_;
  const std::function<void(std::size_t)>* body_ = nullptr;
  std::atomic<std::size_t> next_{0};
  std::size_t n_ = 0;
  std::size_t generation_ = 0;
  unsigned active_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

}  // namespace internal

ExecContext::ExecContext(unsigned threads) : threads_(threads == 0 ? 1 : threads) {
  if (threads_ > 1)
    pool_ = std::make_shared<internal::ThreadPool>(threads_ - 1);
}

const ExecContext& ExecContext::serial() {
  static const ExecContext ctx;
  return ctx;
}

ExecContext ExecContext::hardware() {
  unsigned n = std::thread::hardware_concurrency();
  return ExecContext(n == 0 ? 1 : n);
}

void ExecContext::parallel_for(std::size_t n,
                               const std::function<void(std::size_t)>& body) const {
  if (n == 0) return;
  if (!pool_ || n == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  pool_->run(n, body);
}

}  // namespace ipo
