#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dgrpc {

/// Fixed pool of threads running worker-mode request handlers. submit() may
/// be called from any thread; tasks run in FIFO order per pool.
class WorkerPool {
 public:
  explicit WorkerPool(size_t num_threads);
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  void submit(std::function<void()> task);
  size_t size() const { return threads_.size(); }

 private:
  void run(std::stop_token st);

  std::mutex mu_;
  std::condition_variable_any cv_;
  std::deque<std::function<void()>> tasks_;
  std::vector<std::jthread> threads_;
};

/// Many-writer, single-reader hand-off queue.
template <typename T>
class MpscQueue {
 public:
  void push(T v) {
    std::lock_guard<std::mutex> g(mu_);
    items_.push_back(std::move(v));
  }

  /// Moves everything queued so far into `out`.
  size_t drain(std::vector<T>& out) {
    std::lock_guard<std::mutex> g(mu_);
    const size_t n = items_.size();
    for (auto& v : items_) out.push_back(std::move(v));
    items_.clear();
    return n;
  }

  bool empty() const {
    std::lock_guard<std::mutex> g(mu_);
    return items_.empty();
  }

 private:
  mutable std::mutex mu_;
  std::vector<T> items_;
};

}  // namespace dgrpc
