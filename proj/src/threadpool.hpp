#pragma once

// Fixed-size worker pool. Parallelism in this project happens only at the
// granularity of independent work items (batch samples, subjects); each item
// runs single-threaded, and callers combine results in index order, so output
// is identical for every thread count.

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <queue>
#include <thread>
#include <vector>

namespace fnet {

class ThreadPool {
 public:
  explicit ThreadPool(int threads);
  ~ThreadPool();

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int size() const { return static_cast<int>(workers_.size()) + 1; }  // + caller thread

  // Runs fn(i) for i in [0, n). Blocks until all items finish. Exceptions from
  // items are rethrown on the calling thread (first by index wins).
  void for_each_index(std::int64_t n, const std::function<void(std::int64_t)>& fn);

 private:
  struct Batch;
  void worker_loop();

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  Batch* batch_ = nullptr;
  std::uint64_t gen_ = 0;
  bool stop_ = false;
};

// Resolve a thread-count request: n >= 1 is taken as-is, n <= 0 means "auto"
// (FUSIONNET_THREADS env var if set, else hardware concurrency).
int resolve_threads(int requested);

// Process-wide pool used by train/eval; reset when the thread count changes.
// threads <= 0 keeps the current pool (creating an auto-sized one if none).
ThreadPool& global_pool(int threads = 0);

}  // namespace fnet
