#include "threadpool.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <memory>
#include <string>

namespace fnet {

struct ThreadPool::Batch {
  std::int64_t n = 0;
  std::atomic<std::int64_t> next{0};
  std::atomic<std::int64_t> done{0};
  const std::function<void(std::int64_t)>* fn = nullptr;
  std::mutex err_mu;
  std::exception_ptr error;
  std::int64_t error_index = -1;
  std::condition_variable done_cv;
  std::mutex done_mu;

  void run_items() {
    for (;;) {
      std::int64_t i = next.fetch_add(1);
      if (i >= n) break;
      try {
        (*fn)(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!error || i < error_index) {
          error = std::current_exception();
          error_index = i;
        }
      }
      if (done.fetch_add(1) + 1 == n) {
        std::lock_guard<std::mutex> lk(done_mu);
        done_cv.notify_all();
      }
    }
  }
};

ThreadPool::ThreadPool(int threads) {
  int extra = threads - 1;
  for (int i = 0; i < extra; ++i) workers_.emplace_back([this] { worker_loop(); });
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  for (auto& w : workers_) w.join();
}

void ThreadPool::worker_loop() {
  std::uint64_t seen_gen = 0;
  for (;;) {
    Batch* b = nullptr;
    {
      std::unique_lock<std::mutex> lk(mu_);
      cv_.wait(lk, [&] { return stop_ || (batch_ != nullptr && gen_ != seen_gen); });
      if (stop_) return;
      b = batch_;
      seen_gen = gen_;
    }
    b->run_items();
    {
      // wait for this round to be retired before looking for the next one
      std::unique_lock<std::mutex> lk(mu_);
      cv_.wait(lk, [&] { return stop_ || gen_ != seen_gen || batch_ == nullptr; });
      if (stop_) return;
    }
  }
}

void ThreadPool::for_each_index(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
  if (n <= 0) return;
  if (workers_.empty() || n == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  Batch b;
  b.n = n;
  b.fn = &fn;
  {
    std::lock_guard<std::mutex> lk(mu_);
    batch_ = &b;
    ++gen_;
  }
  cv_.notify_all();
  b.run_items();  // caller participates
  {
    std::unique_lock<std::mutex> lk(b.done_mu);
    b.done_cv.wait(lk, [&] { return b.done.load() >= n; });
  }
  {
    std::lock_guard<std::mutex> lk(mu_);
    batch_ = nullptr;
  }
  cv_.notify_all();
  if (b.error) std::rethrow_exception(b.error);
}

int resolve_threads(int requested) {
  if (requested >= 1) return requested;
  if (const char* env = std::getenv("FUSIONNET_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

ThreadPool& global_pool(int threads) {
  static std::unique_ptr<ThreadPool> pool;
  static int pool_threads = -1;
  if (threads <= 0 && pool) return *pool;
  int want = resolve_threads(threads);
  if (!pool || pool_threads != want) {
    pool.reset();  // join old workers before replacing
    pool = std::make_unique<ThreadPool>(want);
    pool_threads = want;
  }
  return *pool;
}

}  // namespace fnet
