#include "threadpool.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace simmil {
namespace {

thread_local bool g_in_worker = false;

struct JobState {
  int64_t n = 0;
  int64_t nchunks = 0;
  int64_t chunk = 0;
  const std::function<void(int64_t, int64_t)>* fn = nullptr;
  std::atomic<int64_t> next{0};
  std::atomic<int64_t> done{0};
  std::exception_ptr err;
  std::mutex err_mu;

  void work() {
    for (;;) {
      int64_t c = next.fetch_add(1, std::memory_order_relaxed);
      if (c >= nchunks) return;
      int64_t lo = c * chunk;
      int64_t hi = std::min<int64_t>(n, lo + chunk);
      try {
        if (lo < hi) (*fn)(lo, hi);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
      }
      done.fetch_add(1, std::memory_order_acq_rel);
    }
  }
};

class Pool {
 public:
  Pool() {
    int n = int(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("SIMMIL_THREADS")) {
      int cap = std::atoi(env);
      if (cap >= 1) n = cap;
    }
    threads_ = n;
    for (int i = 0; i < n - 1; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  int size() const { return threads_; }

  void run(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    if (threads_ == 1 || g_in_worker || workers_.empty()) {
      fn(0, n);
      return;
    }
    auto st = std::make_shared<JobState>();
    st->n = n;
    st->nchunks = std::min<int64_t>(threads_, n);
    st->chunk = (n + st->nchunks - 1) / st->nchunks;
    st->fn = &fn;

    {
      std::lock_guard<std::mutex> lk(mu_);
      job_ = st;
      generation_++;
    }
    cv_.notify_all();
    st->work();
    while (st->done.load(std::memory_order_acquire) < st->nchunks)
      std::this_thread::yield();
    {
      std::lock_guard<std::mutex> lk(mu_);
      job_.reset();
    }
    if (st->err) std::rethrow_exception(st->err);
  }

 private:
  void worker_loop() {
    g_in_worker = true;
    uint64_t seen = 0;
    for (;;) {
      std::shared_ptr<JobState> job;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || (job_ && generation_ != seen); });
        if (stop_) return;
        seen = generation_;
        job = job_;
      }
      if (job) job->work();
    }
  }

  int threads_ = 1;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::shared_ptr<JobState> job_;
  uint64_t generation_ = 0;
  bool stop_ = false;
};

Pool& pool() {
  static Pool p;
  return p;
}

}  // namespace

int thread_count() { return pool().size(); }

void parallel_for_chunks(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  pool().run(n, fn);
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  pool().run(n, [&fn](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) fn(i);
  });
}

}  // namespace simmil
