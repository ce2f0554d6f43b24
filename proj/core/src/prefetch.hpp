#pragma once

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>

namespace funmatch {

/// Produces make(first), make(first + 1), ... in order. With threaded=true a
/// single worker runs ahead by at most `capacity` items; the delivered
/// sequence is the same as calling make() inline.
template <typename Item>
class Prefetcher {
 public:
  Prefetcher(std::size_t first, std::size_t last, std::function<Item(std::size_t)> make, std::size_t capacity,
             bool threaded)
      : next_(first), last_(last), make_(std::move(make)), capacity_(capacity == 0 ? 1 : capacity) {
    if (threaded && first < last) worker_ = std::thread([this] { produce(); });
  }

  Prefetcher(const Prefetcher&) = delete;
  Prefetcher& operator=(const Prefetcher&) = delete;

  ~Prefetcher() {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  Item next() {
    if (!worker_.joinable()) return make_(next_++);
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [this] { return !queue_.empty() || error_; });
    if (queue_.empty() && error_) std::rethrow_exception(error_);
    Item item = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return item;
  }

 private:
  void produce() {
    for (std::size_t i = next_; i < last_; ++i) {
      std::optional<Item> item;
      try {
        item.emplace(make_(i));
      } catch (...) {
        std::lock_guard lock(mutex_);
        error_ = std::current_exception();
        cv_.notify_all();
        return;
      }
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [this] { return queue_.size() < capacity_ || stop_; });
      if (stop_) return;
      queue_.push_back(std::move(*item));
      cv_.notify_all();
    }
  }

  std::size_t next_;
  std::size_t last_;
  std::function<Item(std::size_t)> make_;
  std::size_t capacity_;
  std::thread worker_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Item> queue_;
  std::exception_ptr error_;
  bool stop_ = false;
};

}  // namespace funmatch
