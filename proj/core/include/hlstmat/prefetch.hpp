#pragma once

// Bounded FIFO queue and a single-worker prefetcher that loads items ahead
// of the consumer with at most `capacity` finished items waiting.

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <queue>
#include <thread>

#include "hlstmat/errors.hpp"

namespace hlstmat {

template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ContractError("BoundedQueue: capacity must be positive");
  }

  /// Blocks while full. Returns false if the queue was closed.
  bool push(T item) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push(std::move(item));
    max_size_ = std::max(max_size_, items_.size());
    not_empty_.notify_one();
    return true;
  }

  /// Blocks while empty. Returns nullopt once closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

  std::size_t capacity() const { return capacity_; }
  /// Largest number of items ever held at once.
  std::size_t high_water_mark() const {
    std::lock_guard lock(mutex_);
    return max_size_;
  }

 private:
  const std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable not_full_, not_empty_;
  std::queue<T> items_;
  std::size_t max_size_ = 0;
  bool closed_ = false;
};

/// Calls load(0) .. load(count - 1) on a worker thread; next() hands the
/// results out in index order. A loader exception is rethrown by next().
/// T must be default-constructible.
template <typename T>
class Prefetcher {
 public:
  Prefetcher(std::size_t count, std::function<T(std::size_t)> load, std::size_t capacity)
      : queue_(capacity), worker_([this, count, load = std::move(load)] {
          for (std::size_t i = 0; i < count; ++i) {
            Slot slot;
            try {
              slot.value = load(i);
            } catch (...) {
              slot.error = std::current_exception();
            }
            const bool failed = slot.error != nullptr;
            if (!queue_.push(std::move(slot)) || failed) break;
          }
          queue_.close();
        }) {}

  ~Prefetcher() {
    queue_.close();
    worker_.join();
  }

  Prefetcher(const Prefetcher&) = delete;
  Prefetcher& operator=(const Prefetcher&) = delete;

  std::optional<T> next() {
    auto slot = queue_.pop();
    if (!slot) return std::nullopt;
    if (slot->error) std::rethrow_exception(slot->error);
    return std::move(slot->value);
  }

  std::size_t high_water_mark() const { return queue_.high_water_mark(); }

 private:
  struct Slot {
    T value{};
    std::exception_ptr error;
  };
  BoundedQueue<Slot> queue_;
  std::thread worker_;
};

}  // namespace hlstmat
