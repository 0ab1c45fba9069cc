#pragma once

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <mutex>
#include <optional>

#include "lens/error.hpp"

namespace lens {

enum class Overflow { Block, DropOldest };

/// Bounded multi-threaded FIFO. With DropOldest a full queue discards its oldest element to
/// admit the new one; with Block the producer waits for space.
template <class T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity, Overflow policy = Overflow::Block) : capacity_(capacity), policy_(policy) {
        if (capacity == 0) throw InvalidArgument("BoundedQueue: capacity must be >= 1");
    }

    /// False when the queue has been closed.
    bool push(T value) {
        std::unique_lock lock(mu_);
        if (policy_ == Overflow::Block) not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
        if (closed_) return false;
        if (items_.size() >= capacity_) {
            items_.pop_front();
            ++dropped_;
        }
        items_.push_back(std::move(value));
        not_empty_.notify_one();
        return true;
    }

    /// Blocks until an element is available; empty once the queue is closed and drained.
    std::optional<T> pop() {
        std::unique_lock lock(mu_);
        not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
        if (items_.empty()) return std::nullopt;
        T v = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return v;
    }

    void close() {
        std::lock_guard lock(mu_);
        closed_ = true;
        not_empty_.notify_all();
        not_full_.notify_all();
    }

    std::size_t dropped() const {
        std::lock_guard lock(mu_);
        return dropped_;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return items_.size();
    }

    std::size_t capacity() const { return capacity_; }

private:
    mutable std::mutex mu_;
    std::condition_variable not_empty_, not_full_;
    std::deque<T> items_;
    std::size_t capacity_;
    Overflow policy_;
    std::size_t dropped_ = 0;
    bool closed_ = false;
};

}  // namespace lens
