#pragma once

#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

namespace latentaccel {

/// Fixed-capacity FIFO that overwrites its oldest element when full.
/// Index 0 is the oldest element, size() - 1 the newest.
template <class T>
class RingBuffer {
 public:
  explicit RingBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ring buffer capacity must be positive");
    slots_.reserve(capacity);
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return slots_.size(); }
  bool empty() const noexcept { return slots_.empty(); }
  bool full() const noexcept { return slots_.size() == capacity_; }

  void push_back(T value) {
    if (!full()) {
      slots_.push_back(std::move(value));
      return;
    }
    slots_[head_] = std::move(value);
    head_ = (head_ + 1) % capacity_;
  }

  const T& operator[](std::size_t i) const { return slots_[(head_ + i) % slots_.size()]; }

  const T& oldest() const { return (*this)[0]; }
  const T& newest() const { return (*this)[size() - 1]; }

  /// i = 0 is the newest element.
  const T& from_newest(std::size_t i) const { return (*this)[size() - 1 - i]; }

  void clear() noexcept {
    slots_.clear();
    head_ = 0;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // slot of the oldest element once full
  std::vector<T> slots_;
};

}  // namespace latentaccel
