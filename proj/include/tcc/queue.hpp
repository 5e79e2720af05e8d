#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "tcc/array.hpp"
#include "tcc/error.hpp"

namespace tcc {

/// Fixed-capacity FIFO ring of unit-norm row vectors.
///
/// Slots fill in order 0, 1, ..., capacity-1 and then wrap, overwriting the
/// oldest entry. A capacity of 0 gives a queue that ignores pushes.
class VectorQueue {
 public:
  static constexpr double kUnitTolerance = 1e-8;

  VectorQueue() = default;
  VectorQueue(std::size_t capacity, std::size_t dim)
      : storage_(capacity, dim), capacity_(capacity), dim_(dim) {}

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return count_; }
  bool empty() const noexcept { return count_ == 0; }
  std::size_t cursor() const noexcept { return cursor_; }

  void push(std::span<const double> v) {
    if (v.size() != dim_) throw ShapeMismatch("queue push: dimension " + std::to_string(v.size()));
    if (std::abs(l2_norm(v) - 1.0) > kUnitTolerance) {
      throw DegenerateNorm("queue push: vector is not unit-norm");
    }
    if (capacity_ == 0) return;
    std::copy(v.begin(), v.end(), storage_.row(cursor_).begin());
    cursor_ = (cursor_ + 1) % capacity_;
    if (count_ < capacity_) ++count_;
  }

  void push_rows(const DenseArray& rows) {
    for (std::size_t i = 0; i < rows.rows(); ++i) push(rows.row(i));
  }

  /// Vector held in physical slot l (l < size()).
  std::span<const double> slot(std::size_t l) const { return storage_.row(l); }

  /// Occupied slots 0..size()-1 as a (size x dim) array, in slot order.
  DenseArray contents() const {
    DenseArray out(count_, dim_);
    std::copy(storage_.data().begin(), storage_.data().begin() + count_ * dim_,
              out.data().begin());
    return out;
  }

  /// Restores raw state; used by checkpoint loading.
  void restore(DenseArray storage, std::size_t count, std::size_t cursor) {
    if (storage.rows() != capacity_ || storage.cols() != dim_ || count > capacity_ ||
        (capacity_ > 0 && cursor >= capacity_)) {
      throw ShapeMismatch("queue restore: inconsistent state");
    }
    storage_ = std::move(storage);
    count_ = count;
    cursor_ = cursor;
  }
  const DenseArray& storage() const noexcept { return storage_; }

  friend bool operator==(const VectorQueue&, const VectorQueue&) = default;

 private:
  DenseArray storage_;
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::size_t count_ = 0;
  std::size_t cursor_ = 0;
};

}  // namespace tcc
