#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <vector>

#include "dgrpc/common.h"

namespace dgrpc {

/// Carousel-style timing wheel: a ring of fixed-width time buckets covering
/// `horizon`. An entry scheduled for time t goes into the bucket whose start
/// is t rounded up to the slot width, so it is never released early. Entries
/// further out than the horizon are clamped to its last bucket and counted.
template <typename T>
class TimingWheel {
 public:
  struct Item {
    Timestamp scheduled;
    T value;
  };

  explicit TimingWheel(Duration slot_width = std::chrono::microseconds(10),
                       Duration horizon = std::chrono::milliseconds(10))
      : width_(slot_width.count()),
        nbuckets_(bucket_count(slot_width, horizon)),
        buckets_(nbuckets_),
        bitmap_((nbuckets_ + 63) / 64, 0) {}

  Duration slot_width() const { return Duration(width_); }
  Duration horizon() const { return Duration(width_ * static_cast<int64_t>(nbuckets_)); }
  size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }
  uint64_t clamped() const { return clamped_; }
  uint64_t early_releases() const { return early_; }

  /// Queues `value` for release at or after `send_time`. Returns the bucket
  /// time it was placed in.
  Timestamp insert(T value, Timestamp send_time, Timestamp now) {
    if (count_ == 0) cursor_ = std::max(cursor_, align_up(now.count()));
    int64_t t = std::max(align_up(send_time.count()), cursor_);
    const int64_t last = cursor_ + width_ * static_cast<int64_t>(nbuckets_ - 1);
    if (t > last) {
      t = last;
      clamped_++;
    }
    const size_t idx = index_of(t);
    buckets_[idx].push_back(Item{send_time, std::move(value)});
    bitmap_[idx / 64] |= uint64_t{1} << (idx % 64);
    count_++;
    return Timestamp(t);
  }

  /// Appends every entry in buckets starting at or before `now` to `out`,
  /// in bucket order (FIFO within a bucket).
  size_t poll(Timestamp now, std::vector<T>& out) {
    size_t n = 0;
    while (count_ > 0) {
      const int64_t t = next_nonempty();
      if (t > now.count()) break;
      auto& b = buckets_[index_of(t)];
      for (Item& it : b) {
        if (it.scheduled > now) early_++;
        out.push_back(std::move(it.value));
      }
      n += b.size();
      count_ -= b.size();
      b.clear();
      const size_t idx = index_of(t);
      bitmap_[idx / 64] &= ~(uint64_t{1} << (idx % 64));
      cursor_ = t + width_;
    }
    cursor_ = std::max(cursor_, align_down(now.count()) + width_);
    return n;
  }

  /// Start time of the earliest non-empty bucket, or kNever.
  Timestamp next_due() const { return count_ == 0 ? kNever : Timestamp(next_nonempty()); }

 private:
  static size_t bucket_count(Duration slot_width, Duration horizon) {
    if (slot_width.count() <= 0 || horizon.count() / slot_width.count() < 2) {
      throw ConfigError("bad timing wheel geometry");
    }
    return static_cast<size_t>(horizon.count() / slot_width.count());
  }

  int64_t align_up(int64_t t) const { return (t + width_ - 1) / width_ * width_; }
  int64_t align_down(int64_t t) const { return t / width_ * width_; }
  size_t index_of(int64_t t) const { return static_cast<size_t>(t / width_) % nbuckets_; }

  int64_t next_nonempty() const {
    const size_t start = index_of(cursor_);
    size_t idx = start;
    size_t scanned = 0;
    while (scanned < nbuckets_) {
      const size_t word = idx / 64;
      const uint64_t bits = bitmap_[word] >> (idx % 64);
      if (bits != 0) {
        const size_t hit = idx + static_cast<size_t>(std::countr_zero(bits));
        if (hit < nbuckets_) {
          const size_t dist = (hit + nbuckets_ - start) % nbuckets_;
          return cursor_ + width_ * static_cast<int64_t>(dist);
        }
      }
      const size_t next = (word + 1) * 64;
      scanned += std::min(next, nbuckets_) - idx;
      idx = next >= nbuckets_ ? 0 : next;
    }
    return kNever.count();
  }

  int64_t width_;
  size_t nbuckets_;
  std::vector<std::vector<Item>> buckets_;
  std::vector<uint64_t> bitmap_;
  int64_t cursor_ = 0;
  size_t count_ = 0;
  uint64_t clamped_ = 0;
  uint64_t early_ = 0;
};

}  // namespace dgrpc
