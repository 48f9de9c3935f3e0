#pragma once

#include <cstddef>
#include <cstdint>

namespace tabtile::memtrack {

// High-water-mark tracking of live tensor allocations.
//
// At most one scope may be open at a time, process-wide; opening a second
// (nested or from another thread) throws InstrumentationError. Only
// allocations made on the scope's owning thread are counted, so kernels
// must run single-threaded while a scope is open (chunked_attention
// degrades to serial on its own when it sees an active scope).
class Scope {
 public:
  Scope();
  ~Scope();

  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;

  std::uint64_t live_bytes() const;
  std::uint64_t peak_bytes() const;

 private:
  std::uint64_t live_ = 0;
  std::uint64_t peak_ = 0;

  friend void on_alloc(std::size_t);
  friend void on_free(std::size_t);
};

// True when a scope opened by the calling thread is active.
bool active();

// Hooks called by TrackingAllocator. No-ops when no scope is active on
// the calling thread.
void on_alloc(std::size_t bytes);
void on_free(std::size_t bytes);

// Allocator used by every Tensor buffer, so that all tensor memory flows
// through the tracker. Value-identical to std::allocator.
template <typename T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) {}

  T* allocate(std::size_t n) {
    on_alloc(n * sizeof(T));
    return static_cast<T*>(::operator new(n * sizeof(T)));
  }
  void deallocate(T* p, std::size_t n) {
    on_free(n * sizeof(T));
    ::operator delete(p);
  }

  friend bool operator==(const TrackingAllocator&, const TrackingAllocator&) { return true; }
};

}  // namespace tabtile::memtrack
