#include "tabtile/memtrack.hpp"

#include <atomic>
#include <thread>

#include "tabtile/error.hpp"

namespace tabtile::memtrack {

namespace {
std::atomic<Scope*> g_scope{nullptr};
std::thread::id g_owner;
}  // namespace

Scope::Scope() {
  Scope* expected = nullptr;
  if (!g_scope.compare_exchange_strong(expected, this)) {
    throw InstrumentationError("memory tracking scope already active; nested or concurrent scopes are rejected");
  }
  g_owner = std::this_thread::get_id();
}

Scope::~Scope() { g_scope.store(nullptr); }

std::uint64_t Scope::live_bytes() const { return live_; }
std::uint64_t Scope::peak_bytes() const { return peak_; }

bool active() {
  Scope* s = g_scope.load(std::memory_order_relaxed);
  return s != nullptr && g_owner == std::this_thread::get_id();
}

void on_alloc(std::size_t bytes) {
  Scope* s = g_scope.load(std::memory_order_relaxed);
  if (s == nullptr || g_owner != std::this_thread::get_id()) return;
  s->live_ += bytes;
  if (s->live_ > s->peak_) s->peak_ = s->live_;
}

void on_free(std::size_t bytes) {
  Scope* s = g_scope.load(std::memory_order_relaxed);
  if (s == nullptr || g_owner != std::this_thread::get_id()) return;
  // Buffers allocated before the scope opened may be freed inside it;
  // clamp so live never underflows.
  s->live_ = bytes >= s->live_ ? 0 : s->live_ - bytes;
}

}  // namespace tabtile::memtrack
