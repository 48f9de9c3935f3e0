#pragma once

#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>

#include "tabtile/attention.hpp"
#include "tabtile/memtrack.hpp"

namespace tabtile {

// Peak-memory measurement for one kernel call. tracked_peak_bytes is the
// allocator high-water mark over the call, which includes the output
// buffer (it is allocated inside the call, before any transient), so
// transient_peak_bytes() = tracked - output isolates the tile-sized
// working set the complexity claim is about.
struct MemoryReport {
  AttentionShape shape;
  TileConfig tiles;
  std::uint64_t tracked_peak_bytes = 0;
  std::uint64_t analytic_peak_bytes = 0;
  std::uint64_t output_bytes = 0;

  std::uint64_t transient_peak_bytes() const {
    return tracked_peak_bytes > output_bytes ? tracked_peak_bytes - output_bytes : 0;
  }

  static std::string csv_header();
  std::string csv_row() const;
};

// Bytes predicted for the live working set of one (batch-tile, query-tile,
// kv-tile) step: the logits tile (l*r), the query tile and accumulator a
// (2*l*d_k), one KV tile row slice (r*d_k), and the mu and s columns
// (2*l), all times B*H.
inline std::uint64_t analytic_peak_bytes(std::int64_t batch, std::int64_t heads,
                                         std::int64_t query_tile, std::int64_t kv_tile,
                                         std::int64_t dim_k, std::int64_t bytes_per_scalar) {
  const std::uint64_t b = batch, h = heads, l = query_tile, r = kv_tile, d = dim_k;
  return static_cast<std::uint64_t>(bytes_per_scalar) * b * h * (l * r + 2 * l * d + r * d + 2 * l);
}

// Run any callable under a fresh tracking scope. The result is
// bit-identical to the untracked call; only the peak is observed.
template <typename F>
auto with_tracking(F&& fn) -> std::pair<std::invoke_result_t<F>, MemoryReport> {
  memtrack::Scope scope;
  auto result = std::forward<F>(fn)();
  MemoryReport report;
  report.tracked_peak_bytes = scope.peak_bytes();
  return {std::move(result), report};
}

// Tracked chunked_attention call with the report fully filled in.
// Serialized by construction: the open scope forces the kernel serial.
template <typename Scalar>
std::pair<Tensor<Scalar>, MemoryReport> tracked_chunked_attention(const Tensor<Scalar>& q,
                                                                  const Tensor<Scalar>& k,
                                                                  const Tensor<Scalar>& v,
                                                                  const TileConfig& tiles) {
  auto [out, report] = with_tracking([&] { return chunked_attention(q, k, v, tiles); });
  report.shape = detail::checked_attention_shape(q, k, v);
  report.tiles = tiles;
  const std::int64_t l_eff = std::min(tiles.query_tile, report.shape.len_q);
  const std::int64_t r_eff = std::min(tiles.kv_tile, report.shape.len_k);
  const std::int64_t b_eff = std::min(tiles.batch_tile, report.shape.batch);
  report.analytic_peak_bytes =
      analytic_peak_bytes(b_eff, report.shape.heads, l_eff, r_eff, report.shape.dim_k, sizeof(Scalar));
  report.output_bytes = out.bytes();
  return {std::move(out), report};
}

}  // namespace tabtile
