#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

#include "tabtile/error.hpp"
#include "tabtile/tensor.hpp"

namespace tabtile {

// Tile lengths for the two-level chunked evaluation. A config whose
// tiles cover the full extents (query_tile >= L_q, kv_tile >= L_k,
// batch_tile >= B) degenerates to a single-tile pass and reproduces the
// monolithic evaluation bit for bit.
struct TileConfig {
  static constexpr std::int64_t kUnbounded = std::numeric_limits<std::int64_t>::max();

  std::int64_t query_tile = 512;   // query rows per tile
  std::int64_t kv_tile = 2048;     // key/value rows per tile
  std::int64_t batch_tile = 8;     // batch entries per tile; kUnbounded disables batch tiling

  static TileConfig monolithic() { return {kUnbounded, kUnbounded, kUnbounded}; }

  void validate() const {
    if (query_tile < 1 || kv_tile < 1 || batch_tile < 1) {
      throw ConfigError("tile sizes must be >= 1, got query_tile=" + std::to_string(query_tile) +
                        " kv_tile=" + std::to_string(kv_tile) +
                        " batch_tile=" + std::to_string(batch_tile));
    }
  }
};

struct AttentionShape {
  std::int64_t batch = 1;
  std::int64_t heads = 1;
  std::int64_t len_q = 1;
  std::int64_t len_k = 1;
  std::int64_t dim_k = 1;
};

// Running softmax statistics for one query tile: row max mu, exponential
// sum s and value-weighted exponential sum a, merged across KV tiles.
// Kept in the same dtype as the logits.
template <typename Scalar>
struct MergeState {
  Tensor<Scalar> mu;  // [B,H,l',1], starts at -inf
  Tensor<Scalar> s;   // [B,H,l',1], starts at 0
  Tensor<Scalar> a;   // [B,H,l',d_k], starts at 0

  using value_type = Scalar;

  static MergeState initial(std::int64_t b, std::int64_t h, std::int64_t rows, std::int64_t dim) {
    MergeState st;
    st.mu = Tensor<Scalar>::full({b, h, rows, 1}, -std::numeric_limits<Scalar>::infinity());
    st.s = Tensor<Scalar>::zeros({b, h, rows, 1});
    st.a = Tensor<Scalar>::zeros({b, h, rows, dim});
    return st;
  }

  // True before the first merge: no keys consumed yet.
  bool is_fresh() const {
    for (Scalar v : s.data()) {
      if (v != Scalar(0)) return false;
    }
    return true;
  }
};

struct KernelOptions {
  // Query tiles are mutually independent, so evaluating them in parallel
  // is bit-deterministic; the KV merge inside each tile stays a
  // sequential left fold. Forced to 1 while a memory-tracking scope is
  // open.
  int threads = 1;
  // Test hook: negates the rescale factor e^(mu - mu') so equivalence
  // checks have a negative control. Never set outside tests.
  bool flip_rescale_sign = false;
};

struct FlopReport {
  std::uint64_t matmul_flops = 0;        // multiply + add counted separately
  std::uint64_t exp_evals = 0;           // one per score entry, tile-independent
  std::uint64_t rescale_exp_evals = 0;   // e^(mu-mu') evaluations; grows with KV tile count
};

namespace detail {

template <typename Scalar>
AttentionShape checked_attention_shape(const Tensor<Scalar>& q, const Tensor<Scalar>& k,
                                       const Tensor<Scalar>& v) {
  const Shape4& qs = q.shape();
  const Shape4& ks = k.shape();
  const Shape4& vs = v.shape();
  if (qs[0] != ks[0] || qs[1] != ks[1] || ks[0] != vs[0] || ks[1] != vs[1]) {
    throw DimensionError("attention: batch/head extents disagree, q" + to_string(qs) + " k" +
                         to_string(ks) + " v" + to_string(vs));
  }
  if (qs[3] != ks[3]) {
    throw DimensionError("attention: d_k mismatch between q (axis 3 = " + std::to_string(qs[3]) +
                         ") and k (axis 3 = " + std::to_string(ks[3]) + ")");
  }
  if (ks[2] != vs[2]) {
    throw DimensionError("attention: k and v key counts disagree on axis 2, " +
                         std::to_string(ks[2]) + " vs " + std::to_string(vs[2]));
  }
  if (ks[2] < 1) throw EmptyContextError("attention with zero keys (L_k = 0)");
  if (qs[2] < 1) throw DimensionError("attention with zero query rows (L_q = 0)");
  return {qs[0], qs[1], qs[2], ks[2], qs[3]};
}

// Copy a (batch-range x seq-range) block of a [B,H,L,D] tensor. Only
// tile-sized buffers are ever materialized this way.
template <typename Scalar>
Tensor<Scalar> block(const Tensor<Scalar>& t, std::int64_t b0, std::int64_t bn, std::int64_t l0,
                     std::int64_t ln) {
  const Shape4& s = t.shape();
  Tensor<Scalar> out({bn, s[1], ln, s[3]});
  const auto td = t.data();
  auto od = out.data();
  for (std::int64_t b = 0; b < bn; ++b)
    for (std::int64_t h = 0; h < s[1]; ++h) {
      const Scalar* src = td.data() + (((b0 + b) * s[1] + h) * s[2] + l0) * s[3];
      Scalar* dst = od.data() + ((b * s[1] + h) * ln) * s[3];
      for (std::int64_t i = 0; i < ln * s[3]; ++i) dst[i] = src[i];
    }
  return out;
}

template <typename Scalar>
void write_block(Tensor<Scalar>& dst, std::int64_t b0, std::int64_t l0, const Tensor<Scalar>& src) {
  const Shape4& ds = dst.shape();
  const Shape4& ss = src.shape();
  const auto sd = src.data();
  auto dd = dst.data();
  for (std::int64_t b = 0; b < ss[0]; ++b)
    for (std::int64_t h = 0; h < ss[1]; ++h) {
      const Scalar* src_p = sd.data() + ((b * ss[1] + h) * ss[2]) * ss[3];
      Scalar* dst_p = dd.data() + (((b0 + b) * ds[1] + h) * ds[2] + l0) * ds[3];
      for (std::int64_t i = 0; i < ss[2] * ss[3]; ++i) dst_p[i] = src_p[i];
    }
}

inline void parallel_for(std::int64_t tasks, int threads, const std::function<void(std::int64_t)>& fn);

}  // namespace detail

// Single-pass attention materializing the full L_q x L_k score block:
// softmax(q kT / sqrt(d_k)) v with the standard row-max subtraction.
// Works in the tensor's own precision.
template <typename Scalar>
Tensor<Scalar> monolithic_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k,
                                    const Tensor<Scalar>& v) {
  detail::checked_attention_shape(q, k, v);
  const Scalar inv_sqrt_dk = Scalar(1) / std::sqrt(static_cast<Scalar>(q.extent(3)));
  Tensor<Scalar> z = scaled(matmul_nt(q, k), inv_sqrt_dk);
  Tensor<Scalar> m = rowwise_max(z);
  Tensor<Scalar> p = exp_sub_broadcast(z, m);
  Tensor<Scalar> s = rowwise_sum(p);
  Tensor<Scalar> a = batched_matmul(p, v);
  return div_broadcast(a, s);
}

// The double-precision oracle all chunked results are checked against.
inline Tensor<double> reference_attention(const Tensor<double>& q, const Tensor<double>& k,
                                          const Tensor<double>& v) {
  return monolithic_attention(q, k, v);
}

// Fold one KV tile into the running statistics:
//   mu' = max(mu, rowmax(z))
//   s  <- s * e^(mu-mu') + rowsum(e^(z-mu'))
//   a  <- a * e^(mu-mu') + e^(z-mu') v
//   mu <- mu'
// On a fresh state (s = 0, a = 0) the rescale terms are skipped, which
// realizes the 0 * e^(-inf - mu') = 0 convention without producing NaN.
template <typename Scalar>
MergeState<Scalar> lse_merge_step(const MergeState<Scalar>& state, const Tensor<Scalar>& z_tile,
                                  const Tensor<Scalar>& v_tile, const KernelOptions& opts = {}) {
  const Shape4& zs = z_tile.shape();
  const Shape4& vs = v_tile.shape();
  if (zs[3] != vs[2] || zs[0] != vs[0] || zs[1] != vs[1]) {
    throw DimensionError("lse_merge_step: z " + to_string(zs) + " does not pair with v " +
                         to_string(vs));
  }
  if (state.mu.shape()[2] != zs[2] || state.a.shape()[3] != vs[3]) {
    throw DimensionError("lse_merge_step: state rows/dims do not match tile");
  }
  for (Scalar x : z_tile.data()) {
    if (!std::isfinite(x)) {
      throw PoisonedLogitError("non-finite logit in score tile; refusing to merge");
    }
  }

  MergeState<Scalar> next;
  next.mu = max_elem(state.mu, rowwise_max(z_tile));
  Tensor<Scalar> p = exp_sub_broadcast(z_tile, next.mu);
  if (state.is_fresh()) {
    next.s = rowwise_sum(p);
    next.a = batched_matmul(p, v_tile);
  } else {
    Tensor<Scalar> rescale = exp_sub_broadcast(state.mu, next.mu);
    if (opts.flip_rescale_sign) rescale = scaled(rescale, Scalar(-1));
    next.s = add_elem(mul_broadcast(state.s, rescale), rowwise_sum(p));
    next.a = add_elem(mul_broadcast(state.a, rescale), batched_matmul(p, v_tile));
  }
  return next;
}

// Exact two-level chunked attention. Equals the monolithic evaluation up
// to floating-point associativity; the KV merge never materializes more
// than one tile of scores, so peak transient memory follows the tile
// sizes rather than the sequence lengths. Batches beyond batch_tile are
// processed independently and written back to their slots.
template <typename Scalar>
Tensor<Scalar> chunked_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k,
                                 const Tensor<Scalar>& v, const TileConfig& tiles,
                                 const KernelOptions& opts = {}) {
  const AttentionShape sh = detail::checked_attention_shape(q, k, v);
  tiles.validate();
  const Scalar inv_sqrt_dk = Scalar(1) / std::sqrt(static_cast<Scalar>(sh.dim_k));
  const std::int64_t bt = tiles.batch_tile < sh.batch ? tiles.batch_tile : sh.batch;
  const std::int64_t lt = tiles.query_tile < sh.len_q ? tiles.query_tile : sh.len_q;
  const std::int64_t rt = tiles.kv_tile < sh.len_k ? tiles.kv_tile : sh.len_k;

  Tensor<Scalar> out({sh.batch, sh.heads, sh.len_q, sh.dim_k});
  const int threads = memtrack::active() ? 1 : opts.threads;

  for (std::int64_t b0 = 0; b0 < sh.batch; b0 += bt) {
    const std::int64_t bn = std::min(bt, sh.batch - b0);
    const std::int64_t q_tiles = (sh.len_q + lt - 1) / lt;

    auto run_tile = [&](std::int64_t ti) {
      const std::int64_t l0 = ti * lt;
      const std::int64_t ln = std::min(lt, sh.len_q - l0);
      Tensor<Scalar> q_blk = detail::block(q, b0, bn, l0, ln);
      MergeState<Scalar> st = MergeState<Scalar>::initial(bn, sh.heads, ln, sh.dim_k);
      for (std::int64_t r0 = 0; r0 < sh.len_k; r0 += rt) {
        const std::int64_t rn = std::min(rt, sh.len_k - r0);
        Tensor<Scalar> k_blk = detail::block(k, b0, bn, r0, rn);
        Tensor<Scalar> v_blk = detail::block(v, b0, bn, r0, rn);
        Tensor<Scalar> z = scaled(matmul_nt(q_blk, k_blk), inv_sqrt_dk);
        st = lse_merge_step(st, z, v_blk, opts);
      }
      detail::write_block(out, b0, l0, div_broadcast(st.a, st.s));
    };

    detail::parallel_for(q_tiles, threads, run_tile);
  }
  return out;
}

// Analytic operation counts for one attention call. The two matmuls
// (scores and values) cost 2*B*H*Lq*Lk*dk flops each regardless of
// tiling; only the rescale exponentials depend on the KV tile count.
inline FlopReport flop_count(const AttentionShape& sh, const TileConfig& tiles) {
  tiles.validate();
  const std::uint64_t b = sh.batch, h = sh.heads, lq = sh.len_q, lk = sh.len_k, dk = sh.dim_k;
  FlopReport r;
  r.matmul_flops = 2 * b * h * lq * lk * dk * 2;
  r.exp_evals = b * h * lq * lk;
  const std::uint64_t rt = tiles.kv_tile < sh.len_k ? tiles.kv_tile : lk;
  const std::uint64_t kv_tiles = (lk + rt - 1) / rt;
  r.rescale_exp_evals = b * h * lq * (kv_tiles - 1);
  return r;
}

namespace detail {

inline void parallel_for(std::int64_t tasks, int threads,
                         const std::function<void(std::int64_t)>& fn) {
  if (threads <= 1 || tasks <= 1) {
    for (std::int64_t i = 0; i < tasks; ++i) fn(i);
    return;
  }
  const int workers = static_cast<int>(std::min<std::int64_t>(threads, tasks));
  std::atomic<std::int64_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      try {
        for (std::int64_t i = next.fetch_add(1); i < tasks; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> guard(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail
}  // namespace tabtile
