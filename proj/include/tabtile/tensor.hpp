#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "tabtile/error.hpp"
#include "tabtile/memtrack.hpp"
#include "tabtile/rng.hpp"

namespace tabtile {

// Every tensor has a canonical 4-axis shape. For attention the axes read
// (batch B, heads H, length L, feature d); lower-rank data pads leading
// axes with extent 1 so one code path serves all kernel shapes.
using Shape4 = std::array<std::int64_t, 4>;

inline std::int64_t numel(const Shape4& s) { return s[0] * s[1] * s[2] * s[3]; }

inline std::string to_string(const Shape4& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," +
         std::to_string(s[2]) + "," + std::to_string(s[3]) + ")";
}

enum class DType { f32, f64 };

inline const char* to_string(DType d) { return d == DType::f32 ? "f32" : "f64"; }

// Dense row-major tensor of float (working precision) or double (oracle
// precision). All operations on tensors are pure: inputs are never
// mutated and equal inputs give bit-identical outputs.
template <typename Scalar>
class Tensor {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>,
                "Tensor supports working (float) and oracle (double) precision");

 public:
  using value_type = Scalar;

  Tensor() : shape_{1, 1, 1, 0} {}

  explicit Tensor(const Shape4& shape, Scalar fill = Scalar(0))
      : shape_(shape), buf_(checked_numel(shape), fill) {}

  static Tensor zeros(const Shape4& shape) { return Tensor(shape); }
  static Tensor full(const Shape4& shape, Scalar v) { return Tensor(shape, v); }

  static Tensor from_values(const Shape4& shape, std::vector<Scalar> values) {
    Tensor t;
    if (static_cast<std::int64_t>(values.size()) != numel(shape)) {
      throw DimensionError("from_values: " + std::to_string(values.size()) +
                           " values for shape " + tabtile::to_string(shape));
    }
    t.shape_ = shape;
    t.buf_.assign(values.begin(), values.end());
    return t;
  }

  static constexpr DType dtype() { return std::is_same_v<Scalar, float> ? DType::f32 : DType::f64; }

  const Shape4& shape() const { return shape_; }
  std::int64_t extent(int axis) const { return shape_[axis]; }
  std::int64_t size() const { return static_cast<std::int64_t>(buf_.size()); }
  std::uint64_t bytes() const { return buf_.size() * sizeof(Scalar); }

  Scalar& at(std::int64_t b, std::int64_t h, std::int64_t i, std::int64_t j) {
    return buf_[index(b, h, i, j)];
  }
  Scalar at(std::int64_t b, std::int64_t h, std::int64_t i, std::int64_t j) const {
    return buf_[index(b, h, i, j)];
  }

  std::span<Scalar> data() { return {buf_.data(), buf_.size()}; }
  std::span<const Scalar> data() const { return {buf_.data(), buf_.size()}; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.buf_ == b.buf_;
  }

 private:
  static std::size_t checked_numel(const Shape4& shape) {
    for (int ax = 0; ax < 4; ++ax) {
      if (shape[ax] < 0) throw DimensionError("negative extent on axis " + std::to_string(ax));
    }
    return static_cast<std::size_t>(numel(shape));
  }

  std::size_t index(std::int64_t b, std::int64_t h, std::int64_t i, std::int64_t j) const {
    return static_cast<std::size_t>(((b * shape_[1] + h) * shape_[2] + i) * shape_[3] + j);
  }

  Shape4 shape_;
  std::vector<Scalar, memtrack::TrackingAllocator<Scalar>> buf_;
};

namespace detail {

// Effective extents for operands that broadcast along extent-1 axes.
inline void check_broadcast(const Shape4& a, const Shape4& b, Shape4& out, const char* op) {
  for (int ax = 0; ax < 4; ++ax) {
    if (a[ax] == b[ax] || b[ax] == 1) {
      out[ax] = a[ax];
    } else if (a[ax] == 1) {
      out[ax] = b[ax];
    } else {
      throw DimensionError(std::string(op) + ": extents " + std::to_string(a[ax]) + " vs " +
                           std::to_string(b[ax]) + " on axis " + std::to_string(ax));
    }
  }
}

template <typename Scalar, typename Op>
Tensor<Scalar> binary_bcast(const Tensor<Scalar>& a, const Tensor<Scalar>& b, Op op,
                            const char* name) {
  Shape4 os;
  check_broadcast(a.shape(), b.shape(), os, name);
  Tensor<Scalar> out(os);
  const Shape4& as = a.shape();
  const Shape4& bs = b.shape();
  const auto ad = a.data();
  const auto bd = b.data();
  auto od = out.data();
  // Strides with 0 on broadcast axes.
  std::int64_t ast[4], bst[4];
  std::int64_t am = 1, bm = 1;
  for (int ax = 3; ax >= 0; --ax) {
    ast[ax] = as[ax] == 1 && os[ax] != 1 ? 0 : am;
    bst[ax] = bs[ax] == 1 && os[ax] != 1 ? 0 : bm;
    am *= as[ax];
    bm *= bs[ax];
  }
  std::int64_t o = 0;
  for (std::int64_t i0 = 0; i0 < os[0]; ++i0)
    for (std::int64_t i1 = 0; i1 < os[1]; ++i1)
      for (std::int64_t i2 = 0; i2 < os[2]; ++i2) {
        const std::int64_t abase = i0 * ast[0] + i1 * ast[1] + i2 * ast[2];
        const std::int64_t bbase = i0 * bst[0] + i1 * bst[1] + i2 * bst[2];
        for (std::int64_t i3 = 0; i3 < os[3]; ++i3, ++o)
          od[o] = op(ad[abase + i3 * ast[3]], bd[bbase + i3 * bst[3]]);
      }
  return out;
}

}  // namespace detail

// out[b,h,i,j] = sum_k a[b,h,i,k] * b[b,h,k,j]. An operand with extent 1
// on the batch or head axis broadcasts, which is how shared projection
// matrices multiply per-sample token blocks.
template <typename Scalar>
Tensor<Scalar> batched_matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Shape4& as = a.shape();
  const Shape4& bs = b.shape();
  if (as[3] != bs[2]) {
    throw DimensionError("batched_matmul: inner extents disagree, a axis 3 = " +
                         std::to_string(as[3]) + ", b axis 2 = " + std::to_string(bs[2]));
  }
  for (int ax = 0; ax < 2; ++ax) {
    if (as[ax] != bs[ax] && as[ax] != 1 && bs[ax] != 1) {
      throw DimensionError("batched_matmul: extents " + std::to_string(as[ax]) + " vs " +
                           std::to_string(bs[ax]) + " on axis " + std::to_string(ax));
    }
  }
  const std::int64_t B = as[0] == 1 ? bs[0] : as[0];
  const std::int64_t H = as[1] == 1 ? bs[1] : as[1];
  const std::int64_t M = as[2], K = as[3], N = bs[3];
  Tensor<Scalar> out({B, H, M, N});
  const auto ad = a.data();
  const auto bd = b.data();
  auto od = out.data();
  for (std::int64_t bb = 0; bb < B; ++bb) {
    for (std::int64_t hh = 0; hh < H; ++hh) {
      const Scalar* ap = ad.data() + (((as[0] == 1 ? 0 : bb) * as[1] + (as[1] == 1 ? 0 : hh)) * M) * K;
      const Scalar* bp = bd.data() + (((bs[0] == 1 ? 0 : bb) * bs[1] + (bs[1] == 1 ? 0 : hh)) * K) * N;
      Scalar* op = od.data() + ((bb * H + hh) * M) * N;
      for (std::int64_t i = 0; i < M; ++i) {
        Scalar* orow = op + i * N;
        for (std::int64_t j = 0; j < N; ++j) orow[j] = Scalar(0);
        for (std::int64_t k = 0; k < K; ++k) {
          const Scalar av = ap[i * K + k];
          const Scalar* brow = bp + k * N;
          for (std::int64_t j = 0; j < N; ++j) orow[j] += av * brow[j];
        }
      }
    }
  }
  return out;
}

// out[b,h,i,j] = sum_k a[b,h,i,k] * b[b,h,j,k] — matmul against the
// transpose of b's last two axes, without materializing the transpose.
// This is the Q·Kᵀ score product.
template <typename Scalar>
Tensor<Scalar> matmul_nt(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Shape4& as = a.shape();
  const Shape4& bs = b.shape();
  if (as[3] != bs[3]) {
    throw DimensionError("matmul_nt: inner extents disagree, a axis 3 = " +
                         std::to_string(as[3]) + ", b axis 3 = " + std::to_string(bs[3]));
  }
  for (int ax = 0; ax < 2; ++ax) {
    if (as[ax] != bs[ax] && as[ax] != 1 && bs[ax] != 1) {
      throw DimensionError("matmul_nt: extents " + std::to_string(as[ax]) + " vs " +
                           std::to_string(bs[ax]) + " on axis " + std::to_string(ax));
    }
  }
  const std::int64_t B = as[0] == 1 ? bs[0] : as[0];
  const std::int64_t H = as[1] == 1 ? bs[1] : as[1];
  const std::int64_t M = as[2], K = as[3], N = bs[2];
  Tensor<Scalar> out({B, H, M, N});
  const auto ad = a.data();
  const auto bd = b.data();
  auto od = out.data();
  for (std::int64_t bb = 0; bb < B; ++bb) {
    for (std::int64_t hh = 0; hh < H; ++hh) {
      const Scalar* ap = ad.data() + (((as[0] == 1 ? 0 : bb) * as[1] + (as[1] == 1 ? 0 : hh)) * M) * K;
      const Scalar* bp = bd.data() + (((bs[0] == 1 ? 0 : bb) * bs[1] + (bs[1] == 1 ? 0 : hh)) * N) * K;
      Scalar* op = od.data() + ((bb * H + hh) * M) * N;
      for (std::int64_t i = 0; i < M; ++i) {
        for (std::int64_t j = 0; j < N; ++j) {
          Scalar acc = Scalar(0);
          const Scalar* arow = ap + i * K;
          const Scalar* brow = bp + j * K;
          for (std::int64_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
          op[i * N + j] = acc;
        }
      }
    }
  }
  return out;
}

enum class Reduce { max, sum };

// Collapse the last axis to extent 1. Max over a single element is that
// element; an empty last axis has no identity to return for max, so both
// kinds reject it.
template <typename Scalar>
Tensor<Scalar> rowwise_reduce(const Tensor<Scalar>& t, Reduce kind) {
  const Shape4& s = t.shape();
  if (s[3] < 1) throw EmptyReductionError("rowwise_reduce over empty last axis, shape " + to_string(s));
  Tensor<Scalar> out({s[0], s[1], s[2], 1});
  const auto td = t.data();
  auto od = out.data();
  const std::int64_t rows = s[0] * s[1] * s[2];
  for (std::int64_t r = 0; r < rows; ++r) {
    const Scalar* row = td.data() + r * s[3];
    Scalar acc = row[0];
    if (kind == Reduce::max) {
      for (std::int64_t j = 1; j < s[3]; ++j) acc = row[j] > acc ? row[j] : acc;
    } else {
      for (std::int64_t j = 1; j < s[3]; ++j) acc += row[j];
    }
    od[r] = acc;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> rowwise_max(const Tensor<Scalar>& t) { return rowwise_reduce(t, Reduce::max); }

template <typename Scalar>
Tensor<Scalar> rowwise_sum(const Tensor<Scalar>& t) { return rowwise_reduce(t, Reduce::sum); }

template <typename Scalar>
Tensor<Scalar> exp_elem(const Tensor<Scalar>& t) {
  Tensor<Scalar> out(t.shape());
  const auto td = t.data();
  auto od = out.data();
  for (std::size_t i = 0; i < td.size(); ++i) od[i] = std::exp(td[i]);
  return out;
}

template <typename Scalar>
Tensor<Scalar> scaled(const Tensor<Scalar>& t, Scalar c) {
  Tensor<Scalar> out(t.shape());
  const auto td = t.data();
  auto od = out.data();
  for (std::size_t i = 0; i < td.size(); ++i) od[i] = td[i] * c;
  return out;
}

template <typename Scalar>
Tensor<Scalar> add_elem(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary_bcast(a, b, [](Scalar x, Scalar y) { return x + y; }, "add");
}

template <typename Scalar>
Tensor<Scalar> sub_broadcast(const Tensor<Scalar>& t, const Tensor<Scalar>& u) {
  return detail::binary_bcast(t, u, [](Scalar x, Scalar y) { return x - y; }, "sub_broadcast");
}

template <typename Scalar>
Tensor<Scalar> mul_broadcast(const Tensor<Scalar>& t, const Tensor<Scalar>& u) {
  return detail::binary_bcast(t, u, [](Scalar x, Scalar y) { return x * y; }, "mul_broadcast");
}

template <typename Scalar>
Tensor<Scalar> div_broadcast(const Tensor<Scalar>& t, const Tensor<Scalar>& u) {
  return detail::binary_bcast(t, u, [](Scalar x, Scalar y) { return x / y; }, "div_broadcast");
}

template <typename Scalar>
Tensor<Scalar> max_elem(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary_bcast(a, b, [](Scalar x, Scalar y) { return x > y ? x : y; }, "max_elem");
}

// exp(t - u) with u broadcast along the last axis, in one pass. Fusing
// keeps one tile-sized temporary alive instead of two in the hot loop of
// the merge step.
template <typename Scalar>
Tensor<Scalar> exp_sub_broadcast(const Tensor<Scalar>& t, const Tensor<Scalar>& u) {
  return detail::binary_bcast(t, u, [](Scalar x, Scalar y) { return std::exp(x - y); },
                              "exp_sub_broadcast");
}

// Contiguous sub-block along one axis, copied out.
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& t, int axis, std::int64_t start, std::int64_t count) {
  const Shape4& s = t.shape();
  if (axis < 0 || axis > 3 || start < 0 || count < 0 || start + count > s[axis]) {
    throw DimensionError("slice: [" + std::to_string(start) + "," + std::to_string(start + count) +
                         ") out of range on axis " + std::to_string(axis) + " of " + to_string(s));
  }
  Shape4 os = s;
  os[axis] = count;
  Tensor<Scalar> out(os);
  const auto td = t.data();
  auto od = out.data();
  // Treat the tensor as (outer, axis, inner) and copy runs of inner.
  std::int64_t outer = 1, inner = 1;
  for (int ax = 0; ax < axis; ++ax) outer *= s[ax];
  for (int ax = axis + 1; ax < 4; ++ax) inner *= s[ax];
  for (std::int64_t o = 0; o < outer; ++o) {
    const Scalar* src = td.data() + (o * s[axis] + start) * inner;
    Scalar* dst = od.data() + o * count * inner;
    for (std::int64_t i = 0; i < count * inner; ++i) dst[i] = src[i];
  }
  return out;
}

// Write src into dst at the given offset along one axis. The one impure
// tensor helper; used only to assemble kernel outputs into preallocated
// buffers.
template <typename Scalar>
void write_slice(Tensor<Scalar>& dst, int axis, std::int64_t start, const Tensor<Scalar>& src) {
  const Shape4& ds = dst.shape();
  const Shape4& ss = src.shape();
  for (int ax = 0; ax < 4; ++ax) {
    if (ax != axis && ds[ax] != ss[ax]) {
      throw DimensionError("write_slice: extents " + std::to_string(ds[ax]) + " vs " +
                           std::to_string(ss[ax]) + " on axis " + std::to_string(ax));
    }
  }
  if (axis < 0 || axis > 3 || start < 0 || start + ss[axis] > ds[axis]) {
    throw DimensionError("write_slice: out of range on axis " + std::to_string(axis));
  }
  auto dd = dst.data();
  const auto sd = src.data();
  std::int64_t outer = 1, inner = 1;
  for (int ax = 0; ax < axis; ++ax) outer *= ds[ax];
  for (int ax = axis + 1; ax < 4; ++ax) inner *= ds[ax];
  const std::int64_t run = ss[axis] * inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    const Scalar* src_p = sd.data() + o * run;
    Scalar* dst_p = dd.data() + (o * ds[axis] + start) * inner;
    for (std::int64_t i = 0; i < run; ++i) dst_p[i] = src_p[i];
  }
}

template <typename Scalar>
Tensor<Scalar> transpose_axes(const Tensor<Scalar>& t, int ax_a, int ax_b) {
  const Shape4& s = t.shape();
  if (ax_a < 0 || ax_a > 3 || ax_b < 0 || ax_b > 3) {
    throw DimensionError("transpose_axes: axis out of range");
  }
  Shape4 os = s;
  std::swap(os[ax_a], os[ax_b]);
  Tensor<Scalar> out(os);
  const auto td = t.data();
  auto od = out.data();
  Shape4 idx;
  for (idx[0] = 0; idx[0] < s[0]; ++idx[0])
    for (idx[1] = 0; idx[1] < s[1]; ++idx[1])
      for (idx[2] = 0; idx[2] < s[2]; ++idx[2])
        for (idx[3] = 0; idx[3] < s[3]; ++idx[3]) {
          Shape4 oi = idx;
          std::swap(oi[ax_a], oi[ax_b]);
          od[((oi[0] * os[1] + oi[1]) * os[2] + oi[2]) * os[3] + oi[3]] =
              td[((idx[0] * s[1] + idx[1]) * s[2] + idx[2]) * s[3] + idx[3]];
        }
  return out;
}

// Seeded standard-normal fill. Element i of the buffer is normal_at(seed, i),
// so the result is a pure function of (shape, seed).
template <typename Scalar>
Tensor<Scalar> fill_random(const Shape4& shape, Seed seed) {
  Tensor<Scalar> out(shape);
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    od[i] = static_cast<Scalar>(rng::normal_at(seed, i));
  }
  return out;
}

inline Tensor<double> widen(const Tensor<float>& t) {
  Tensor<double> out(t.shape());
  const auto td = t.data();
  auto od = out.data();
  for (std::size_t i = 0; i < td.size(); ++i) od[i] = static_cast<double>(td[i]);
  return out;
}

inline Tensor<float> narrow(const Tensor<double>& t) {
  Tensor<float> out(t.shape());
  const auto td = t.data();
  auto od = out.data();
  for (std::size_t i = 0; i < td.size(); ++i) od[i] = static_cast<float>(td[i]);
  return out;
}

}  // namespace tabtile
