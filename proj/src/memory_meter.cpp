#include "tabtile/memory_meter.hpp"

#include <cstdio>

namespace tabtile {

std::string MemoryReport::csv_header() {
  return "B,H,Lq,Lk,dk,l,r,m,tracked_peak,analytic_peak,output_bytes";
}

std::string MemoryReport::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%lld,%lld,%lld,%lld,%lld,%lld,%lld,%llu,%llu,%llu",
                static_cast<long long>(shape.batch), static_cast<long long>(shape.heads),
                static_cast<long long>(shape.len_q), static_cast<long long>(shape.len_k),
                static_cast<long long>(shape.dim_k), static_cast<long long>(tiles.query_tile),
                static_cast<long long>(tiles.kv_tile), static_cast<long long>(tiles.batch_tile),
                static_cast<unsigned long long>(tracked_peak_bytes),
                static_cast<unsigned long long>(analytic_peak_bytes),
                static_cast<unsigned long long>(output_bytes));
  return buf;
}

}  // namespace tabtile
