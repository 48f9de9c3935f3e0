#include "tabtile/model.hpp"

#include <cmath>

namespace tabtile {

void TabularTask::validate() const {
  if (n < 1 || p < 1 || m < 1) {
    throw ConfigError("task needs n, p, m >= 1, got n=" + std::to_string(n) +
                      " p=" + std::to_string(p) + " m=" + std::to_string(m));
  }
  if (static_cast<std::int64_t>(train_x.size()) != n * p ||
      static_cast<std::int64_t>(train_y.size()) != n ||
      static_cast<std::int64_t>(test_x.size()) != m * p) {
    throw ConfigError("task buffer sizes do not match n/p/m");
  }
  if (kind == TaskKind::classification) {
    if (num_classes < 2) throw ConfigError("classification needs num_classes >= 2");
    for (double y : train_y) {
      if (y != std::floor(y) || y < 0 || y >= num_classes) {
        throw ConfigError("class label " + std::to_string(y) + " outside [0, " +
                          std::to_string(num_classes) + ")");
      }
    }
  }
}

void ModelConfig::validate() const {
  if (d_model < 1 || num_heads < 1 || num_layers < 1) {
    throw ConfigError("model counts must be >= 1");
  }
  if (d_model % num_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (kind == TaskKind::classification && num_classes < 2) {
    throw ConfigError("classification needs num_classes >= 2");
  }
}

namespace {

Tensor<float> layer_norm(const Tensor<float>& t, const Tensor<float>& gamma,
                         const Tensor<float>& beta) {
  const Shape4& s = t.shape();
  const std::int64_t d = s[3];
  Tensor<float> out(s);
  const auto td = t.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  auto od = out.data();
  const std::int64_t rows = s[0] * s[1] * s[2];
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* row = td.data() + r * d;
    float* orow = od.data() + r * d;
    float mean = 0.f;
    for (std::int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<float>(d);
    float var = 0.f;
    for (std::int64_t j = 0; j < d; ++j) {
      const float c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<float>(d);
    const float inv_std = 1.f / std::sqrt(var + 1e-5f);
    for (std::int64_t j = 0; j < d; ++j) orow[j] = gd[j] * (row[j] - mean) * inv_std + bd[j];
  }
  return out;
}

float gelu(float x) {
  return 0.5f * x * (1.f + std::tanh(0.7978845608f * (x + 0.044715f * x * x * x)));
}

Tensor<float> linear(const Tensor<float>& t, const Tensor<float>& w) {
  return batched_matmul(t, w);
}

// (B,1,L,d_model) -> (B,H,L,d_k), head h reads columns [h*d_k, (h+1)*d_k).
Tensor<float> split_heads(const Tensor<float>& t, std::int64_t heads) {
  const Shape4& s = t.shape();
  const std::int64_t dk = s[3] / heads;
  Tensor<float> out({s[0], heads, s[2], dk});
  const auto td = t.data();
  auto od = out.data();
  for (std::int64_t b = 0; b < s[0]; ++b)
    for (std::int64_t h = 0; h < heads; ++h)
      for (std::int64_t l = 0; l < s[2]; ++l) {
        const float* src = td.data() + (b * s[2] + l) * s[3] + h * dk;
        float* dst = od.data() + ((b * heads + h) * s[2] + l) * dk;
        for (std::int64_t j = 0; j < dk; ++j) dst[j] = src[j];
      }
  return out;
}

Tensor<float> merge_heads(const Tensor<float>& t) {
  const Shape4& s = t.shape();
  const std::int64_t d_model = s[1] * s[3];
  Tensor<float> out({s[0], 1, s[2], d_model});
  const auto td = t.data();
  auto od = out.data();
  for (std::int64_t b = 0; b < s[0]; ++b)
    for (std::int64_t h = 0; h < s[1]; ++h)
      for (std::int64_t l = 0; l < s[2]; ++l) {
        const float* src = td.data() + ((b * s[1] + h) * s[2] + l) * s[3];
        float* dst = od.data() + (b * s[2] + l) * d_model + h * s[3];
        for (std::int64_t j = 0; j < s[3]; ++j) dst[j] = src[j];
      }
  return out;
}

Tensor<float> attn_block(const Tensor<float>& x_q, const Tensor<float>& x_kv,
                         const AttnWeights& aw, std::int64_t heads, const TileConfig& tiles,
                         const KernelOptions& opts) {
  Tensor<float> q = split_heads(linear(x_q, aw.wq), heads);
  Tensor<float> k = split_heads(linear(x_kv, aw.wk), heads);
  Tensor<float> v = split_heads(linear(x_kv, aw.wv), heads);
  Tensor<float> o = chunked_attention(q, k, v, tiles, opts);
  return linear(merge_heads(o), aw.wo);
}

struct ColumnStats {
  std::vector<double> mean, inv_std;
};

// Train-column statistics; population variance so that duplicating every
// row leaves the standardization unchanged. Constant columns get scale 1.
ColumnStats column_stats(const std::vector<double>& x, std::int64_t rows, std::int64_t cols) {
  ColumnStats st;
  st.mean.assign(cols, 0.0);
  st.inv_std.assign(cols, 1.0);
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) st.mean[j] += x[i * cols + j];
  for (std::int64_t j = 0; j < cols; ++j) st.mean[j] /= static_cast<double>(rows);
  for (std::int64_t j = 0; j < cols; ++j) {
    double var = 0.0;
    for (std::int64_t i = 0; i < rows; ++i) {
      const double c = x[i * cols + j] - st.mean[j];
      var += c * c;
    }
    var /= static_cast<double>(rows);
    st.inv_std[j] = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
  }
  return st;
}

struct TargetStats {
  double mean = 0.0, stdev = 1.0;
};

TargetStats target_stats(const std::vector<double>& y) {
  TargetStats st;
  for (double v : y) st.mean += v;
  st.mean /= static_cast<double>(y.size());
  double var = 0.0;
  for (double v : y) {
    const double c = v - st.mean;
    var += c * c;
  }
  var /= static_cast<double>(y.size());
  st.stdev = var > 0.0 ? std::sqrt(var) : 1.0;
  return st;
}

Tensor<float> embed_rows(const std::vector<double>& x, std::int64_t rows, std::int64_t cols,
                         const ColumnStats& st, const WeightSet& w,
                         const std::function<const float*(std::int64_t)>& label_vec) {
  const std::int64_t d = w.config.d_model;
  Tensor<float> tokens({rows, 1, cols, d});
  const auto vw = w.value_w.data();
  const auto vb = w.value_b.data();
  auto out = tokens.data();
  for (std::int64_t i = 0; i < rows; ++i) {
    const float* lab = label_vec(i);
    for (std::int64_t j = 0; j < cols; ++j) {
      const double xv = x[i * cols + j];
      if (!std::isfinite(xv)) {
        throw ValidationError("non-finite feature value at row " + std::to_string(i) +
                              ", column " + std::to_string(j));
      }
      const float z = static_cast<float>((xv - st.mean[j]) * st.inv_std[j]);
      float* tok = out.data() + (i * cols + j) * d;
      for (std::int64_t c = 0; c < d; ++c) tok[c] = z * vw[c] + vb[c] + lab[c];
    }
  }
  return tokens;
}

}  // namespace

std::pair<Tensor<float>, Tensor<float>> embed(const TabularTask& task, const WeightSet& w) {
  task.validate();
  const std::int64_t d = w.config.d_model;
  const ColumnStats st = column_stats(task.train_x, task.n, task.p);

  std::vector<float> label_buf(static_cast<std::size_t>(task.n) * d);
  if (task.kind == TaskKind::classification) {
    const auto table = w.label_table.data();
    for (std::int64_t i = 0; i < task.n; ++i) {
      const auto cls = static_cast<std::int64_t>(task.train_y[i]);
      for (std::int64_t c = 0; c < d; ++c) label_buf[i * d + c] = table[cls * d + c];
    }
  } else {
    const TargetStats ys = target_stats(task.train_y);
    const auto lw = w.label_w.data();
    const auto lb = w.label_b.data();
    for (std::int64_t i = 0; i < task.n; ++i) {
      if (!std::isfinite(task.train_y[i])) {
        throw ValidationError("non-finite target at row " + std::to_string(i));
      }
      const float yz = static_cast<float>((task.train_y[i] - ys.mean) / ys.stdev);
      for (std::int64_t c = 0; c < d; ++c) label_buf[i * d + c] = yz * lw[c] + lb[c];
    }
  }

  Tensor<float> train_tokens =
      embed_rows(task.train_x, task.n, task.p, st, w,
                 [&](std::int64_t i) { return label_buf.data() + i * d; });
  const auto missing = w.missing_label.data();
  Tensor<float> test_tokens = embed_rows(task.test_x, task.m, task.p, st, w,
                                         [&](std::int64_t) { return missing.data(); });
  return {std::move(train_tokens), std::move(test_tokens)};
}

Tensor<float> feature_attention_pass(const Tensor<float>& tokens, const LayerWeights& lw,
                                     std::int64_t num_heads, const TileConfig& tiles,
                                     const KernelOptions& opts) {
  Tensor<float> ln = layer_norm(tokens, lw.ln_feat_gamma, lw.ln_feat_beta);
  return add_elem(tokens, attn_block(ln, ln, lw.feat, num_heads, tiles, opts));
}

Tensor<float> sample_self_attention_pass(const Tensor<float>& train_tokens, const LayerWeights& lw,
                                         std::int64_t num_heads, const TileConfig& tiles,
                                         const KernelOptions& opts) {
  Tensor<float> xt = transpose_axes(train_tokens, 0, 2);  // (p,1,n,d_model)
  Tensor<float> ln = layer_norm(xt, lw.ln_item_gamma, lw.ln_item_beta);
  Tensor<float> out = add_elem(xt, attn_block(ln, ln, lw.item, num_heads, tiles, opts));
  return transpose_axes(out, 0, 2);
}

Tensor<float> cross_attention_pass(const Tensor<float>& test_tokens,
                                   const Tensor<float>& train_tokens, const LayerWeights& lw,
                                   std::int64_t num_heads, const TileConfig& tiles,
                                   const KernelOptions& opts) {
  Tensor<float> qt = transpose_axes(test_tokens, 0, 2);    // (p,1,m,d_model)
  Tensor<float> kt = transpose_axes(train_tokens, 0, 2);   // (p,1,n,d_model)
  Tensor<float> q_ln = layer_norm(qt, lw.ln_item_gamma, lw.ln_item_beta);
  Tensor<float> k_ln = layer_norm(kt, lw.ln_item_gamma, lw.ln_item_beta);
  Tensor<float> out = add_elem(qt, attn_block(q_ln, k_ln, lw.item, num_heads, tiles, opts));
  return transpose_axes(out, 0, 2);
}

Tensor<float> mlp_pass(const Tensor<float>& tokens, const LayerWeights& lw) {
  Tensor<float> ln = layer_norm(tokens, lw.ln_mlp_gamma, lw.ln_mlp_beta);
  Tensor<float> h = add_elem(batched_matmul(ln, lw.mlp_w1), lw.mlp_b1);
  auto hd = h.data();
  for (std::size_t i = 0; i < hd.size(); ++i) hd[i] = gelu(hd[i]);
  return add_elem(tokens, add_elem(batched_matmul(h, lw.mlp_w2), lw.mlp_b2));
}

PredictiveDistribution forward(const TabularTask& task, const ModelConfig& config,
                               const WeightSet& w, const TileConfig& tiles,
                               const KernelOptions& opts) {
  config.validate();
  task.validate();
  if (config.kind != task.kind) {
    throw ConfigError("task kind does not match model head");
  }
  if (config.kind == TaskKind::classification && config.num_classes != task.num_classes) {
    throw ConfigError("task has " + std::to_string(task.num_classes) + " classes, model head has " +
                      std::to_string(config.num_classes));
  }

  auto [train_t, test_t] = embed(task, w);
  for (const LayerWeights& lw : w.layers) {
    train_t = feature_attention_pass(train_t, lw, config.num_heads, tiles, opts);
    test_t = feature_attention_pass(test_t, lw, config.num_heads, tiles, opts);
    // Cross-attention keys/values come from the train tokens as they enter
    // this stage, matching the self-attention inputs.
    Tensor<float> train_next =
        sample_self_attention_pass(train_t, lw, config.num_heads, tiles, opts);
    test_t = cross_attention_pass(test_t, train_t, lw, config.num_heads, tiles, opts);
    train_t = std::move(train_next);
    train_t = mlp_pass(train_t, lw);
    test_t = mlp_pass(test_t, lw);
  }

  Tensor<float> ln = layer_norm(test_t, w.final_gamma, w.final_beta);

  // Mean-pool the feature tokens of each test row.
  const std::int64_t d = config.d_model;
  Tensor<float> pooled({task.m, 1, 1, d});
  {
    const auto src = ln.data();
    auto dst = pooled.data();
    for (std::int64_t i = 0; i < task.m; ++i) {
      float* drow = dst.data() + i * d;
      for (std::int64_t j = 0; j < task.p; ++j) {
        const float* srow = src.data() + (i * task.p + j) * d;
        for (std::int64_t c = 0; c < d; ++c) drow[c] += srow[c];
      }
      for (std::int64_t c = 0; c < d; ++c) drow[c] /= static_cast<float>(task.p);
    }
  }

  Tensor<float> logits = add_elem(batched_matmul(pooled, w.head_w), w.head_b);

  PredictiveDistribution dist;
  dist.kind = config.kind;
  dist.rows = task.m;
  if (config.kind == TaskKind::classification) {
    dist.num_classes = config.num_classes;
    dist.probs.resize(static_cast<std::size_t>(task.m) * config.num_classes);
    const auto ld = logits.data();
    for (std::int64_t i = 0; i < task.m; ++i) {
      const float* row = ld.data() + i * config.num_classes;
      float mx = row[0];
      for (int c = 1; c < config.num_classes; ++c) mx = row[c] > mx ? row[c] : mx;
      float sum = 0.f;
      for (int c = 0; c < config.num_classes; ++c) {
        const float e = std::exp(row[c] - mx);
        dist.probs[i * config.num_classes + c] = e;
        sum += e;
      }
      for (int c = 0; c < config.num_classes; ++c) dist.probs[i * config.num_classes + c] /= sum;
    }
  } else {
    // Undo the target standardization applied at embedding time.
    const TargetStats ys = target_stats(task.train_y);
    dist.mean.resize(task.m);
    const auto ld = logits.data();
    for (std::int64_t i = 0; i < task.m; ++i) {
      dist.mean[i] = static_cast<float>(ys.mean + ys.stdev * static_cast<double>(ld[i]));
    }
  }
  return dist;
}

}  // namespace tabtile
