#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tabtile/attention.hpp"
#include "tabtile/tensor.hpp"

namespace tabtile {

enum class TaskKind { classification, regression };

// One in-context problem: labelled rows to condition on plus unlabelled
// rows to predict. Feature matrices are row-major.
struct TabularTask {
  std::int64_t n = 0;  // train rows
  std::int64_t p = 0;  // features
  std::int64_t m = 0;  // test rows
  std::vector<double> train_x;  // n x p
  std::vector<double> train_y;  // length n; class index or scalar target
  std::vector<double> test_x;   // m x p
  TaskKind kind = TaskKind::classification;
  int num_classes = 2;

  void validate() const;
};

struct ModelConfig {
  std::int64_t d_model = 32;
  std::int64_t num_heads = 4;
  std::int64_t num_layers = 2;
  TaskKind kind = TaskKind::classification;
  int num_classes = 2;
  Seed seed{42};

  std::int64_t d_k() const { return d_model / num_heads; }
  std::int64_t d_ff() const { return 2 * d_model; }
  void validate() const;
};

// q(y | x, context): class probabilities or predictive means.
struct PredictiveDistribution {
  TaskKind kind = TaskKind::classification;
  std::int64_t rows = 0;
  int num_classes = 0;
  std::vector<float> probs;  // rows x num_classes, rows sum to 1
  std::vector<float> mean;   // rows

  float prob(std::int64_t row, int cls) const { return probs[row * num_classes + cls]; }
};

struct AttnWeights {
  Tensor<float> wq, wk, wv, wo;  // (1,1,d_model,d_model) each
};

struct LayerWeights {
  Tensor<float> ln_feat_gamma, ln_feat_beta;
  AttnWeights feat;
  Tensor<float> ln_item_gamma, ln_item_beta;
  AttnWeights item;  // shared by train self-attention and test cross-attention
  Tensor<float> ln_mlp_gamma, ln_mlp_beta;
  Tensor<float> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct WeightSet {
  ModelConfig config;
  Tensor<float> value_w, value_b;        // shared per-cell value embedding
  Tensor<float> label_table;             // (1,1,C,d_model), classification
  Tensor<float> label_w, label_b;        // regression label embedding
  Tensor<float> missing_label;           // marks unlabelled (test) rows
  std::vector<LayerWeights> layers;
  Tensor<float> final_gamma, final_beta;
  Tensor<float> head_w, head_b;
};

enum class WeightInit { scaled_normal, zeros, ones };

// Visit every named weight in a fixed order. The same enumeration drives
// seeded init, save, and load, so file layout and init streams stay in
// sync by construction.
void for_each_weight(WeightSet& w,
                     const std::function<void(const std::string&, Tensor<float>&, WeightInit)>& fn);

WeightSet init_weights(const ModelConfig& config);
void save_weights(const WeightSet& w, const std::string& path);
WeightSet load_weights(const std::string& path);

// Tokens are shaped (rows, 1, features, d_model): one token per
// (sample, feature) cell. Train tokens carry their label embedding, test
// tokens the learned missing-label embedding. Features are z-scored with
// train-column statistics before embedding.
std::pair<Tensor<float>, Tensor<float>> embed(const TabularTask& task, const WeightSet& w);

// Pre-norm residual attention across each row's feature tokens
// (batch = rows, sequence = features).
Tensor<float> feature_attention_pass(const Tensor<float>& tokens, const LayerWeights& lw,
                                     std::int64_t num_heads, const TileConfig& tiles,
                                     const KernelOptions& opts = {});

// Attention over the sample axis of the train tokens (batch = features,
// sequence = train rows). This is the quadratic-in-n regime that tiling
// keeps within a fixed memory envelope.
Tensor<float> sample_self_attention_pass(const Tensor<float>& train_tokens, const LayerWeights& lw,
                                         std::int64_t num_heads, const TileConfig& tiles,
                                         const KernelOptions& opts = {});

// Test tokens attend over the train tokens. Test rows never see each
// other, so per-row outputs do not depend on the rest of the test set.
Tensor<float> cross_attention_pass(const Tensor<float>& test_tokens,
                                   const Tensor<float>& train_tokens, const LayerWeights& lw,
                                   std::int64_t num_heads, const TileConfig& tiles,
                                   const KernelOptions& opts = {});

Tensor<float> mlp_pass(const Tensor<float>& tokens, const LayerWeights& lw);

PredictiveDistribution forward(const TabularTask& task, const ModelConfig& config,
                               const WeightSet& w, const TileConfig& tiles,
                               const KernelOptions& opts = {});

}  // namespace tabtile
