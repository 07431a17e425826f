#pragma once

#include <cstddef>
#include <string>
#include <unordered_set>
#include <vector>

#include "sgol/rng.hpp"
#include "sgol/tensor.hpp"

namespace sgol {

/// Named learnable tensor. Registries keep insertion order so checkpoints
/// and optimizer state are reproducible byte for byte.
struct Param {
  std::string name;
  Tensor tensor;
};

class ParamRegistry {
 public:
  /// Registers a requires-grad tensor under a unique name and returns it.
  Tensor add(const std::string& name, Tensor tensor);

  const std::vector<Param>& params() const { return params_; }
  std::vector<Param>& params() { return params_; }
  Tensor* find(const std::string& name);
  void zero_grad();
  std::size_t total_values() const;

 private:
  std::vector<Param> params_;
  std::unordered_set<std::string> names_;
};

/// y = x·Wᵀ + b with W: (out×in). Accepts (in) or (n×in) inputs.
/// Weights are Xavier-uniform initialized, biases zero.
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& prefix, Rng& rng,
         std::size_t in, std::size_t out);
  Tensor forward(const Tensor& x) const;
};

/// Square-kernel cross-correlation over (in×H×W) maps, k in {1, 3}.
struct Conv2d {
  Tensor weight;  // (out×in×k×k)
  Tensor bias;    // (out)
  std::size_t in_ch = 0, out_ch = 0, k = 1, stride = 1, padding = 0;

  Conv2d() = default;
  Conv2d(ParamRegistry& reg, const std::string& prefix, Rng& rng,
         std::size_t in, std::size_t out, std::size_t kernel,
         std::size_t stride, std::size_t padding);
  Tensor forward(const Tensor& x) const;
};

/// Normalization over the last axis with learned affine, epsilon 1e-5.
struct LayerNorm {
  Tensor gain;
  Tensor bias;

  LayerNorm() = default;
  LayerNorm(ParamRegistry& reg, const std::string& prefix, std::size_t d);
  Tensor forward(const Tensor& x) const;
};

/// Scaled dot-product attention over h heads with biased input/output
/// projections. Positional encodings, when given, are added to queries and
/// keys only, never to values.
struct MultiHeadAttention {
  std::size_t d = 0, heads = 0;
  Linear wq, wk, wv, wo;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamRegistry& reg, const std::string& prefix, Rng& rng,
                     std::size_t d, std::size_t heads);
  /// queries: (n_q×d), keys_values: (n_k×d). attn_out, when non-null,
  /// receives the per-head attention weights as h tensors of (n_q×n_k).
  Tensor forward(const Tensor& queries, const Tensor& keys_values,
                 const Tensor* query_pos = nullptr,
                 const Tensor* key_pos = nullptr,
                 std::vector<Tensor>* attn_out = nullptr) const;
};

/// Post-norm transformer encoder layer: self-attention then a 2-layer relu
/// feed-forward, each followed by an additive residual and layer norm.
struct EncoderLayer {
  MultiHeadAttention self_attn;
  Linear ff1, ff2;
  LayerNorm norm1, norm2;

  EncoderLayer() = default;
  EncoderLayer(ParamRegistry& reg, const std::string& prefix, Rng& rng,
               std::size_t d, std::size_t heads, std::size_t dim_ff);
  Tensor forward(const Tensor& x, const Tensor* pos = nullptr) const;
};

/// Post-norm transformer decoder layer: self-attention over the query
/// sequence, cross-attention into the encoder memory, then feed-forward.
struct DecoderLayer {
  MultiHeadAttention self_attn, cross_attn;
  Linear ff1, ff2;
  LayerNorm norm1, norm2, norm3;

  DecoderLayer() = default;
  DecoderLayer(ParamRegistry& reg, const std::string& prefix, Rng& rng,
               std::size_t d, std::size_t heads, std::size_t dim_ff);
  Tensor forward(const Tensor& x, const Tensor& memory,
                 const Tensor* query_pos = nullptr,
                 const Tensor* memory_pos = nullptr) const;
};

/// (d×H×W) sinusoidal grid: channels [0, d/2) hold sin/cos pairs of the
/// normalized x coordinate at geometrically decaying frequencies pi*2^-j,
/// channels [d/2, d) the same for y. Constant (no gradient), d % 4 == 0.
Tensor positional_encoding_2d(std::size_t height, std::size_t width,
                              std::size_t d);

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled-weight-decay Adam over a registry's parameters. Parameters
/// covered by a frozen prefix keep their values regardless of gradients.
class AdamW {
 public:
  AdamW(ParamRegistry& registry, AdamWConfig config);

  /// Freezes every parameter whose name starts with `prefix`.
  void freeze_prefix(const std::string& prefix);
  bool is_frozen(const std::string& name) const;

  /// One update from the gradients currently on the parameters.
  /// Throws TensorError on non-finite gradients.
  void step();
  void zero_grad();
  std::size_t step_count() const { return step_; }

 private:
  ParamRegistry& registry_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<bool> frozen_;
  std::vector<std::string> frozen_prefixes_;
  std::size_t step_ = 0;
};

}  // namespace sgol
