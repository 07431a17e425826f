#include "sgol/nn.hpp"

#include <cmath>

namespace sgol {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kLayerNormEps = 1e-5;

Tensor xavier_uniform(Rng& rng, Shape shape, std::size_t fan_in,
                      std::size_t fan_out) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

}  // namespace

Tensor ParamRegistry::add(const std::string& name, Tensor tensor) {
  if (!names_.insert(name).second) {
    throw TensorError("ParamRegistry: duplicate parameter name '" + name + "'");
  }
  tensor.set_requires_grad(true);
  params_.push_back({name, tensor});
  return tensor;
}

Tensor* ParamRegistry::find(const std::string& name) {
  for (Param& p : params_) {
    if (p.name == name) return &p.tensor;
  }
  return nullptr;
}

void ParamRegistry::zero_grad() {
  for (Param& p : params_) p.tensor.zero_grad();
}

std::size_t ParamRegistry::total_values() const {
  std::size_t n = 0;
  for (const Param& p : params_) n += p.tensor.size();
  return n;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(ParamRegistry& reg, const std::string& prefix, Rng& rng,
               std::size_t in, std::size_t out) {
  weight = reg.add(prefix + ".weight", xavier_uniform(rng, {out, in}, in, out));
  bias = reg.add(prefix + ".bias", Tensor::zeros({out}, true));
}

Tensor Linear::forward(const Tensor& x) const {
  std::size_t in = weight.shape()[1];
  if (x.rank() == 1) {
    if (x.shape()[0] != in) {
      throw TensorError("linear: input size " + shape_str(x.shape()) +
                        " does not match weight " + shape_str(weight.shape()));
    }
    Tensor row = reshape(x, {1, in});
    Tensor out = matmul(row, transpose2d(weight));
    return add(reshape(out, {weight.shape()[0]}), bias);
  }
  if (x.rank() != 2 || x.shape()[1] != in) {
    throw TensorError("linear: input " + shape_str(x.shape()) +
                      " does not match weight " + shape_str(weight.shape()));
  }
  return add(matmul(x, transpose2d(weight)), bias);
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(ParamRegistry& reg, const std::string& prefix, Rng& rng,
               std::size_t in, std::size_t out, std::size_t kernel,
               std::size_t stride_, std::size_t padding_)
    : in_ch(in), out_ch(out), k(kernel), stride(stride_), padding(padding_) {
  if (k != 1 && k != 3) {
    throw TensorError("conv2d: kernel size must be 1 or 3");
  }
  if (stride == 0) throw TensorError("conv2d: stride must be positive");
  weight = reg.add(prefix + ".weight",
                   xavier_uniform(rng, {out, in, k, k}, in * k * k, out * k * k));
  bias = reg.add(prefix + ".bias", Tensor::zeros({out}, true));
}

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.rank() != 3 || x.shape()[0] != in_ch) {
    throw TensorError("conv2d: expected (" + std::to_string(in_ch) +
                      "×H×W) input, got " + shape_str(x.shape()));
  }
  std::size_t h = x.shape()[1], w = x.shape()[2];
  if (h + 2 * padding < k || w + 2 * padding < k) {
    throw TensorError("conv2d: input smaller than kernel");
  }
  std::size_t ho = (h + 2 * padding - k) / stride + 1;
  std::size_t wo = (w + 2 * padding - k) / stride + 1;

  const auto& xd = x.data();
  const auto& wd = weight.data();
  const auto& bd = bias.data();
  std::vector<double> out(out_ch * ho * wo);

  for (std::size_t oc = 0; oc < out_ch; ++oc) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = bd[oc];
        for (std::size_t ic = 0; ic < in_ch; ++ic) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * stride + kx) -
                  static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              acc += wd[((oc * in_ch + ic) * k + ky) * k + kx] *
                     xd[(ic * h + static_cast<std::size_t>(iy)) * w +
                        static_cast<std::size_t>(ix)];
            }
          }
        }
        out[(oc * ho + oy) * wo + ox] = acc;
      }
    }
  }

  Tensor x_copy = x, w_copy = weight, b_copy = bias;
  std::size_t in_c = in_ch, out_c = out_ch, kk = k, st = stride, pad = padding;
  auto bw = [x_copy, w_copy, b_copy, in_c, out_c, kk, st, pad, h, w, ho,
             wo](const std::vector<double>& g) mutable {
    const auto& xd2 = x_copy.data();
    const auto& wd2 = w_copy.data();
    auto* gx = x_copy.mutable_grad();
    auto* gw = w_copy.mutable_grad();
    auto* gb = b_copy.mutable_grad();
    for (std::size_t oc = 0; oc < out_c; ++oc) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double go = g[(oc * ho + oy) * wo + ox];
          if (gb) (*gb)[oc] += go;
          if (!gx && !gw) continue;
          for (std::size_t ic = 0; ic < in_c; ++ic) {
            for (std::size_t ky = 0; ky < kk; ++ky) {
              std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * st + ky) -
                  static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kk; ++kx) {
                std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * st + kx) -
                    static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                std::size_t xi = (ic * h + static_cast<std::size_t>(iy)) * w +
                                 static_cast<std::size_t>(ix);
                std::size_t wi = ((oc * in_c + ic) * kk + ky) * kk + kx;
                if (gw) (*gw)[wi] += go * xd2[xi];
                if (gx) (*gx)[xi] += go * wd2[wi];
              }
            }
          }
        }
      }
    }
  };
  return custom_op("conv2d", {out_ch, ho, wo}, std::move(out),
                   {x, weight, bias}, std::move(bw));
}

// ---------------------------------------------------------------------------
// LayerNorm

LayerNorm::LayerNorm(ParamRegistry& reg, const std::string& prefix,
                     std::size_t d) {
  gain = reg.add(prefix + ".gain", Tensor::full({d}, 1.0, true));
  bias = reg.add(prefix + ".bias", Tensor::zeros({d}, true));
}

Tensor LayerNorm::forward(const Tensor& x) const {
  if (x.rank() == 0 || x.shape().back() != gain.shape()[0]) {
    throw TensorError("layernorm: input " + shape_str(x.shape()) +
                      " does not end in width " +
                      std::to_string(gain.shape()[0]));
  }
  std::size_t last = x.rank() - 1;
  Tensor mu = mean(x, {last}, true);
  Tensor centered = sub(x, mu);
  Tensor var = mean(mul(centered, centered), {last}, true);
  Tensor denom = sqrt(add(var, Tensor::scalar(kLayerNormEps)));
  return add(mul(div(centered, denom), gain), bias);
}

// ---------------------------------------------------------------------------
// MultiHeadAttention

MultiHeadAttention::MultiHeadAttention(ParamRegistry& reg,
                                       const std::string& prefix, Rng& rng,
                                       std::size_t d_, std::size_t heads_)
    : d(d_), heads(heads_) {
  if (heads == 0 || d % heads != 0) {
    throw TensorError("mha: width " + std::to_string(d) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  wq = Linear(reg, prefix + ".wq", rng, d, d);
  wk = Linear(reg, prefix + ".wk", rng, d, d);
  wv = Linear(reg, prefix + ".wv", rng, d, d);
  wo = Linear(reg, prefix + ".wo", rng, d, d);
}

Tensor MultiHeadAttention::forward(const Tensor& queries,
                                   const Tensor& keys_values,
                                   const Tensor* query_pos,
                                   const Tensor* key_pos,
                                   std::vector<Tensor>* attn_out) const {
  if (queries.rank() != 2 || queries.shape()[1] != d ||
      keys_values.rank() != 2 || keys_values.shape()[1] != d) {
    throw TensorError("mha: inputs must be (n×" + std::to_string(d) + ")");
  }
  Tensor q_in = query_pos ? add(queries, *query_pos) : queries;
  Tensor k_in = key_pos ? add(keys_values, *key_pos) : keys_values;

  Tensor q = wq.forward(q_in);
  Tensor k = wk.forward(k_in);
  Tensor v = wv.forward(keys_values);  // values never carry positions

  std::size_t dh = d / heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    Tensor qh = slice(q, 1, hd * dh, dh);
    Tensor kh = slice(k, 1, hd * dh, dh);
    Tensor vh = slice(v, 1, hd * dh, dh);
    Tensor logits = mul(matmul(qh, transpose2d(kh)), Tensor::scalar(scale));
    Tensor attn = softmax(logits, 1);
    if (attn_out) attn_out->push_back(attn);
    head_outputs.push_back(matmul(attn, vh));
  }
  return wo.forward(concat(head_outputs, 1));
}

// ---------------------------------------------------------------------------
// Transformer layers

EncoderLayer::EncoderLayer(ParamRegistry& reg, const std::string& prefix,
                           Rng& rng, std::size_t d, std::size_t heads,
                           std::size_t dim_ff)
    : self_attn(reg, prefix + ".self_attn", rng, d, heads),
      ff1(reg, prefix + ".ff1", rng, d, dim_ff),
      ff2(reg, prefix + ".ff2", rng, dim_ff, d),
      norm1(reg, prefix + ".norm1", d),
      norm2(reg, prefix + ".norm2", d) {}

Tensor EncoderLayer::forward(const Tensor& x, const Tensor* pos) const {
  Tensor attn = self_attn.forward(x, x, pos, pos);
  Tensor x1 = norm1.forward(add(x, attn));
  Tensor ff = ff2.forward(relu(ff1.forward(x1)));
  return norm2.forward(add(x1, ff));
}

DecoderLayer::DecoderLayer(ParamRegistry& reg, const std::string& prefix,
                           Rng& rng, std::size_t d, std::size_t heads,
                           std::size_t dim_ff)
    : self_attn(reg, prefix + ".self_attn", rng, d, heads),
      cross_attn(reg, prefix + ".cross_attn", rng, d, heads),
      ff1(reg, prefix + ".ff1", rng, d, dim_ff),
      ff2(reg, prefix + ".ff2", rng, dim_ff, d),
      norm1(reg, prefix + ".norm1", d),
      norm2(reg, prefix + ".norm2", d),
      norm3(reg, prefix + ".norm3", d) {}

Tensor DecoderLayer::forward(const Tensor& x, const Tensor& memory,
                             const Tensor* query_pos,
                             const Tensor* memory_pos) const {
  Tensor sa = self_attn.forward(x, x, query_pos, query_pos);
  Tensor x1 = norm1.forward(add(x, sa));
  Tensor ca = cross_attn.forward(x1, memory, query_pos, memory_pos);
  Tensor x2 = norm2.forward(add(x1, ca));
  Tensor ff = ff2.forward(relu(ff1.forward(x2)));
  return norm3.forward(add(x2, ff));
}

// ---------------------------------------------------------------------------
// Positional encoding

Tensor positional_encoding_2d(std::size_t height, std::size_t width,
                              std::size_t d) {
  if (d % 4 != 0) {
    throw TensorError("positional_encoding_2d: width " + std::to_string(d) +
                      " must be divisible by 4");
  }
  std::size_t pairs = d / 4;
  std::vector<double> data(d * height * width);
  auto put = [&](std::size_t ch, std::size_t y, std::size_t x, double v) {
    data[(ch * height + y) * width + x] = v;
  };
  for (std::size_t y = 0; y < height; ++y) {
    double yn = height > 1 ? static_cast<double>(y) /
                                 static_cast<double>(height - 1)
                           : 0.0;
    for (std::size_t x = 0; x < width; ++x) {
      double xn = width > 1 ? static_cast<double>(x) /
                                  static_cast<double>(width - 1)
                            : 0.0;
      for (std::size_t j = 0; j < pairs; ++j) {
        double omega = kPi * std::pow(2.0, -static_cast<double>(j));
        put(2 * j, y, x, std::sin(omega * xn));
        put(2 * j + 1, y, x, std::cos(omega * xn));
        put(d / 2 + 2 * j, y, x, std::sin(omega * yn));
        put(d / 2 + 2 * j + 1, y, x, std::cos(omega * yn));
      }
    }
  }
  return Tensor::from_data({d, height, width}, std::move(data), false);
}

// ---------------------------------------------------------------------------
// AdamW

AdamW::AdamW(ParamRegistry& registry, AdamWConfig config)
    : registry_(registry), cfg_(config) {
  const auto& ps = registry_.params();
  m_.resize(ps.size());
  v_.resize(ps.size());
  frozen_.assign(ps.size(), false);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    m_[i].assign(ps[i].tensor.size(), 0.0);
    v_[i].assign(ps[i].tensor.size(), 0.0);
  }
}

void AdamW::freeze_prefix(const std::string& prefix) {
  frozen_prefixes_.push_back(prefix);
  const auto& ps = registry_.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].name.rfind(prefix, 0) == 0) frozen_[i] = true;
  }
}

bool AdamW::is_frozen(const std::string& name) const {
  for (const std::string& prefix : frozen_prefixes_) {
    if (name.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

void AdamW::step() {
  ++step_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));

  auto& ps = registry_.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (frozen_[i]) continue;
    Tensor& t = ps[i].tensor;
    const std::vector<double>& g = t.grad();
    auto& data = t.data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (!std::isfinite(g[j])) {
        throw TensorError("adamw: non-finite gradient on '" + ps[i].name + "'");
      }
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      double m_hat = m_[i][j] / bc1;
      double v_hat = v_[i][j] / bc2;
      data[j] -= cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) +
                            cfg_.weight_decay * data[j]);
    }
  }
}

void AdamW::zero_grad() { registry_.zero_grad(); }

}  // namespace sgol
