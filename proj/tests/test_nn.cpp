#include "doctest.h"
#include "sgol/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

using namespace sgol;

namespace {

std::vector<Tensor> registry_tensors(ParamRegistry& reg) {
  std::vector<Tensor> out;
  for (Param& p : reg.params()) out.push_back(p.tensor);
  return out;
}

}  // namespace

TEST_CASE("param registry") {
  ParamRegistry reg;
  Tensor a = reg.add("a", Tensor::zeros({2}));
  CHECK(a.requires_grad());
  CHECK(reg.find("a") != nullptr);
  CHECK(reg.find("b") == nullptr);
  CHECK(reg.total_values() == 2);
  CHECK_THROWS_AS(reg.add("a", Tensor::zeros({1})), TensorError);
}

TEST_CASE("linear forward") {
  ParamRegistry reg;
  Rng rng(1);
  Linear id(reg, "id", rng, 3, 3);
  std::fill(id.weight.data().begin(), id.weight.data().end(), 0.0);
  for (std::size_t i = 0; i < 3; ++i) id.weight.data()[i * 3 + i] = 1.0;
  Tensor x = Tensor::from_data({3}, {5, -1, 2});
  Tensor y = id.forward(x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(y.at({i}) == x.at({i}));

  Linear sel(reg, "sel", rng, 4, 2);
  std::fill(sel.weight.data().begin(), sel.weight.data().end(), 0.0);
  sel.weight.data()[0 * 4 + 2] = 1.0;  // out0 <- in2
  sel.weight.data()[1 * 4 + 3] = 1.0;  // out1 <- in3
  Tensor s = sel.forward(Tensor::from_data({4}, {1, 2, 3, 4}));
  CHECK(s.at({0}) == 3.0);
  CHECK(s.at({1}) == 4.0);

  // batched path
  Tensor batch = sel.forward(Tensor::from_data({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}));
  CHECK(batch.shape() == Shape{2, 2});
  CHECK(batch.at({1, 0}) == 7.0);

  CHECK_THROWS_AS(sel.forward(Tensor::zeros({3})), TensorError);
}

TEST_CASE("linear gradcheck") {
  ParamRegistry reg;
  Rng rng(2);
  Linear layer(reg, "l", rng, 3, 2);
  Tensor x = Tensor::from_data({2, 3}, {0.3, -0.2, 0.8, -0.5, 0.1, 0.4}, true);
  std::vector<Tensor> params = registry_tensors(reg);
  params.push_back(x);
  double err = finite_difference_check(
      [&] { return sum(mul(layer.forward(x), layer.forward(x))); }, params);
  CHECK(err <= 1e-6);
}

TEST_CASE("conv2d forward hand cases") {
  ParamRegistry reg;
  Rng rng(3);
  Conv2d c1(reg, "c1", rng, 2, 1, 1, 1, 0);
  c1.weight.data() = {1.0, 1.0};
  c1.bias.data() = {0.0};
  Tensor x = Tensor::from_data({2, 1, 2}, {2, 3, 5, 5});
  Tensor y = c1.forward(x);
  CHECK(y.shape() == Shape{1, 1, 2});
  CHECK(y.at({0, 0, 0}) == 7.0);
  CHECK(y.at({0, 0, 1}) == 8.0);

  Conv2d c3(reg, "c3", rng, 1, 2, 3, 1, 1);
  std::fill(c3.weight.data().begin(), c3.weight.data().end(), 0.0);
  c3.bias.data() = {2.0, 2.0};
  Tensor z = c3.forward(Tensor::from_data({1, 4, 4}, std::vector<double>(16, 1.0)));
  CHECK(z.shape() == Shape{2, 4, 4});
  for (double v : z.data()) CHECK(v == 2.0);

  // stride-2 output size
  Conv2d cs(reg, "cs", rng, 1, 1, 3, 2, 1);
  CHECK(cs.forward(Tensor::zeros({1, 5, 5})).shape() == Shape{1, 3, 3});
  CHECK(cs.forward(Tensor::zeros({1, 48, 48})).shape() == Shape{1, 24, 24});

  CHECK_THROWS_AS(c1.forward(Tensor::zeros({3, 2, 2})), TensorError);
}

TEST_CASE("conv2d gradcheck") {
  ParamRegistry reg;
  Rng rng(4);
  Conv2d conv(reg, "c", rng, 2, 2, 3, 1, 1);
  Tensor x = Tensor::from_data({2, 3, 3},
                               {0.1, -0.4, 0.3, 0.7, -0.2, 0.5, -0.6, 0.2, 0.9,
                                -0.3, 0.8, -0.1, 0.4, 0.6, -0.7, 0.2, -0.5, 0.1},
                               true);
  std::vector<Tensor> params = registry_tensors(reg);
  params.push_back(x);
  double err = finite_difference_check(
      [&] { return mean(mul(conv.forward(x), conv.forward(x))); }, params);
  CHECK(err <= 1e-6);

  // and through a strided conv
  ParamRegistry reg2;
  Conv2d conv2(reg2, "c", rng, 1, 2, 3, 2, 1);
  Tensor x2 = Tensor::from_data(
      {1, 4, 4}, {0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, 0.8, -0.9, 1.0, 0.2,
                  -0.3, 0.6, -0.1, 0.4, 0.5},
      true);
  std::vector<Tensor> params2 = registry_tensors(reg2);
  params2.push_back(x2);
  err = finite_difference_check(
      [&] { return mean(mul(conv2.forward(x2), conv2.forward(x2))); }, params2);
  CHECK(err <= 1e-6);
}

TEST_CASE("layernorm") {
  ParamRegistry reg;
  LayerNorm ln(reg, "ln", 4);
  Tensor constant = Tensor::from_data({4}, {3, 3, 3, 3});
  Tensor out = ln.forward(constant);
  for (double v : out.data()) CHECK(std::abs(v) <= 1e-9);

  // with constant gain, per-slot output mean comes out at the bias mean
  ln.bias.data() = {0.5, 0.5, 0.5, 0.5};
  Tensor x = Tensor::from_data({2, 4}, {1, -2, 4, 0.5, 7, 3, -1, 2});
  Tensor y = ln.forward(x);
  for (std::size_t r = 0; r < 2; ++r) {
    double m = 0.0;
    for (std::size_t c = 0; c < 4; ++c) m += y.at({r, c});
    CHECK(std::abs(m / 4.0 - 0.5) <= 1e-9);
  }

  CHECK_THROWS_AS(ln.forward(Tensor::zeros({3})), TensorError);
}

TEST_CASE("layernorm gradcheck") {
  ParamRegistry reg;
  LayerNorm ln(reg, "ln", 5);
  Tensor x = Tensor::from_data({2, 5}, {0.3, -1.2, 0.8, 0.1, -0.7, 1.4, 0.2,
                                        -0.9, 0.6, -0.4},
                               true);
  // non-trivial affine so gain gradients are exercised
  ln.gain.data() = {1.2, 0.8, -0.5, 1.0, 0.3};
  ln.bias.data() = {0.1, -0.2, 0.3, 0.0, -0.1};
  std::vector<Tensor> params = registry_tensors(reg);
  params.push_back(x);
  double err = finite_difference_check(
      [&] { return sum(mul(ln.forward(x), ln.forward(x))); }, params);
  CHECK(err <= 1e-6);
}

TEST_CASE("multi-head attention") {
  ParamRegistry reg;
  Rng rng(5);
  MultiHeadAttention mha(reg, "mha", rng, 4, 2);

  // single key: softmax over one element is exactly 1, so the output can
  // not depend on the queries
  Tensor kv = Tensor::from_data({1, 4}, {0.3, -0.5, 0.8, 0.2});
  Tensor q1 = Tensor::from_data({2, 4}, {1, 2, 3, 4, -1, -2, -3, -4});
  Tensor q2 = Tensor::from_data({2, 4}, {0, 0, 0, 0, 9, 9, 9, 9});
  Tensor o1 = mha.forward(q1, kv);
  Tensor o2 = mha.forward(q2, kv);
  for (std::size_t i = 0; i < o1.size(); ++i) CHECK(o1.data()[i] == o2.data()[i]);

  // attention rows are probability distributions
  Tensor keys = Tensor::from_data({3, 4}, {0.1, 0.2, 0.3, 0.4, -0.5, 0.6, -0.7,
                                           0.8, 0.9, -1.0, 1.1, -1.2});
  std::vector<Tensor> attn;
  mha.forward(q1, keys, nullptr, nullptr, &attn);
  REQUIRE(attn.size() == 2);
  for (const Tensor& a : attn) {
    REQUIRE(a.shape() == Shape{2, 3});
    for (std::size_t r = 0; r < 2; ++r) {
      double s = a.at({r, 0}) + a.at({r, 1}) + a.at({r, 2});
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }

  CHECK_THROWS_AS(MultiHeadAttention(reg, "bad", rng, 6, 4), TensorError);
}

TEST_CASE("multi-head attention gradcheck") {
  ParamRegistry reg;
  Rng rng(6);
  MultiHeadAttention mha(reg, "mha", rng, 4, 2);
  Tensor q = Tensor::from_data({2, 4}, {0.3, -0.2, 0.5, 0.1, -0.4, 0.6, 0.2, -0.1}, true);
  Tensor kv = Tensor::from_data({3, 4}, {0.2, 0.1, -0.3, 0.4, 0.5, -0.6, 0.1,
                                         0.3, -0.2, 0.4, 0.6, -0.5},
                                true);
  Tensor qpos = Tensor::from_data({2, 4}, {0.1, 0.0, -0.1, 0.2, 0.0, 0.1, 0.2, -0.2}, true);
  Tensor kpos = Tensor::from_data({3, 4}, {0.0, 0.1, 0.1, -0.1, 0.2, 0.0, -0.2,
                                           0.1, 0.1, -0.1, 0.0, 0.2},
                                  true);
  std::vector<Tensor> params = registry_tensors(reg);
  params.push_back(q);
  params.push_back(kv);
  params.push_back(qpos);
  params.push_back(kpos);
  double err = finite_difference_check(
      [&] {
        Tensor out = mha.forward(q, kv, &qpos, &kpos);
        return sum(mul(out, out));
      },
      params);
  CHECK(err <= 1e-5);
}

TEST_CASE("encoder layer permutation equivariance") {
  ParamRegistry reg;
  Rng rng(7);
  EncoderLayer enc(reg, "enc", rng, 4, 2, 8);

  Tensor x = Tensor::from_data({3, 4}, {0.3, -0.2, 0.5, 0.1, -0.4, 0.6, 0.2,
                                        -0.1, 0.7, -0.8, 0.9, 0.4});
  Tensor base = enc.forward(x);

  std::vector<std::vector<std::size_t>> perms = {
      {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (const auto& perm : perms) {
    std::vector<double> pd(12);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 4; ++c)
        pd[r * 4 + c] = x.at({perm[r], c});
    Tensor out = enc.forward(Tensor::from_data({3, 4}, pd));
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 4; ++c)
        CHECK(out.at({r, c}) ==
              doctest::Approx(base.at({perm[r], c})).epsilon(1e-12));
  }
}

TEST_CASE("encoder and decoder layer gradcheck") {
  ParamRegistry reg;
  Rng rng(8);
  EncoderLayer enc(reg, "enc", rng, 4, 2, 8);
  Tensor x = Tensor::from_data({3, 4}, {0.3, -0.2, 0.5, 0.1, -0.4, 0.6, 0.2,
                                        -0.1, 0.7, -0.8, 0.9, 0.4},
                               true);
  Tensor pos = Tensor::from_data({3, 4}, {0.1, 0.0, -0.1, 0.2, 0.0, 0.1, 0.2,
                                          -0.2, -0.1, 0.1, 0.0, 0.1},
                                 true);
  std::vector<Tensor> params = registry_tensors(reg);
  params.push_back(x);
  params.push_back(pos);
  double err = finite_difference_check(
      [&] {
        Tensor out = enc.forward(x, &pos);
        return mean(mul(out, out));
      },
      params);
  CHECK(err <= 1e-5);

  ParamRegistry reg2;
  DecoderLayer dec(reg2, "dec", rng, 4, 2, 8);
  Tensor queries = Tensor::from_data({2, 4}, {0.2, -0.3, 0.4, 0.1, -0.5, 0.3, 0.0, 0.2}, true);
  Tensor memory = Tensor::from_data({3, 4}, {0.1, 0.4, -0.2, 0.3, 0.6, -0.1,
                                             0.2, -0.4, 0.0, 0.5, -0.3, 0.1},
                                    true);
  std::vector<Tensor> params2 = registry_tensors(reg2);
  params2.push_back(queries);
  params2.push_back(memory);
  err = finite_difference_check(
      [&] {
        Tensor out = dec.forward(queries, memory);
        return mean(mul(out, out));
      },
      params2);
  CHECK(err <= 1e-5);
}

TEST_CASE("positional encoding") {
  Tensor pe = positional_encoding_2d(4, 4, 8);
  CHECK(pe.shape() == Shape{8, 4, 4});
  CHECK_FALSE(pe.requires_grad());

  // at (0,0) every sin channel is 0 and every cos channel is 1
  for (std::size_t ch = 0; ch < 8; ch += 2) {
    CHECK(pe.at({ch, 0, 0}) == doctest::Approx(0.0));
    CHECK(pe.at({ch + 1, 0, 0}) == doctest::Approx(1.0));
  }

  for (double v : pe.data()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }

  // all 16 grid positions get distinct encodings
  for (std::size_t a = 0; a < 16; ++a) {
    for (std::size_t b = a + 1; b < 16; ++b) {
      double diff = 0.0;
      for (std::size_t ch = 0; ch < 8; ++ch) {
        diff = std::max(diff, std::abs(pe.at({ch, a / 4, a % 4}) -
                                       pe.at({ch, b / 4, b % 4})));
      }
      CHECK(diff > 1e-9);
    }
  }

  CHECK_THROWS_AS(positional_encoding_2d(2, 2, 6), TensorError);
}

TEST_CASE("adamw single step and freezing") {
  ParamRegistry reg;
  Tensor theta = reg.add("theta", Tensor::from_data({1}, {1.0}));
  AdamWConfig cfg;
  cfg.lr = 0.1;
  AdamW opt(reg, cfg);

  (*theta.mutable_grad())[0] = 1.0;
  opt.step();
  CHECK(theta.data()[0] == doctest::Approx(0.9).epsilon(1e-7));

  // zero gradient, zero decay: parameter untouched
  ParamRegistry reg2;
  Tensor still = reg2.add("p", Tensor::from_data({1}, {0.7}));
  AdamW opt2(reg2, cfg);
  opt2.step();
  CHECK(still.data()[0] == 0.7);

  // frozen parameters ignore gradients entirely
  ParamRegistry reg3;
  Tensor frozen = reg3.add("backbone.w", Tensor::from_data({1}, {0.5}));
  Tensor live = reg3.add("head.w", Tensor::from_data({1}, {0.5}));
  AdamW opt3(reg3, cfg);
  opt3.freeze_prefix("backbone.");
  CHECK(opt3.is_frozen("backbone.w"));
  CHECK_FALSE(opt3.is_frozen("head.w"));
  (*frozen.mutable_grad())[0] = 1.0;
  (*live.mutable_grad())[0] = 1.0;
  opt3.step();
  CHECK(frozen.data()[0] == 0.5);
  CHECK(live.data()[0] < 0.5);

  // non-finite gradient is an error
  ParamRegistry reg4;
  Tensor bad = reg4.add("b", Tensor::from_data({1}, {1.0}));
  AdamW opt4(reg4, cfg);
  (*bad.mutable_grad())[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(opt4.step(), TensorError);
}

TEST_CASE("adamw minimizes a quadratic monotonically") {
  ParamRegistry reg;
  Tensor theta = reg.add("theta", Tensor::from_data({1}, {1.0}));
  AdamWConfig cfg;
  cfg.lr = 0.01;
  AdamW opt(reg, cfg);

  double prev = theta.data()[0] * theta.data()[0];
  for (int i = 0; i < 100; ++i) {
    opt.zero_grad();
    Tensor loss = mul(theta, theta);
    reshape(loss, {}).backward();
    opt.step();
    double now = theta.data()[0] * theta.data()[0];
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("initialization is seeded and bounded") {
  auto build = [](std::uint64_t seed) {
    ParamRegistry reg;
    Rng rng(seed);
    Linear l(reg, "l", rng, 6, 4);
    Conv2d c(reg, "c", rng, 2, 3, 3, 1, 1);
    MultiHeadAttention m(reg, "m", rng, 4, 2);
    std::vector<double> all;
    for (Param& p : reg.params())
      all.insert(all.end(), p.tensor.data().begin(), p.tensor.data().end());
    return all;
  };
  std::vector<double> a = build(77), b = build(77), c = build(78);
  CHECK(a == b);
  CHECK(a != c);

  ParamRegistry reg;
  Rng rng(9);
  Linear l(reg, "l", rng, 6, 4);
  double bound = std::sqrt(6.0 / (6 + 4));
  for (double v : l.weight.data()) CHECK(std::abs(v) <= bound);
  for (double v : l.bias.data()) CHECK(v == 0.0);
}
