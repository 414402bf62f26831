#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "adavid/adaptive.hpp"
#include "adavid/error.hpp"
#include "adavid/flop_counter.hpp"
#include "adavid/reference.hpp"
#include "test_support.hpp"

using namespace adavid;
using namespace adavid::testing;
namespace ref = adavid::reference;

namespace {

constexpr std::size_t kWidth = 32;
constexpr std::size_t kHeadDim = 8;
const std::vector<std::size_t> kAllowed{32, 24, 16, 8};

AdaptiveTransformerLayer random_layer(AttentionMode mode, std::uint64_t seed, std::size_t width = kWidth) {
  Rng rng(seed);
  auto layer = make_adaptive_layer(width, kHeadDim, mode, rng, 0.02);
  NamedTensors params;
  layer.collect(params, "layer");
  ref::randomize(params, rng, 0.3);
  return layer;
}

NamedTensors params_of(const AdaptiveTransformerLayer& layer) {
  NamedTensors p;
  layer.collect(p, "layer");
  return p;
}

}  // namespace

TEST_CASE("adaptive_linear hand examples") {
  AdaptiveLinear lin{Tensor(Shape{2, 2}, {1, 2, 3, 4}, true), Tensor(Shape{2}, {0.5, -0.5}, true)};
  Tensor y = adaptive_linear(lin, Tensor::matrix({{1, 1}}), 2, 2);
  CHECK(y.at(0) == 3.5);
  CHECK(y.at(1) == 6.5);
  y = adaptive_linear(lin, Tensor::matrix({{1}}), 1, 1);
  CHECK(y.numel() == 1);
  CHECK(y.at(0) == 1.5);
  CHECK_THROWS_AS(adaptive_linear(lin, Tensor::matrix({{1, 1, 1}}), 3, 3), InvalidArgument);
  CHECK_THROWS_AS(adaptive_linear(lin, Tensor::matrix({{1, 1}}), 2, 1), InvalidArgument);
}

TEST_CASE("adaptive_linear at full width equals the dense layer") {
  Rng rng(4);
  AdaptiveLinear lin{random_tensor({6, 5}, rng), random_tensor({6}, rng)};
  Tensor x = random_tensor({3, 5}, rng);
  CHECK(bit_equal(adaptive_linear(lin, x, 6, 5), linear(x, lin.weight, lin.bias)));
  ref::Mat expected = ref::linear(ref::Mat(x), lin.weight, lin.bias);
  CHECK(bit_equal(adaptive_linear(lin, x, 6, 5).data(), expected.v));
}

TEST_CASE("adaptive_layernorm examples") {
  AdaptiveLayerNorm ln{Tensor(Shape{2}, {1, 1}, true), Tensor(Shape{2}, {0, 0}, true)};
  Tensor y = adaptive_layernorm(ln, Tensor::matrix({{1, -1}}), 2);
  CHECK(y.at(0) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(y.at(1) == doctest::Approx(-1.0).epsilon(1e-5));

  AdaptiveLayerNorm single{Tensor(Shape{3}, {1, 1, 1}, true), Tensor(Shape{3}, {0.3, 0, 0}, true)};
  y = adaptive_layernorm(single, Tensor::matrix({{7}}), 1);
  CHECK(y.at(0) == 0.3);
  CHECK_THROWS_AS(adaptive_layernorm(single, Tensor::matrix({{7}}), 0), InvalidArgument);
  CHECK_THROWS_AS(adaptive_layernorm(single, Tensor(Shape{1, 4}), 4), InvalidArgument);
}

TEST_CASE("layer norm on a prefix differs from the prefix of the full layer norm") {
  AdaptiveLayerNorm ln{Tensor(Shape{4}, {1, 1, 1, 1}, true), Tensor(Shape{4}, {0, 0, 0, 0}, true)};
  Tensor x = Tensor::matrix({{1, -1, 10, 10}});
  Tensor narrow = adaptive_layernorm(ln, slice(x, 1, 2), 2);
  Tensor full = adaptive_layernorm(ln, x, 4);
  // Hand formula: prefix stats mean 0, var 1; full stats mean 5, var 25.5.
  const double eps = ln.eps;
  CHECK(narrow.at(0) == doctest::Approx(1.0 / std::sqrt(1.0 + eps)));
  CHECK(full.at(0) == doctest::Approx(-4.0 / std::sqrt(25.5 + eps)));
  CHECK(full.at(1) == doctest::Approx(-6.0 / std::sqrt(25.5 + eps)));
  CHECK(std::abs(narrow.at(0) - full.at(0)) > 1.0);
  CHECK(std::abs(narrow.at(1) - full.at(1)) > 0.1);
}

TEST_CASE("adaptive_mha: one head, one token reduces to the value/output path") {
  auto layer = random_layer(AttentionMode::kJoint, 8);
  const AdaptiveMha& mha = layer.attn;
  Rng rng(9);
  Tensor x = random_tensor({1, kHeadDim}, rng);
  Tensor y = adaptive_mha(mha, x, kHeadDim);
  // Wo[:H,:H] (Wv[:H,:H] x + bv) + bo[:H], by hand.
  std::vector<double> v(kHeadDim), expected(kHeadDim);
  for (std::size_t o = 0; o < kHeadDim; ++o) {
    double s = 0.0;
    for (std::size_t k = 0; k < kHeadDim; ++k) s += mha.v.weight.at(o, k) * x.at(k);
    v[o] = s + mha.v.bias.at(o);
  }
  for (std::size_t o = 0; o < kHeadDim; ++o) {
    double s = 0.0;
    for (std::size_t k = 0; k < kHeadDim; ++k) s += mha.o.weight.at(o, k) * v[k];
    expected[o] = s + mha.o.bias.at(o);
  }
  CHECK(max_abs_diff(y.data(), expected) < 1e-14);
}

TEST_CASE("adaptive_mha at full width matches the straight-line reference") {
  auto layer = random_layer(AttentionMode::kJoint, 10);
  Rng rng(11);
  Tensor x = random_tensor({7, kWidth}, rng);
  ref::Mat expected = ref::mha(layer.attn, ref::Mat(x), ref::dense_keys(7));
  CHECK(bit_equal(adaptive_mha(layer.attn, x, kWidth).data(), expected.v));
}

TEST_CASE("adaptive_mha at 2H equals the materialized two-head model") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto layer = random_layer(AttentionMode::kJoint, 100 + seed);
    Rng rng(200 + seed);
    Tensor x = random_tensor({5, 2 * kHeadDim}, rng);
    AdaptiveMha small = ref::materialize(layer.attn, 2 * kHeadDim);
    CHECK(small.max_heads() == 2);
    CHECK(bit_equal(adaptive_mha(layer.attn, x, 2 * kHeadDim), adaptive_mha(small, x, 2 * kHeadDim)));
    // and the materialized model agrees with straight-line loops
    CHECK(bit_equal(adaptive_mha(small, x, 2 * kHeadDim).data(), ref::mha(small, ref::Mat(x), ref::dense_keys(5)).v));
  }
}

TEST_CASE("adaptive_mha rejects widths that are not head multiples") {
  auto layer = random_layer(AttentionMode::kJoint, 12);
  Tensor x(Shape{2, 12});
  try {
    adaptive_mha(layer.attn, x, 12);
    FAIL("expected rejection");
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("8 16 24 32") != std::string::npos);
  }
  CHECK_THROWS_AS(adaptive_mha(layer.attn, Tensor(Shape{2, 40}), 40), InvalidArgument);
}

TEST_CASE("adaptive_ffn identities") {
  auto layer = random_layer(AttentionMode::kJoint, 13);
  Rng rng(14);
  Tensor x = random_tensor({4, kWidth}, rng);
  CHECK(bit_equal(adaptive_ffn(layer.ffn, x, kWidth).data(), ref::ffn(layer.ffn, ref::Mat(x)).v));

  Tensor half = random_tensor({4, kWidth / 2}, rng);
  AdaptiveFfn small = ref::materialize(layer.ffn, kWidth / 2);
  CHECK(bit_equal(adaptive_ffn(layer.ffn, half, kWidth / 2), adaptive_ffn(small, half, kWidth / 2)));

  AdaptiveFfn zero = make_adaptive_ffn(kWidth, rng, 0.0);
  for (double& b : zero.fc2.bias.mutable_data()) b = 1.0;
  for (std::size_t d : kAllowed) {
    Tensor out = adaptive_ffn(zero, random_tensor({3, d}, rng), d);
    for (double v : out.data()) CHECK(v == 1.0);
  }
}

TEST_CASE("transition pads with zeros and truncates") {
  Tensor y = transition(Tensor::matrix({{1, 2}}), 2, 4);
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{1, 2, 0, 0});
  y = transition(Tensor::matrix({{1, 2, 3, 4}}), 4, 2);
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{1, 2});
  Rng rng(15);
  Tensor x = random_tensor({3, 8}, rng);
  CHECK(bit_equal(transition(transition(x, 8, 16), 16, 8), x));
  Tensor cut = transition(transition(x, 8, 4), 4, 8);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 8; ++c) CHECK(cut.at(r, c) == (c < 4 ? x.at(r, c) : 0.0));
  CHECK(transition(x, 8, 8).same_storage(x));
  CHECK_THROWS_AS(transition(x, 8, 12, kAllowed), InvalidArgument);
}

TEST_CASE("layer with zeroed weights is the identity map") {
  for (AttentionMode mode : {AttentionMode::kJoint, AttentionMode::kSpaceTime}) {
    Rng rng(16);
    auto layer = make_adaptive_layer(kWidth, kHeadDim, mode, rng, 0.0);
    TokenGrid grid{1, 3, 4, true};
    Tensor x = random_tensor({grid.tokens(), 16}, rng);
    CHECK(bit_equal(adaptive_layer_forward(layer, x, 16, grid), x));
  }
}

TEST_CASE("space-time layer at full width matches the straight-line reference") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto layer = random_layer(AttentionMode::kSpaceTime, 300 + seed);
    Rng rng(400 + seed);
    TokenGrid grid{1, 3, 4, true};
    Tensor x = random_tensor({grid.tokens(), kWidth}, rng);
    ref::Mat expected = ref::layer(layer, ref::Mat(x), ref::Grid{3, 4});
    CHECK(bit_equal(adaptive_layer_forward(layer, x, kWidth, grid).data(), expected.v));
  }
}

TEST_CASE("single-frame space-time layer: space step is dense attention, time step pairs each token with cls") {
  auto layer = random_layer(AttentionMode::kSpaceTime, 17);
  Rng rng(18);
  const std::size_t n = 4, d = 16;
  TokenGrid grid{1, 1, n, true};
  Tensor x = random_tensor({grid.tokens(), d}, rng);
  Tensor got = adaptive_layer_forward(layer, x, d, grid);

  // Plain-mode run restricted to the one frame for the space step.
  Tensor h = add(x, adaptive_mha(layer.attn, adaptive_layernorm(layer.norm_attn, x, d), d));
  // Time step: cls attends to itself, each patch to {cls, itself}.
  auto pairs = std::make_shared<std::vector<AttentionGroup>>();
  pairs->push_back({{0}, {0}});
  for (std::size_t i = 1; i <= n; ++i) pairs->push_back({{i}, {0, i}});
  h = add(h, adaptive_mha(layer.time_attn, adaptive_layernorm(layer.norm_time, h, d), d, pairs));
  h = add(h, adaptive_ffn(layer.ffn, adaptive_layernorm(layer.norm_ffn, h, d), d));
  CHECK(bit_equal(got, h));
}

TEST_CASE("layer rejects grids inconsistent with the token count") {
  auto layer = random_layer(AttentionMode::kSpaceTime, 19);
  CHECK_THROWS_AS(adaptive_layer_forward(layer, Tensor(Shape{12, kWidth}), kWidth, TokenGrid{1, 3, 4, true}),
                  InvalidArgument);
}

TEST_CASE("sub-model oracle for every block at every allowed width") {
  for (AttentionMode mode : {AttentionMode::kJoint, AttentionMode::kSpaceTime}) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      auto layer = random_layer(mode, 500 + seed);
      for (std::size_t d : kAllowed) {
        CAPTURE(d);
        Rng rng(600 + seed * 7 + d);
        TokenGrid grid{2, 2, 3, true};
        Tensor x = random_tensor({grid.tokens(), d}, rng);
        auto small = ref::materialize(layer, d);
        CHECK(bit_equal(adaptive_layer_forward(layer, x, d, grid), adaptive_layer_forward(small, x, d, grid)));
        CHECK(bit_equal(adaptive_layernorm(layer.norm_attn, x, d), adaptive_layernorm(small.norm_attn, x, d)));
        CHECK(bit_equal(adaptive_linear(layer.ffn.fc1, x, 4 * d, d),
                        adaptive_linear(small.ffn.fc1, x, 4 * d, d)));
      }
    }
  }
}

TEST_CASE("gradient locality: nothing outside the sliced block receives gradient") {
  for (AttentionMode mode : {AttentionMode::kJoint, AttentionMode::kSpaceTime}) {
    auto layer = random_layer(mode, 21);
    const std::size_t d = kWidth / 4;
    Rng rng(22);
    TokenGrid grid{1, 2, 3, true};
    Tensor x = random_tensor({grid.tokens(), d}, rng);
    Tensor c = random_tensor({grid.tokens(), d}, rng, 1.0, false);
    backward(sum(mul(adaptive_layer_forward(layer, x, d, grid), c)));
    std::size_t nonzero_inside = 0;
    for (const auto& [name, t] : params_of(layer)) {
      CAPTURE(name);
      auto g = dense_grad(t);
      // active block: rows/cols scale with 4d for the FFN hidden side
      std::size_t rows_active = d, cols_active = d;
      if (name.find("fc1.weight") != std::string::npos || name.find("fc1.bias") != std::string::npos) rows_active = 4 * d;
      if (name.find("fc2.weight") != std::string::npos) cols_active = 4 * d;
      const std::size_t cols = t.dim() == 2 ? t.cols() : 1;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t r = t.dim() == 2 ? i / cols : i;
        const std::size_t col = t.dim() == 2 ? i % cols : 0;
        const bool inside = r < rows_active && (t.dim() == 1 || col < cols_active);
        if (!inside) CHECK(g[i] == 0.0);
        if (inside && g[i] != 0.0) ++nonzero_inside;
      }
    }
    CHECK(nonzero_inside > 0);
  }
}

TEST_CASE("masked-pad equivalence holds for linear and FFN") {
  auto layer = random_layer(AttentionMode::kJoint, 23);
  const std::size_t d = 16;
  Rng rng(24);
  Tensor x = random_tensor({3, d}, rng);

  // Full-width FFN whose weights outside the active block are zero.
  AdaptiveFfn masked{ref::materialize(layer.ffn.fc1, 4 * kWidth, kWidth), ref::materialize(layer.ffn.fc2, kWidth, 4 * kWidth)};
  auto zero_outside = [](Tensor t, std::size_t rows, std::size_t cols) {
    const std::size_t full_cols = t.dim() == 2 ? t.cols() : 1;
    auto v = t.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::size_t r = t.dim() == 2 ? i / full_cols : i;
      const std::size_t c = t.dim() == 2 ? i % full_cols : 0;
      if (r >= rows || (t.dim() == 2 && c >= cols)) v[i] = 0.0;
    }
  };
  zero_outside(masked.fc1.weight, 4 * d, d);
  zero_outside(masked.fc1.bias, 4 * d, 0);
  zero_outside(masked.fc2.weight, d, 4 * d);
  zero_outside(masked.fc2.bias, d, 0);

  Tensor narrow = adaptive_ffn(layer.ffn, x, d);
  Tensor wide = adaptive_ffn(masked, resize_cols(x, kWidth), kWidth);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < kWidth; ++c) {
      if (c < d) CHECK(wide.at(r, c) == doctest::Approx(narrow.at(r, c)).epsilon(1e-13));
      else CHECK(wide.at(r, c) == 0.0);
    }

  Tensor narrow_lin = adaptive_linear(layer.attn.q, x, d, d);
  AdaptiveLinear masked_q = ref::materialize(layer.attn.q, kWidth, kWidth);
  zero_outside(masked_q.weight, d, d);
  zero_outside(masked_q.bias, d, 0);
  Tensor wide_lin = adaptive_linear(masked_q, resize_cols(x, kWidth), kWidth, kWidth);
  CHECK(bit_equal(slice(wide_lin, 3, d), narrow_lin));
}

TEST_CASE("head-count law: width d runs d/H heads with normalized probabilities") {
  auto layer = random_layer(AttentionMode::kJoint, 25);
  Rng rng(26);
  for (std::size_t d : kAllowed) {
    Tensor x = random_tensor({6, d}, rng);
    FlopCounter counter;
    {
      FlopScope scope(&counter);
      adaptive_mha(layer.attn, x, d);
    }
    // scores: (d/H heads) * 2 * K * K * H
    CHECK(counter.by_tag().at("scores") == (d / kHeadDim) * 2 * 6 * 6 * kHeadDim);
    Tensor q = adaptive_linear(layer.attn.q, x, d, d);
    Tensor k = adaptive_linear(layer.attn.k, x, d, d);
    AttentionGroup all{{0, 1, 2, 3, 4, 5}, {0, 1, 2, 3, 4, 5}};
    for (std::size_t h = 0; h < d / kHeadDim; ++h) {
      auto p = attention_probabilities(q, k, all, h, kHeadDim);
      for (std::size_t r = 0; r < 6; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 6; ++c) total += p[r * 6 + c];
        CHECK(std::abs(total - 1.0) <= 1e-12);
      }
    }
    CHECK_THROWS_AS(attention_probabilities(q, k, all, d / kHeadDim, kHeadDim), InvalidArgument);
  }
}

TEST_CASE("full adaptive layer at quarter width passes grad_check") {
  auto layer = random_layer(AttentionMode::kSpaceTime, 27, 16);
  const std::size_t d = 8;
  Rng rng(28);
  TokenGrid grid{1, 2, 2, true};
  Tensor x = random_tensor({grid.tokens(), d}, rng);
  Tensor c = random_tensor({grid.tokens(), d}, rng, 1.0, false);
  auto loss = [&] { return sum(mul(adaptive_layer_forward(layer, x, d, grid), c)); };
  // Key biases shift every score of a query equally, so their exact gradient
  // is zero and central differences only see rounding noise: check those
  // against an absolute bound, everything else with the relative criterion.
  std::vector<Tensor> params{x}, key_biases;
  for (auto& [name, t] : params_of(layer)) (name.ends_with(".k.bias") ? key_biases : params).push_back(t);
  auto r = grad_check(loss, params, 1e-5);
  CHECK(r.max_relative_error < 1e-4);
  for (Tensor& kb : key_biases) {
    for (double g : dense_grad(kb)) CHECK(std::abs(g) < 1e-14);
    NoGradGuard guard;
    for (double g : numeric_gradient([&] { return loss().item(); }, kb, 1e-5)) CHECK(std::abs(g) < 1e-8);
  }
}
