#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "adavid/error.hpp"
#include "adavid/flop_counter.hpp"
#include "adavid/rng.hpp"
#include "adavid/tensor.hpp"
#include "test_support.hpp"

using namespace adavid;
using namespace adavid::testing;

TEST_CASE("matmul hand examples") {
  Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  CHECK(bit_equal(matmul(a, eye), a));
  Tensor c = matmul(a, Tensor::matrix({{5}, {6}}));
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.at(0) == 17.0);
  CHECK(c.at(1) == 39.0);
}

TEST_CASE("matmul registers 2*M*K*P FLOPs") {
  Rng rng(1);
  FlopCounter counter;
  {
    FlopScope scope(&counter);
    matmul(random_tensor({2, 3}, rng), random_tensor({3, 4}, rng));
  }
  CHECK(counter.matmul_total() == 48);
  // Outside the scope nothing is counted.
  matmul(random_tensor({2, 3}, rng), random_tensor({3, 4}, rng));
  CHECK(counter.matmul_total() == 48);
}

TEST_CASE("matmul rejects mismatched inner extents") {
  CHECK_THROWS_AS(matmul(Tensor(Shape{2, 3}), Tensor(Shape{2, 3})), InvalidArgument);
}

TEST_CASE("linear at full size equals x W^T + b") {
  Tensor w = Tensor::matrix({{1, 2}, {3, 4}});
  Tensor b = Tensor::vector({0.5, -0.5});
  Tensor y = linear(Tensor::matrix({{1, 1}}), w, b);
  CHECK(y.at(0) == 3.5);
  CHECK(y.at(1) == 6.5);
}

TEST_CASE("softmax examples") {
  Tensor s = softmax_lastdim(Tensor::vector({0, 0}));
  CHECK(s.at(0) == 0.5);
  CHECK(s.at(1) == 0.5);
  s = softmax_lastdim(Tensor::vector({1000, 1000}));
  CHECK(s.at(0) == 0.5);
  s = softmax_lastdim(Tensor::vector({0, std::log(3.0)}));
  CHECK(s.at(0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(s.at(1) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK_THROWS_AS(softmax_lastdim(Tensor::vector({0, std::nan("")})), InvalidArgument);
  CHECK_THROWS_AS(softmax_lastdim(Tensor::vector({0, INFINITY})), InvalidArgument);
}

TEST_CASE("softmax rows sum to one for wide-ranged inputs") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({5, 1 + rng.below(20)}, rng, std::pow(10.0, rng.uniform() * 6.0 - 2.0), false);
    Tensor s = softmax_lastdim(x);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) {
        CHECK(s.at(r, c) >= 0.0);
        total += s.at(r, c);
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("gelu uses the exact erf form") {
  Tensor g = gelu(Tensor::vector({0.0, 10.0, -10.0, 1.0}));
  CHECK(g.at(0) == 0.0);
  CHECK(std::abs(g.at(1) - 10.0) < 1e-9);
  CHECK(std::abs(g.at(2)) < 1e-9);
  // tanh approximation gives 0.841192; exact is 0.841344746...
  CHECK(g.at(3) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
}

TEST_CASE("backward: quadratic and independent parameters") {
  Tensor w(Shape{3}, {1, 2, 3}, true);
  backward(sum(mul(w, w)));
  REQUIRE(w.has_grad());
  CHECK(dense_grad(w) == std::vector<double>{2, 4, 6});

  Tensor other(Shape{3}, {1, 1, 1}, true);
  Tensor u(Shape{3}, {4, 5, 6}, true);
  backward(sum(mul(u, u)));
  CHECK(dense_grad(other) == std::vector<double>{0, 0, 0});
}

TEST_CASE("backward accumulates across calls and rejects non-scalars") {
  Tensor w(Shape{3}, {1, 2, 3}, true);
  backward(sum(mul(w, w)));
  backward(sum(mul(w, w)));
  CHECK(dense_grad(w) == std::vector<double>{4, 8, 12});
  w.zero_grad();
  CHECK_FALSE(w.has_grad());
  CHECK_THROWS_AS(backward(mul(w, w)), InvalidArgument);
}

TEST_CASE("chained matmul + softmax + sum matches central differences") {
  Rng rng(11);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 5}, rng);
  Tensor c = random_tensor({3, 5}, rng, 1.0, false);
  auto loss = [&] { return sum(mul(softmax_lastdim(matmul(a, b)), c)); };
  backward(loss());
  NoGradGuard guard;
  auto f = [&] { return loss().item(); };
  for (Tensor* p : {&a, &b}) {
    auto numeric = numeric_gradient(f, *p, 1e-5);
    CHECK(max_relative_error(dense_grad(*p), numeric) < 1e-6);
  }
}

TEST_CASE("grad_check on w^2 and nondeterminism detection") {
  Tensor w(Shape{1}, {2.0}, true);
  std::vector<Tensor> params{w};
  auto r = grad_check([&] { return sum(mul(w, w)); }, params, 1e-5);
  CHECK(r.max_relative_error < 1e-9);
  CHECK(r.entries_checked == 1);

  int calls = 0;
  CHECK_THROWS_AS(grad_check([&] { return scale(sum(w), 1.0 + 1e-3 * ++calls); }, params, 1e-5), NumericError);
}

TEST_CASE("every differentiable op passes grad_check at 1e-4") {
  Rng rng(3);
  Tensor x = random_tensor({4, 6}, rng);
  Tensor y = random_tensor({4, 6}, rng);
  Tensor w = random_tensor({5, 6}, rng);
  Tensor bias = random_tensor({5}, rng);
  Tensor gamma = random_tensor({6}, rng);
  Tensor beta = random_tensor({6}, rng);
  Tensor weights = random_tensor({4, 6}, rng, 1.0, false);
  Tensor weights5 = random_tensor({4, 5}, rng, 1.0, false);
  std::vector<Tensor> params{x, y, w, bias, gamma, beta};
  auto weighted = [](const Tensor& t, const Tensor& c) { return sum(mul(t, c)); };

  std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
      {"linear", [&] { return weighted(linear(x, w, bias), weights5); }},
      {"add/sub/mul", [&] { return weighted(mul(add(x, y), sub(x, y)), weights); }},
      {"gelu", [&] { return weighted(gelu(x), weights); }},
      {"layer_norm", [&] { return weighted(layer_norm(x, gamma, beta, 1e-5), weights); }},
      {"log_softmax", [&] { return weighted(log_softmax_lastdim(x), weights); }},
      {"l2_normalize", [&] { return weighted(l2_normalize_rows(x), weights); }},
      {"slice/resize", [&] { return sum(mul(resize_cols(slice(x, 3, 4), 6), slice(y, 3, 6))); }},
      {"gather/concat", [&] {
         std::vector<std::size_t> idx{3, 0, 0, 2};
         std::vector<Tensor> parts{gather_rows(x, idx), y};
         return sum(mul(concat_rows(parts), concat_rows(parts)));
       }},
      {"transpose/diag_mean", [&] { return diag_mean(matmul(x, transpose(y))); }},
      {"mean_rows", [&] { return sum(mul(mean_rows(x), mean_rows(y))); }},
  };
  for (auto& [name, f] : cases) {
    CAPTURE(name);
    auto r = grad_check(f, params, 1e-5);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("attention op passes grad_check with overlapping key sets") {
  Rng rng(5);
  Tensor q = random_tensor({6, 8}, rng);
  Tensor k = random_tensor({6, 8}, rng);
  Tensor v = random_tensor({6, 8}, rng);
  Tensor c = random_tensor({6, 8}, rng, 1.0, false);
  auto groups = std::make_shared<std::vector<AttentionGroup>>(
      std::vector<AttentionGroup>{{{0, 1, 2}, {0, 1, 2, 5}}, {{3, 4}, {0, 3, 4}}, {{5}, {5}}});
  std::vector<Tensor> params{q, k, v};
  auto r = grad_check([&] { return sum(mul(attention(q, k, v, groups, 4), c)); }, params, 1e-5);
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("attention rejects duplicated query rows and bad head widths") {
  Tensor t(Shape{3, 4});
  auto dup = std::make_shared<std::vector<AttentionGroup>>(std::vector<AttentionGroup>{{{0}, {0}}, {{0}, {1}}});
  CHECK_THROWS_AS(attention(t, t, t, dup, 2), InvalidArgument);
  auto ok = std::make_shared<std::vector<AttentionGroup>>(std::vector<AttentionGroup>{{{0}, {0}}});
  CHECK_THROWS_AS(attention(t, t, t, ok, 3), InvalidArgument);
}

TEST_CASE("l2 normalization rejects zero vectors") {
  CHECK_THROWS_AS(l2_normalize_rows(Tensor(Shape{1, 4})), NumericError);
}

TEST_CASE("tape is released after backward") {
  Tensor w(Shape{2}, {1, 2}, true);
  Tensor loss = sum(mul(w, w));
  CHECK_FALSE(loss.node()->parents.empty());
  backward(loss);
  CHECK(loss.node()->parents.empty());
}

TEST_CASE("splitmix64 stream") {
  Rng rng(0);
  CHECK(rng.next_u64() == 0xE220A8397B1DCDAFULL);
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  CHECK(derive_seed(42, "schedule") != derive_seed(42, "batch"));
  Rng c(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(c.below(7) < 7);
  }
}

TEST_CASE("no-grad mode records nothing and computes the same values") {
  Rng rng(2);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor with = gelu(matmul(a, a));
  Tensor without;
  {
    NoGradGuard guard;
    without = gelu(matmul(a, a));
  }
  CHECK(with.requires_grad());
  CHECK_FALSE(without.requires_grad());
  CHECK(bit_equal(with, without));
}
