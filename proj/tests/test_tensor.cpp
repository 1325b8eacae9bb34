#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "skipxl/errors.hpp"
#include "skipxl/gradcheck.hpp"
#include "skipxl/ops.hpp"
#include "skipxl/rng.hpp"
#include "skipxl/tensor.hpp"
#include "test_util.hpp"

using namespace skipxl;
using testutil::max_rel_diff;
using testutil::numeric_grad;
using testutil::random_tensor;
using testutil::to_vec;

namespace {

// Weighted sum gives every output entry a distinct adjoint.
Tensor probe(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

// Checks d probe(op(inputs)) / d input against independent central differences.
void check_op_grad(const std::function<Tensor(const std::vector<Tensor>&)>& op,
                   std::vector<Tensor> inputs, Rng& rng, double tol = 1e-7) {
  const Tensor sample = op(inputs);
  const Tensor w = random_tensor(sample.shape(), rng, 1.0, false);
  for (auto& t : inputs) t.zero_grad();
  probe(op(inputs), w).backward();
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    const auto analytic = t.grad_or_zero();
    const auto numeric = numeric_grad(
        [&] {
          NoGradGuard g;
          return probe(op(inputs), w).item();
        },
        t);
    CHECK(max_rel_diff(analytic, numeric) < tol);
  }
}

}  // namespace

TEST_CASE("tensor shape invariants") {
  const Tensor t = Tensor::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.values().size() == 6);
  CHECK(t.rank() == 2);
  CHECK(shape_str(t.shape()) == "[2x3]");
  CHECK_THROWS_AS(Tensor::from_values({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  CHECK_THROWS_AS(t.dim(2), DimensionError);
  CHECK_THROWS_AS(t.item(), UsageError);
  CHECK(Tensor::scalar(4.5).item() == 4.5);
}

TEST_CASE("tensor copies alias, clone does not") {
  Tensor a = Tensor::from_values({2}, {1.0, 2.0});
  Tensor b = a;
  b.mutable_values()[0] = 7.0;
  CHECK(a.at(0) == 7.0);
  Tensor c = a.clone();
  c.mutable_values()[1] = -1.0;
  CHECK(a.at(1) == 2.0);
  CHECK_FALSE(c.same_object(a));
}

TEST_CASE("matmul identity cases") {
  const Tensor i2 = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  CHECK(to_vec(matmul(i2, i2).values()) == std::vector<double>{1, 0, 0, 1});
  const Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  CHECK(to_vec(matmul(a, i2).values()) == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("matmul against triple loop") {
  Rng rng(11);
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({4, 2}, rng);
  const Tensor c = matmul(a, b);
  REQUIRE(c.shape() == Shape{3, 2});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      long double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) acc += (long double)a.at(i, k) * b.at(k, j);
      CHECK(c.at(i, j) == doctest::Approx((double)acc).epsilon(1e-14));
    }
  const Tensor bt = transpose(b);
  const Tensor c2 = matmul_nt(a, bt);
  for (std::size_t i = 0; i < 6; ++i) CHECK(c2.at(i) == doctest::Approx(c.at(i)).epsilon(1e-14));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  const Tensor z = softmax(Tensor::from_values({1, 3}, {0, 0, 0}), 1);
  for (double v : z.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Tensor big = softmax(Tensor::from_values({1, 2}, {1000, 1000}), 1);
  CHECK(big.at(0) == 0.5);
  CHECK(big.at(1) == 0.5);

  const Tensor s = softmax(Tensor::from_values({1, 3}, {1, 2, 3}), 1);
  long double e1 = expl(1.0L), e2 = expl(2.0L), e3 = expl(3.0L), tot = e1 + e2 + e3;
  CHECK(std::abs(s.at(0) - (double)(e1 / tot)) < 1e-15);
  CHECK(std::abs(s.at(1) - (double)(e2 / tot)) < 1e-15);
  CHECK(std::abs(s.at(2) - (double)(e3 / tot)) < 1e-15);
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  Rng rng(3);
  const Tensor x = random_tensor({5, 7}, rng, 10.0, false);
  const Tensor s = softmax(x, 1);
  std::vector<double> shifted(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 7; ++j) shifted[i * 7 + j] += 3.25 * double(i + 1);
  const Tensor s2 = softmax(Tensor::from_values({5, 7}, shifted), 1);
  for (std::size_t i = 0; i < 5; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      CHECK(s.at(i, j) > 0.0);
      row += s.at(i, j);
      CHECK(s2.at(i, j) == doctest::Approx(s.at(i, j)).epsilon(1e-12));
    }
    CHECK(std::abs(row - 1.0) < 1e-9);
  }
  // axis 0
  const Tensor c = softmax(x, 0);
  for (std::size_t j = 0; j < 7; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < 5; ++i) col += c.at(i, j);
    CHECK(std::abs(col - 1.0) < 1e-9);
  }
}

TEST_CASE("softmax masked entries") {
  const double ninf = -std::numeric_limits<double>::infinity();
  const Tensor s = softmax(Tensor::from_values({1, 3}, {0.5, ninf, 0.5}), 1);
  CHECK(s.at(1) == 0.0);
  CHECK(s.at(0) == 0.5);
  CHECK_THROWS_AS(softmax(Tensor::from_values({1, 2}, {ninf, ninf}), 1), InternalError);
  // NaN propagates instead of looking masked
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const Tensor pn = softmax(Tensor::from_values({1, 3}, {ninf, nan, 0.0}), 1);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::isnan(pn.at(i)));
}

TEST_CASE("layer_norm examples") {
  const Tensor g = Tensor::full({4}, 1.0);
  const Tensor b = Tensor::zeros({4});
  const Tensor c = layer_norm(Tensor::full({1, 4}, 3.0), g, b);
  for (double v : c.values()) CHECK(v == 0.0);

  // Row with mean 0 and biased variance 1.
  const Tensor n = Tensor::from_values({1, 4}, {1, -1, 1, -1});
  const Tensor out = layer_norm(n, g, b);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(out.at(i) - n.at(i)) < 1e-5 * 1.0 + 1e-6);

  Rng rng(5);
  const Tensor x = random_tensor({3, 16}, rng, 4.0, false);
  const Tensor y = layer_norm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}));
  for (std::size_t i = 0; i < 3; ++i) {
    long double mean = 0, var = 0;
    for (std::size_t j = 0; j < 16; ++j) mean += y.at(i, j);
    mean /= 16;
    for (std::size_t j = 0; j < 16; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
    var /= 16;
    CHECK(std::abs((double)mean) < 1e-6);
    CHECK(std::abs((double)var - 1.0) < 1e-4);  // eps = 1e-5 shrinks the variance slightly
  }
}

TEST_CASE("layer_norm direct formula") {
  Rng rng(6);
  const Tensor x = random_tensor({2, 6}, rng, 2.0, false);
  const Tensor g = random_tensor({6}, rng, 1.0, false);
  const Tensor b = random_tensor({6}, rng, 1.0, false);
  const Tensor y = layer_norm(x, g, b, 1e-5);
  for (std::size_t i = 0; i < 2; ++i) {
    long double mean = 0, var = 0;
    for (std::size_t j = 0; j < 6; ++j) mean += x.at(i, j);
    mean /= 6;
    for (std::size_t j = 0; j < 6; ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
    var /= 6;
    for (std::size_t j = 0; j < 6; ++j) {
      const long double expect = (x.at(i, j) - mean) / sqrtl(var + 1e-5L) * g.at(j) + b.at(j);
      CHECK(std::abs(y.at(i, j) - (double)expect) < 1e-13);
    }
  }
}

TEST_CASE("cross_entropy examples") {
  const std::vector<std::int64_t> t3 = {3};
  CHECK(cross_entropy(Tensor::zeros({1, 10}), t3).item() == doctest::Approx(std::log(10.0)).epsilon(1e-15));
  CHECK(std::abs(cross_entropy(Tensor::zeros({1, 10}), t3).item() - 2.302585) < 1e-6);

  std::vector<double> l(10, 0.0);
  l[3] = 100.0;
  CHECK(cross_entropy(Tensor::from_values({1, 10}, l), t3).item() < 1e-40);

  Rng rng(9);
  const Tensor logits = random_tensor({4, 6}, rng, 3.0, false);
  const std::vector<std::int64_t> targets = {0, 5, 2, 2};
  long double total = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    long double z = 0;
    for (std::size_t j = 0; j < 6; ++j) z += expl(logits.at(i, j));
    total += -(logits.at(i, targets[i]) - logl(z));
  }
  CHECK(std::abs(cross_entropy(logits, targets).item() - (double)(total / 4)) < 1e-14);

  const std::vector<std::int64_t> bad = {6, 0, 0, 0};
  CHECK_THROWS_AS(cross_entropy(logits, bad), InputError);
  const std::vector<std::int64_t> neg = {-1, 0, 0, 0};
  CHECK_THROWS_AS(cross_entropy(logits, neg), InputError);
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::from_values({3}, {1, 2, 3}, true);
  sum(x).backward();
  CHECK(to_vec(x.grad()) == std::vector<double>{1, 1, 1});

  Tensor s = Tensor::scalar(3.0, true);
  mul(s, s).backward();
  CHECK(s.grad()[0] == 6.0);

  Tensor m = Tensor::zeros({2}, true);
  CHECK_THROWS_AS(scale(m, 2.0).backward(), UsageError);
}

TEST_CASE("backward twice on one graph is rejected") {
  Tensor x = Tensor::from_values({2}, {1, 2}, true);
  Tensor loss = sum(mul(x, x));
  loss.backward();
  const auto first = x.grad_or_zero();
  CHECK_THROWS_AS(loss.backward(), UsageError);
  CHECK(x.grad_or_zero() == first);
}

TEST_CASE("backward visits shared subgraphs once") {
  Tensor x = Tensor::from_values({2}, {1.5, -2.0}, true);
  Tensor y = mul(x, x);         // used twice below
  Tensor loss = sum(add(y, y));  // d/dx = 4x
  loss.backward();
  CHECK(x.grad()[0] == 6.0);
  CHECK(x.grad()[1] == -8.0);
}

TEST_CASE("no grad mode records nothing") {
  Tensor x = Tensor::from_values({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard g;
    CHECK_FALSE(grad_enabled());
    y = mul(x, x);
  }
  CHECK(grad_enabled());
  CHECK(y.is_leaf());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("stop-gradient probe gets exactly zero") {
  Tensor probe_v = Tensor::from_values({2, 2}, {1, 2, 3, 4}, true);
  Tensor w = Tensor::from_values({2, 2}, {0.5, -1, 2, 0.25}, true);
  Tensor behind = matmul(probe_v, w);
  Tensor cut = detach(behind);
  CHECK(cut.is_stop_gradient());
  Tensor fresh = Tensor::from_values({2, 2}, {1, 1, 1, 1}, true);
  Tensor loss = sum(mul(concat_rows(cut, fresh), concat_rows(fresh, fresh)));
  loss.backward();
  CHECK(probe_v.grad_or_zero() == std::vector<double>(4, 0.0));
  CHECK(w.grad_or_zero() == std::vector<double>(4, 0.0));
  CHECK_FALSE(cut.has_grad());
  CHECK(fresh.has_grad());
  CHECK_THROWS_AS(cut.set_requires_grad(true), UsageError);
}

TEST_CASE("dropout") {
  Rng rng(1);
  const Tensor x = Tensor::full({1000}, 2.0);
  CHECK(to_vec(dropout(x, 0.0, rng, true).values()) == to_vec(x.values()));
  CHECK(to_vec(dropout(x, 0.7, rng, false).values()) == to_vec(x.values()));
  CHECK_THROWS_AS(dropout(x, 1.0, rng, true), InputError);
  CHECK_THROWS_AS(dropout(x, -0.1, rng, true), InputError);

  const Tensor big = Tensor::full({1000000}, 1.0);
  const Tensor d = dropout(big, 0.5, rng, true);
  std::size_t zeros = 0, unscaled = 0;
  for (double v : d.values()) {
    if (v == 0.0)
      ++zeros;
    else if (v != 2.0)
      ++unscaled;
  }
  CHECK(unscaled == 0);
  CHECK(std::abs(double(zeros) / 1e6 - 0.5) < 0.003);
}

TEST_CASE("primitive gradients match central differences") {
  Rng rng(21);
  SUBCASE("matmul") {
    check_op_grad([](auto& in) { return matmul(in[0], in[1]); },
                  {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}, rng);
  }
  SUBCASE("matmul_nt") {
    check_op_grad([](auto& in) { return matmul_nt(in[0], in[1]); },
                  {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)}, rng);
  }
  SUBCASE("transpose") {
    check_op_grad([](auto& in) { return transpose(in[0]); }, {random_tensor({3, 2}, rng)}, rng);
  }
  SUBCASE("add sub mul scale") {
    check_op_grad([](auto& in) { return scale(mul(sub(add(in[0], in[1]), in[1]), in[1]), -1.5); },
                  {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}, rng);
  }
  SUBCASE("add_row") {
    check_op_grad([](auto& in) { return add_row(in[0], in[1]); },
                  {random_tensor({3, 4}, rng), random_tensor({4}, rng)}, rng);
  }
  SUBCASE("relu") {
    check_op_grad([](auto& in) { return relu(in[0]); }, {random_tensor({4, 5}, rng)}, rng);
  }
  SUBCASE("gelu") {
    check_op_grad([](auto& in) { return gelu(in[0]); }, {random_tensor({4, 5}, rng, 3.0)}, rng);
  }
  SUBCASE("softmax rows") {
    check_op_grad([](auto& in) { return softmax(in[0], 1); }, {random_tensor({3, 5}, rng, 2.0)}, rng);
  }
  SUBCASE("softmax cols") {
    check_op_grad([](auto& in) { return softmax(in[0], 0); }, {random_tensor({3, 5}, rng, 2.0)}, rng);
  }
  SUBCASE("layer_norm") {
    check_op_grad([](auto& in) { return layer_norm(in[0], in[1], in[2]); },
                  {random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)}, rng);
  }
  SUBCASE("cross_entropy") {
    const std::vector<std::int64_t> t = {1, 0, 3};
    check_op_grad([&](auto& in) { return cross_entropy(in[0], t); },
                  {random_tensor({3, 4}, rng, 2.0)}, rng);
  }
  SUBCASE("embedding with repeated ids") {
    const std::vector<std::int64_t> ids = {2, 0, 2, 1};
    check_op_grad([&](auto& in) { return embedding(in[0], ids); }, {random_tensor({3, 5}, rng)}, rng);
  }
  SUBCASE("concat and slice") {
    check_op_grad(
        [](auto& in) {
          Tensor r = concat_rows(in[0], in[1]);
          return slice_cols(concat_cols({r, in[2]}), 1, 4);
        },
        {random_tensor({2, 3}, rng), random_tensor({1, 3}, rng), random_tensor({3, 2}, rng)}, rng);
  }
  SUBCASE("gather_cols") {
    const std::vector<std::int64_t> idx = {0, 3, -1, 2, 2, 1};
    check_op_grad([&](auto& in) { return gather_cols(in[0], idx, 3); }, {random_tensor({2, 4}, rng)},
                  rng);
  }
  SUBCASE("mask_fill then softmax") {
    const std::vector<bool> keep = {true, false, true, true, true, false};
    check_op_grad([&](auto& in) { return softmax(mask_fill_neg_inf(in[0], keep), 1); },
                  {random_tensor({2, 3}, rng)}, rng);
  }
}

TEST_CASE("embedding lookup") {
  const Tensor table = Tensor::from_values({3, 2}, {0, 1, 10, 11, 20, 21});
  const std::vector<std::int64_t> ids = {2, 0};
  CHECK(to_vec(embedding(table, ids).values()) == std::vector<double>{20, 21, 0, 1});
  const std::vector<std::int64_t> bad = {3};
  CHECK_THROWS_AS(embedding(table, bad), InputError);
}

TEST_CASE("gather_cols masked index yields zero") {
  const Tensor src = Tensor::from_values({1, 2}, {5, 6});
  const std::vector<std::int64_t> idx = {1, -1, 0};
  CHECK(to_vec(gather_cols(src, idx, 3).values()) == std::vector<double>{6, 0, 5});
}

TEST_CASE("finite_diff_check polynomial and linear") {
  Tensor a = Tensor::from_values({3, 3}, {2, 1, 0, 1, 3, 1, 0, 1, 4}, false);
  // xᵀ A x
  Tensor xm = Tensor::from_values({3, 1}, {0.5, -1.0, 2.0}, true);
  auto f = [&] { return sum(mul(matmul(a, xm), xm)); };
  const GradCheckReport r = finite_diff_check(f, {{"x", xm}});
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-10);

  Tensor w = Tensor::from_values({4}, {1, -2, 3, 0.5}, true);
  Tensor c = Tensor::from_values({4}, {0.25, 4, -1, 2});
  auto lin = [&] { return sum(mul(w, c)); };
  const GradCheckReport rl = finite_diff_check(lin, {{"w", w}});
  CHECK(rl.max_rel_error < 1e-10);
  const auto* e = rl.find("w");
  REQUIRE(e != nullptr);
  CHECK(e->max_abs_analytic == 4.0);
}

TEST_CASE("finite_diff_check aborts on nondeterminism") {
  Tensor w = Tensor::from_values({2}, {1, 2}, true);
  Rng rng(4);
  auto noisy = [&] { return scale(sum(w), 1.0 + rng.uniform()); };
  CHECK_THROWS_AS(finite_diff_check(noisy, {{"w", w}}), RunAborted);
}
