#include "doctest.h"
#include "graph.hpp"
#include "helpers.hpp"
#include "rng.hpp"

using namespace ckfr;

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("evaluate identity and relu") {
  Graph g;
  const int x = g.input("x", {3});
  const int r = g.relu(x);
  g.mark_output("x", x);
  g.mark_output("r", r);
  const Values vals = evaluate(g, {{"x", Tensor({3}, {-1, 0, 2})}});
  CHECK(vals.output("x").values() == std::vector<double>{-1, 0, 2});
  CHECK(vals.output("r").values() == std::vector<double>{0, 0, 2});
}

TEST_CASE("conv2d window sums on a ramp") {
  Graph g;
  const int x = g.input("x", {1, 1, 3, 3});
  const int w = g.input("w", {1, 1, 2, 2});
  const int c = g.conv2d(x, w);
  g.mark_output("c", c);
  const Values vals = evaluate(g, {{"x", Tensor({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9})},
                                   {"w", Tensor({1, 1, 2, 2}, {1, 1, 1, 1})}});
  // 2x2 sliding window sums of the ramp.
  CHECK(vals.output("c").values() == std::vector<double>{12, 16, 24, 28});
}

TEST_CASE("conv2d output extents across sizes and paddings") {
  Pcg32 rng(11, 0);
  for (int trial = 0; trial < 40; ++trial) {
    const int h = 1 + static_cast<int>(rng.next_below(6));
    const int w = 1 + static_cast<int>(rng.next_below(6));
    const int kh = 1 + static_cast<int>(rng.next_below(static_cast<uint32_t>(h)));
    const int kw = 1 + static_cast<int>(rng.next_below(static_cast<uint32_t>(w)));
    const int pad = static_cast<int>(rng.next_below(3));
    Graph g;
    const int x = g.input("x", {1, 2, h, w});
    const int k = g.input("w", {3, 2, kh, kw});
    const int c = g.conv2d(x, k, pad);
    CHECK(g.node(c).shape == std::vector<int64_t>{1, 3, h - kh + 1 + 2 * pad, w - kw + 1 + 2 * pad});
  }
}

TEST_CASE("backward of sum(x*x)") {
  Graph g;
  const int x = g.input("x", {2});
  const int y = g.sum(g.mul(x, x));
  const Values vals = evaluate(g, {{"x", Tensor({2}, {1, 2})}});
  const Gradients grads = backward(g, vals, y);
  CHECK(grads.for_input("x").values() == std::vector<double>{2, 4});
}

TEST_CASE("abs and relu subgradients at zero are zero") {
  Graph g;
  const int x = g.input("x", {3});
  const int y = g.sum(g.abs(x));
  const int r = g.sum(g.relu(g.input("x2", {1})));
  (void)r;
  const Values vals = evaluate(g, {{"x", Tensor({3}, {0, -2, 3})}, {"x2", Tensor({1}, {0})}});
  const Gradients grads = backward(g, vals, y);
  CHECK(grads.for_input("x").values() == std::vector<double>{0, -1, 1});
}

TEST_CASE("matmul chain gradients match finite differences") {
  Pcg32 rng(5, 1);
  Graph g;
  const int a = g.input("a", {3, 3});
  const int b = g.input("b", {3, 3});
  const int c = g.input("c", {3, 3});
  const int y = g.sum(g.matmul(g.matmul(a, b), c));
  Bindings binds;
  for (const char* name : {"a", "b", "c"}) {
    binds[name] = Tensor({3, 3}, testing::random_vector(9, rng));
  }
  const auto report = check_gradient(g, binds, y, 1e-5);
  CHECK(report.max_rel_err <= 1e-6);
  CHECK(report.skipped == 0);
}

TEST_CASE("linear graphs are exact under exact-arithmetic steps") {
  // Integer values and a power-of-two step keep every evaluation exact, so
  // central differences reproduce the gradient to rounding.
  Graph g;
  const int x = g.input("x", {4});
  const int w = g.input("w", {4});
  const int y = g.sum(g.mul(x, w));
  Bindings binds{{"x", Tensor({4}, {1, -2, 3, 5})}, {"w", Tensor({4}, {2, 4, -1, 7})}};
  for (double step : {0.5, 0.25, 2.0}) {
    const auto report = check_gradient(g, binds, y, step);
    CHECK(report.max_rel_err <= 1e-9);
    CHECK(report.max_abs_err <= 1e-9);
  }
}

TEST_CASE("relu kink at exactly zero is excluded from the comparison") {
  Graph g;
  const int x = g.input("x", {2});
  const int y = g.sum(g.relu(x));
  Bindings binds{{"x", Tensor({2}, {0.0, 1.0})}};
  const auto report = check_gradient(g, binds, y, 1e-5);
  CHECK(report.skipped == 1);    // the coordinate sitting on the kink
  CHECK(report.checked == 1);
  CHECK(report.max_rel_err <= 1e-9);
}

namespace {

// One random gradient check for a unary builder.
template <typename Build>
void check_unary(const char* name, std::vector<int64_t> shape, Build&& build, double lo, double hi,
                 int trials, uint64_t seed) {
  Pcg32 rng(seed, 7);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    Graph g;
    const int x = g.input("x", shape);
    const int y = g.sum(build(g, x));
    Bindings binds{{"x", Tensor(shape, testing::random_vector(static_cast<size_t>(shape_product(shape)), rng, lo, hi))}};
    const auto report = check_gradient(g, binds, y, 1e-6);
    worst = std::max(worst, report.max_rel_err);
  }
  INFO(name);
  CHECK(worst <= 1e-5);
}

}  // namespace

TEST_CASE("per-op gradients match finite differences on random inputs") {
  check_unary("relu", {3, 4}, [](Graph& g, int x) { return g.relu(x); }, -2, 2, 25, 101);
  check_unary("abs", {3, 4}, [](Graph& g, int x) { return g.abs(x); }, -2, 2, 25, 102);
  check_unary("scalar_mul", {5}, [](Graph& g, int x) { return g.scalar_mul(x, -1.7); }, -2, 2, 25, 103);
  check_unary("pow2", {6}, [](Graph& g, int x) { return g.pow(g.abs(x), 2.0); }, -2, 2, 25, 104);
  check_unary("pow1.5", {6}, [](Graph& g, int x) { return g.pow(g.abs(x), 1.5); }, 0.3, 2, 25, 105);
  check_unary("mean_axis", {3, 4}, [](Graph& g, int x) { return g.mean(x, {1}); }, -2, 2, 25, 106);
  check_unary("sum_axis", {2, 3, 2}, [](Graph& g, int x) { return g.sum(x, {0, 2}); }, -2, 2, 25, 107);
  check_unary("gap", {2, 3, 4, 4}, [](Graph& g, int x) { return g.global_avg_pool(x); }, -2, 2, 10, 108);
  check_unary("standardize", {2, 5}, [](Graph& g, int x) { return g.standardize(x); }, -2, 2, 100, 109);
  check_unary("reshape", {2, 6}, [](Graph& g, int x) { return g.reshape(x, {3, 4}); }, -2, 2, 5, 110);
  check_unary("slice_row", {3, 4}, [](Graph& g, int x) { return g.slice_row(x, 1); }, -2, 2, 5, 111);

  Pcg32 rng(200, 9);
  double worst = 0.0;
  for (int t = 0; t < 25; ++t) {
    Graph g;
    const int a = g.input("a", {3, 4});
    const int b = g.input("b", {3, 4});
    const int bias = g.input("bias", {4});
    const int mm_a = g.input("ma", {2, 3});
    const int mm_b = g.input("mb", {3, 2});
    const int cx = g.input("cx", {2, 2, 5, 5});
    const int cw = g.input("cw", {3, 2, 3, 3});
    int y = g.sum(g.add(g.mul(a, b), g.sub(a, b)));
    y = g.add(y, g.sum(g.bias_add(a, bias, 1)));
    y = g.add(y, g.sum(g.matmul(mm_a, mm_b)));
    y = g.add(y, g.sum(g.conv2d(cx, cw, 1)));
    Bindings binds;
    binds["a"] = Tensor({3, 4}, testing::random_vector(12, rng));
    binds["b"] = Tensor({3, 4}, testing::random_vector(12, rng));
    binds["bias"] = Tensor({4}, testing::random_vector(4, rng));
    binds["ma"] = Tensor({2, 3}, testing::random_vector(6, rng));
    binds["mb"] = Tensor({3, 2}, testing::random_vector(6, rng));
    binds["cx"] = Tensor({2, 2, 5, 5}, testing::random_vector(100, rng));
    binds["cw"] = Tensor({3, 2, 3, 3}, testing::random_vector(54, rng));
    const auto report = check_gradient(g, binds, y, 1e-6);
    worst = std::max(worst, report.max_rel_err);
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("softmax cross entropy value and gradients") {
  Graph g;
  const int logits = g.input("logits", {2, 3});
  const int onehot = g.input("onehot", {2, 3});
  const int y = g.sum(g.softmax_cross_entropy(logits, onehot));
  Bindings binds{{"logits", Tensor({2, 3}, {1, 1, 1, 5, 0, -1})},
                 {"onehot", Tensor({2, 3}, {1, 0, 0, 0, 1, 0})}};
  const Values vals = evaluate(g, binds);
  CHECK(vals.of(y).item() ==
        doctest::Approx(std::log(3.0) + (std::log(std::exp(0.0) + std::exp(-5.0) + std::exp(-6.0)) + 5.0))
            .epsilon(1e-12));
  const auto report = check_gradient(g, binds, y, 1e-6);
  CHECK(report.max_rel_err <= 1e-6);
}

TEST_CASE("dropout: deterministic mask, inverted scaling, identity when not training") {
  Graph g;
  const int x = g.input("x", {200});
  const int d = g.dropout(x, 0.25, 42);
  g.mark_output("d", d);
  Bindings binds{{"x", Tensor::full({200}, 1.0)}};

  const Values plain = evaluate(g, binds);  // eval mode
  CHECK(plain.output("d").values() == std::vector<double>(200, 1.0));

  EvalOptions opt;
  opt.training = true;
  opt.dropout_seed = 7;
  const Values a = evaluate(g, binds, opt);
  const Values b = evaluate(g, binds, opt);
  CHECK(a.output("d").values() == b.output("d").values());  // purity, bit-identical

  int dropped = 0;
  for (double v : a.output("d").values()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75).epsilon(1e-15)));
    dropped += v == 0.0 ? 1 : 0;
  }
  CHECK(dropped > 20);
  CHECK(dropped < 80);

  EvalOptions opt2 = opt;
  opt2.dropout_seed = 8;
  const Values c = evaluate(g, binds, opt2);
  CHECK(c.output("d").values() != a.output("d").values());

  // Gradient check with the mask held fixed by the seed.
  Graph g2;
  const int x2 = g2.input("x", {50});
  const int y2 = g2.sum(g2.dropout(x2, 0.3, 1));
  Bindings binds2{{"x", Tensor({50}, testing::random_vector(50, Pcg32(3, 3)))}};
  const auto report = check_gradient(g2, binds2, y2, 1e-6, opt);
  CHECK(report.max_rel_err <= 1e-9);
}

TEST_CASE("evaluate is pure: repeated calls are bit-identical") {
  Pcg32 rng(77, 0);
  Graph g;
  const int x = g.input("x", {4, 4});
  const int y = g.standardize(g.relu(g.matmul(x, x)));
  g.mark_output("y", y);
  Bindings binds{{"x", Tensor({4, 4}, testing::random_vector(16, rng))}};
  const Values a = evaluate(g, binds);
  const Values b = evaluate(g, binds);
  CHECK(a.output("y").values() == b.output("y").values());
}

TEST_CASE("errors: unbound input, shape mismatch, non-scalar backward, non-finite") {
  Graph g;
  const int x = g.input("x", {2});
  const int y = g.pow(g.abs(x), 3.0);
  CHECK_THROWS_WITH_AS(evaluate(g, {}), doctest::Contains("unbound input 'x'"), Error);
  CHECK_THROWS_WITH_AS(evaluate(g, {{"x", Tensor({3}, {1, 2, 3})}}), doctest::Contains("shape"),
                       Error);
  const Values vals = evaluate(g, {{"x", Tensor({2}, {1, 2})}});
  CHECK_THROWS_WITH_AS(backward(g, vals, y), doctest::Contains("scalar"), Error);

  Graph g2;
  const int a = g2.input("a", {1});
  int acc = g2.pow(g2.abs(a), 4.0);
  for (int i = 0; i < 6; ++i) acc = g2.mul(acc, acc);
  CHECK_THROWS_WITH_AS(evaluate(g2, {{"a", Tensor({1}, {1e300})}}),
                       doctest::Contains("non-finite value produced by node"), Error);

  Graph g3;
  const int b = g3.input("b", {2});
  const int p = g3.pow(b, 1.5);
  (void)p;
  CHECK_THROWS_WITH_AS(evaluate(g3, {{"b", Tensor({2}, {-1, 1})}}), doctest::Contains("pow"),
                       Error);
}

TEST_CASE("pcg32 reference stream") {
  // First outputs of the PCG32 demo seeding (seed 42, stream 54).
  Pcg32 rng(42, 54);
  const uint32_t expected[] = {0xa15c02b7u, 0x7b47f409u, 0xba1d3330u, 0x83d2f293u, 0xbfa4784bu,
                               0xcbed606eu};
  for (uint32_t e : expected) CHECK(rng.next_u32() == e);
}

TEST_SUITE_END();
