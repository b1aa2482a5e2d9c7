#include <doctest.h>

#include <cmath>

#include "sar/errors.hpp"
#include "sar/gradcheck.hpp"
#include "sar/ops.hpp"
#include "sar/tensor.hpp"

using namespace sar;

TEST_CASE("matmul examples") {
  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor id = Tensor::matrix(2, 2, {1, 0, 0, 1});
  CHECK(ad::matmul(id, a).values() == a.values());
  const Tensor r = ad::matmul(a, Tensor::matrix(2, 1, {1, 1}));
  CHECK(r.shape() == Shape{2, 1});
  CHECK(r.values() == std::vector<double>{3, 7});
  const Tensor z = ad::matmul(Tensor::zeros({2, 2}), a);
  CHECK(z.values() == std::vector<double>{0, 0, 0, 0});
  CHECK_THROWS_AS(ad::matmul(a, Tensor::matrix(3, 1, {1, 1, 1})), DimensionError);
}

TEST_CASE("softmax examples") {
  auto s = ad::softmax(Tensor::vector({0.5, 0.5}), 1.0);
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(0.5));
  s = ad::softmax(Tensor::vector({1.0, 0.0}), 1.0);
  CHECK(s[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(s[1] == doctest::Approx(0.2689).epsilon(1e-4));
  s = ad::softmax(Tensor::vector({1.0, 0.0}), 0.01);
  CHECK(s[0] == 1.0);
  CHECK(s[1] < 1e-40);
  CHECK_THROWS_AS(ad::softmax(Tensor::vector({1.0}), 0.0), ParameterError);
  CHECK_THROWS_AS(ad::softmax(Tensor::vector({1.0}), -1.0), ParameterError);
}

TEST_CASE("softmax is stable for large logits") {
  const auto s = ad::softmax(Tensor::vector({1000.0, 999.0}), 1.0);
  CHECK(std::isfinite(s[0]));
  CHECK(s[0] + s[1] == doctest::Approx(1.0));
}

TEST_CASE("cosine examples") {
  const Tensor x = Tensor::vector({0.3, -1.2, 2.0});
  CHECK(ad::cosine(x, x).item() == doctest::Approx(1.0));
  CHECK(ad::cosine(Tensor::vector({1, 0}), Tensor::vector({0, 1})).item() == doctest::Approx(0.0));
  CHECK(ad::cosine(Tensor::vector({1, 1}), Tensor::vector({1, 0})).item() == doctest::Approx(0.7071).epsilon(1e-4));
  CHECK_THROWS_AS(ad::cosine(Tensor::vector({0, 0}), Tensor::vector({1, 0})), NumericError);
}

TEST_CASE("backward examples") {
  Tape tape;
  const Tensor v = tape.leaf(Tensor::vector({1, 2, 3}));
  const auto g = tape.backward(ad::sum(v)).of(v);
  CHECK(g.values() == std::vector<double>{1, 1, 1});

  Tape t2;
  const Tensor w = t2.leaf(Tensor::vector({1, 0}));
  const auto gw = t2.backward(ad::cosine(w, Tensor::vector({0, 1}))).of(w);
  CHECK(gw[0] == doctest::Approx(0.0));
  CHECK(gw[1] == doctest::Approx(1.0));
}

TEST_CASE("tape rules") {
  Tape tape;
  const Tensor v = tape.leaf(Tensor::vector({1, 2}));
  const Tensor loss = ad::sum(ad::mul(v, v));
  CHECK_THROWS_AS(tape.backward(v), DimensionError);
  tape.backward(loss);
  CHECK_THROWS(tape.backward(loss));
  Tape other;
  const Tensor u = other.leaf(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(ad::add(v, u), DimensionError);
}

TEST_CASE("unreached leaf gets zero gradient") {
  Tape tape;
  const Tensor a = tape.leaf(Tensor::vector({1, 2}));
  const Tensor b = tape.leaf(Tensor::vector({3, 4}));
  const auto g = tape.backward(ad::sum(a)).of(b);
  CHECK(g.values() == std::vector<double>{0, 0});
}

TEST_CASE("gradients accumulate over shared subexpressions") {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({2.0}));
  const Tensor y = ad::mul(x, x);
  const auto g = tape.backward(ad::sum(ad::add(y, x))).of(x);
  CHECK(g[0] == doctest::Approx(5.0));
}

TEST_CASE("log is clamped at the floor") {
  const auto l = ad::log(Tensor::vector({0.0, 1.0}));
  CHECK(l[0] == doctest::Approx(std::log(ad::kLogFloor)));
  CHECK(l[1] == 0.0);
}

TEST_CASE("default gradcheck cases all pass") {
  const auto results = run_gradcheck(default_gradcheck_cases(7));
  for (const auto& r : results) {
    INFO(r.name << " " << r.max_relative_error);
    CHECK(r.passed);
  }
}

TEST_CASE("gradcheck catches a wrong gradient") {
  // Forward is x^2, backward claims 3x.
  ScalarFn wrong = [](std::span<const Tensor> in) {
    const Tensor& x = in[0];
    std::vector<double> sq(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) sq[i] = x[i] * x[i];
    Tensor out(x.shape(), sq);
    if (x.tracked()) {
      Tape* tape = common_tape({&x});
      const NodeId parent = x.node();
      const std::vector<double> xs = x.values();
      out = tape->record(out, [parent, xs](std::span<const double> g, GradSink& sink) {
        auto dst = sink.at(parent);
        for (std::size_t i = 0; i < xs.size(); ++i) dst[i] += 3.0 * xs[i] * g[i];
      });
    }
    return ad::sum(out);
  };
  GradCheckCase c{"wrong", wrong, [](std::uint64_t) { return std::vector<Tensor>{Tensor::vector({0.5, -1.0, 2.0})}; }, 1};
  const GradCheckCase cases[] = {c};
  const auto r = run_gradcheck(cases);
  CHECK_FALSE(r[0].passed);
  CHECK(r[0].max_relative_error > 0.1);
}
