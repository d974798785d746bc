#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "vaca/gradcheck.hpp"
#include "vaca/rng.hpp"
#include "vaca/tensor.hpp"

using Catch::Approx;
using vaca::Tensor;

TEST_CASE("d/dx x^2 at x=3 is 6", "[tensor]") {
  Tensor x = Tensor::scalar(3.0, true);
  vaca::Tape tape;
  Tensor y = vaca::square(x);
  tape.backward(y);
  CHECK(x.grad()[0] == Approx(6.0));
}

TEST_CASE("sigmoid(0) value and gradient", "[tensor]") {
  Tensor x = Tensor::scalar(0.0, true);
  vaca::Tape tape;
  Tensor y = vaca::sigmoid(x);
  CHECK(y.item() == Approx(0.5));
  tape.backward(y);
  CHECK(x.grad()[0] == Approx(0.25));
}

TEST_CASE("matmul gradient matches finite differences", "[tensor]") {
  vaca::Rng rng(7);
  Tensor a = Tensor::uniform({3, 4}, rng, -1.0, 1.0, true);
  Tensor b = Tensor::uniform({4, 2}, rng, -1.0, 1.0, true);
  Tensor w = Tensor::uniform({3, 2}, rng, -1.0, 1.0);  // fixed projection
  std::vector<Tensor*> params{&a, &b};
  const double err = vaca::check_gradients(
      params, [&]() { return vaca::sum(vaca::mul(vaca::matmul(a, b), w)); });
  CHECK(err <= 1e-6);
}

TEST_CASE("linear function gradients are exact to machine precision", "[tensor]") {
  Tensor x = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  const double err =
      vaca::check_gradients([&](Tensor& t) { return vaca::sum(vaca::mul(t, 3.0)); }, x);
  CHECK(err <= 1e-9);
}

TEST_CASE("every elementwise op passes gradient checks at random points", "[tensor]") {
  vaca::Rng rng(99);
  struct Case {
    const char* name;
    std::function<Tensor(const Tensor&)> f;
    double lo, hi;
  };
  const std::vector<Case> cases = {
      {"exp", [](const Tensor& t) { return vaca::exp(t); }, -2.0, 2.0},
      {"log", [](const Tensor& t) { return vaca::log(t); }, 0.2, 5.0},
      {"abs", [](const Tensor& t) { return vaca::abs(t); }, 0.5, 3.0},
      {"relu", [](const Tensor& t) { return vaca::relu(t); }, 0.5, 3.0},
      {"sigmoid", [](const Tensor& t) { return vaca::sigmoid(t); }, -3.0, 3.0},
      {"square", [](const Tensor& t) { return vaca::square(t); }, -3.0, 3.0},
      {"softplus", [](const Tensor& t) { return vaca::softplus(t); }, -3.0, 3.0},
      {"lgamma", [](const Tensor& t) { return vaca::lgamma(t); }, 0.3, 6.0},
      {"digamma", [](const Tensor& t) { return vaca::digamma(t); }, 0.3, 6.0},
      {"neg", [](const Tensor& t) { return vaca::neg(t); }, -3.0, 3.0},
  };
  for (const auto& c : cases) {
    for (int rep = 0; rep < 10; ++rep) {
      Tensor x = Tensor::uniform({4}, rng, c.lo, c.hi, true);
      const double err = vaca::check_gradients(
          [&](Tensor& t) { return vaca::sum(c.f(t)); }, x, 1e-6);
      INFO(c.name << " rep " << rep);
      CHECK(err <= 1e-5);
    }
  }
}

TEST_CASE("binary ops with broadcasting pass gradient checks", "[tensor]") {
  vaca::Rng rng(3);
  using BinOp = Tensor (*)(const Tensor&, const Tensor&);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor a = Tensor::uniform({2, 3}, rng, 0.5, 2.0, true);
    Tensor b = Tensor::uniform({3}, rng, 0.5, 2.0, true);
    Tensor w = Tensor::uniform({2, 3}, rng, -1.0, 1.0);
    std::vector<Tensor*> params{&a, &b};
    for (BinOp op : {static_cast<BinOp>(vaca::add), static_cast<BinOp>(vaca::sub),
                     static_cast<BinOp>(vaca::mul), static_cast<BinOp>(vaca::div)}) {
      const double err = vaca::check_gradients(
          params, [&]() { return vaca::sum(vaca::mul(op(a, b), w)); });
      CHECK(err <= 1e-5);
    }
  }
}

TEST_CASE("broadcast shapes follow trailing alignment", "[tensor]") {
  Tensor a = Tensor::from_data({2, 1}, {1.0, 2.0});
  Tensor b = Tensor::from_data({1, 3}, {10.0, 20.0, 30.0});
  Tensor c = vaca::add(a, b);
  REQUIRE(c.shape() == vaca::Shape{2, 3});
  CHECK(c[0] == 11.0);
  CHECK(c[5] == 32.0);

  Tensor d = vaca::add(Tensor::from_data({2, 2}, {1, 2, 3, 4}), Tensor::scalar(5.0));
  CHECK(d[3] == 9.0);

  CHECK_THROWS_AS(vaca::add(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})),
                  std::invalid_argument);
}

TEST_CASE("reductions, reshape, transpose, cat and slice gradients", "[tensor]") {
  vaca::Rng rng(17);
  Tensor a = Tensor::uniform({2, 3}, rng, -1.0, 1.0, true);
  Tensor b = Tensor::uniform({2, 2}, rng, -1.0, 1.0, true);
  std::vector<Tensor*> params{&a, &b};
  const double err = vaca::check_gradients(params, [&]() {
    Tensor cat = vaca::cat_last(a, b);              // {2,5}
    Tensor t = vaca::transpose(cat);                // {5,2}
    Tensor r = vaca::reshape(t, {10});              // {10}
    Tensor s = vaca::slice_last(r, 2, 6);           // {6}
    return vaca::add(vaca::mean(s), vaca::sum(vaca::square(cat)));
  });
  CHECK(err <= 1e-6);
}

TEST_CASE("sum and mean values", "[tensor]") {
  Tensor a = Tensor::from_data({4}, {1.0, 2.0, 3.0, 4.0});
  CHECK(vaca::sum(a).item() == 10.0);
  CHECK(vaca::mean(a).item() == 2.5);
}

TEST_CASE("non-finite results trip an error", "[tensor]") {
  Tensor zero = Tensor::scalar(0.0);
  Tensor one = Tensor::scalar(1.0);
  CHECK_THROWS_WITH(vaca::div(one, zero), Catch::Matchers::ContainsSubstring("non-finite"));
  CHECK_THROWS_WITH(vaca::log(Tensor::scalar(-1.0)),
                    Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("replaying forward+backward with zeroed grads is identical", "[tensor]") {
  vaca::Rng rng(5);
  Tensor x = Tensor::uniform({6}, rng, 0.1, 2.0, true);
  auto run = [&]() {
    x.zero_grad();
    vaca::Tape tape;
    Tensor loss = vaca::sum(vaca::mul(vaca::sigmoid(x), vaca::log(x)));
    tape.backward(loss);
    return std::vector<double>(x.grad(), x.grad() + x.size());
  };
  const auto g1 = run();
  const auto g2 = run();
  CHECK(g1 == g2);
}

TEST_CASE("gradients accumulate when a tensor is used twice", "[tensor]") {
  Tensor x = Tensor::scalar(2.0, true);
  vaca::Tape tape;
  Tensor y = vaca::add(vaca::mul(x, x), x);  // x^2 + x
  tape.backward(y);
  CHECK(x.grad()[0] == Approx(5.0));
}

TEST_CASE("backward requires a scalar root", "[tensor]") {
  Tensor x = Tensor::zeros({2}, true);
  vaca::Tape tape;
  Tensor y = vaca::mul(x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), std::logic_error);
}

TEST_CASE("detach blocks gradient flow", "[tensor]") {
  Tensor x = Tensor::scalar(3.0, true);
  vaca::Tape tape;
  Tensor d = x.detach();
  CHECK_FALSE(d.requires_grad());
  Tensor y = vaca::mul(vaca::square(x), d);  // d treated as the constant 3
  tape.backward(y);
  CHECK(x.grad()[0] == Approx(18.0));
}
