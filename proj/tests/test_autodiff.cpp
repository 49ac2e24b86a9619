#include <doctest.h>

#include <random>

#include "masksurf/autodiff/choices.hpp"
#include "masksurf/autodiff/gradcheck.hpp"
#include "masksurf/autodiff/ops.hpp"
#include "oracles.hpp"

using namespace masksurf;
using namespace masksurf::ad;

namespace {

using NamedTensor = std::pair<std::string, Tensor>;

std::vector<Real> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0,
                                double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Real> v(n);
  for (auto& x : v) x = Real(u(rng));
  return v;
}

Tensor random_param(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return Tensor::parameter(s, random_values(numel(s), seed, lo, hi));
}

/// sum(w * y) with fixed random weights, so every output coordinate matters.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  return sum_all(y * Tensor::constant(y.shape(), random_values(y.numel(), seed)));
}

void check_grad(const std::function<Tensor()>& fn, const std::vector<NamedTensor>& leaves) {
  GradCheckOptions o;
  o.eps = 1e-5;
  o.tol = 1e-4;
  const GradCheckReport r = finite_difference_check(fn, leaves, o);
  INFO(r.message);
  CHECK(r.finite);
  CHECK(r.pass);
}

const std::vector<Shape> kShapes = {{5}, {3, 4}, {2, 3, 4}};

}  // namespace

TEST_CASE("primitive forward values") {
  const Tensor a = Tensor::constant({2}, {1, 2});
  const Tensor b = Tensor::constant({2}, {3, 4});
  const Tensor s = add(a, b);
  CHECK(s.at(0) == 4);
  CHECK(s.at(1) == 6);

  const Tensor eye = Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor m = Tensor::constant({3, 2}, {1, 2, 3, 4, 5, 6});
  const Tensor p = matmul(eye, m);
  for (std::size_t i = 0; i < 6; ++i) CHECK(p.at(i) == m.at(i));

  const Tensor sm = softmax(Tensor::constant({3}, {0, 0, 0}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(sm.at(i) == doctest::Approx(1.0 / 3.0));

  CHECK(gelu(Tensor::constant({1}, {0})).at(0) == 0);
  CHECK(sqrt(Tensor::constant({1}, {9})).at(0) == doctest::Approx(3));
  CHECK(abs(Tensor::constant({1}, {-2})).at(0) == 2);
  CHECK(power(Tensor::constant({1}, {2}), 3).at(0) == doctest::Approx(8));
}

TEST_CASE("matmul matches a naive triple loop") {
  const auto av = random_values(12, 1);
  const auto bv = random_values(20, 2);
  const Tensor c = matmul(Tensor::constant({3, 4}, av), Tensor::constant({4, 5}, bv));
  const auto ref = oracle::matmul({av.begin(), av.end()}, {bv.begin(), bv.end()}, 3, 4, 5);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(c.at(i) == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("shape contract violations throw") {
  const Tensor a = Tensor::constant({2, 3}, std::vector<Real>(6, 1));
  const Tensor b = Tensor::constant({4, 2}, std::vector<Real>(8, 1));
  CHECK_THROWS_AS(matmul(a, b), InvalidArgument);
  CHECK_THROWS_AS(add(a, b), InvalidArgument);
  CHECK_THROWS_AS(reshape(a, {5}), InvalidArgument);
  CHECK_THROWS_AS(softmax(Tensor::constant({0}, {})), InvalidArgument);
  CHECK_THROWS_AS(a.backward(), InvalidArgument);
}

TEST_CASE("backward closed forms") {
  SUBCASE("sum of squares") {
    Tensor x = Tensor::parameter({3}, {1, 2, 3});
    sum_all(x * x).backward();
    CHECK(x.grad()[0] == 2);
    CHECK(x.grad()[1] == 4);
    CHECK(x.grad()[2] == 6);
  }
  SUBCASE("max reduce routes to the argmax") {
    Tensor x = Tensor::parameter({3}, {3, 7, 2});
    sum_all(max_reduce(x, 0)).backward();
    CHECK(x.grad()[0] == 0);
    CHECK(x.grad()[1] == 1);
    CHECK(x.grad()[2] == 0);
  }
  SUBCASE("max reduce ties go to the lowest index") {
    Tensor x = Tensor::parameter({3}, {5, 5, 1});
    sum_all(max_reduce(x, 0)).backward();
    CHECK(x.grad()[0] == 1);
    CHECK(x.grad()[1] == 0);
  }
  SUBCASE("sum of matmul gives ones times B transpose") {
    const auto av = random_values(6, 3);
    const auto bv = random_values(12, 4);
    Tensor a = Tensor::parameter({2, 3}, av);
    Tensor b = Tensor::constant({3, 4}, bv);
    sum_all(matmul(a, b)).backward();
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t k = 0; k < 3; ++k) {
        double row = 0.0;
        for (std::size_t j = 0; j < 4; ++j) row += bv[k * 4 + j];
        CHECK(a.grad()[i * 3 + k] == doctest::Approx(row).epsilon(1e-12));
      }
    }
  }
  SUBCASE("gather scatter-adds repeated indices") {
    Tensor x = Tensor::parameter({3, 2}, {1, 2, 3, 4, 5, 6});
    sum_all(gather(x, 0, {0, 2, 2})).backward();
    const std::vector<Real> want = {1, 1, 0, 0, 2, 2};
    for (std::size_t i = 0; i < 6; ++i) CHECK(x.grad()[i] == want[i]);
  }
}

TEST_CASE("finite differences agree with backward for every primitive") {
  std::uint64_t seed = 100;
  for (const Shape& s : kShapes) {
    CAPTURE(to_string(s));
    const std::size_t last = s.back();
    Tensor x = random_param(s, ++seed);
    Tensor y = random_param(s, ++seed);
    Tensor pos = random_param(s, ++seed, 0.5, 2.0);
    const auto w = ++seed;
    check_grad([&] { return weighted_sum(add(x, y), w); }, {{"x", x}, {"y", y}});
    check_grad([&] { return weighted_sum(subtract(x, y), w); }, {{"x", x}, {"y", y}});
    check_grad([&] { return weighted_sum(multiply(x, y), w); }, {{"x", x}, {"y", y}});
    // broadcasting a trailing vector
    Tensor row = random_param({last}, ++seed);
    check_grad([&] { return weighted_sum(multiply(x, row), w); }, {{"x", x}, {"row", row}});
    check_grad([&] { return weighted_sum(add(x, row), w); }, {{"x", x}, {"row", row}});
    check_grad([&] { return weighted_sum(reshape(x, {numel(s)}), w); }, {{"x", x}});
    check_grad([&] { return weighted_sum(softmax(x), w); }, {{"x", x}});
    check_grad([&] { return weighted_sum(gelu(x), w); }, {{"x", x}});
    check_grad([&] { return weighted_sum(abs(x), w); }, {{"x", x}});
    check_grad([&] { return weighted_sum(sqrt(pos), w); }, {{"pos", pos}});
    check_grad([&] { return weighted_sum(log(pos), w); }, {{"pos", pos}});
    check_grad([&] { return weighted_sum(power(pos, Real(-1.5)), w); }, {{"pos", pos}});
    check_grad([&] { return weighted_sum(power(x, Real(2)), w); }, {{"x", x}});
    check_grad([&] { return weighted_sum(max_reduce(x, 0), w); }, {{"x", x}});
    check_grad([&] { return weighted_sum(max_reduce(x, s.size() - 1), w); }, {{"x", x}});
    check_grad([&] { return weighted_sum(mean_reduce(x, 0), w); }, {{"x", x}});
    check_grad([&] { return weighted_sum(sum_reduce(x, s.size() - 1), w); }, {{"x", x}});
    check_grad([&] { return mean_all(x * y); }, {{"x", x}, {"y", y}});
    Tensor gamma = random_param({last}, ++seed);
    Tensor beta = random_param({last}, ++seed);
    check_grad([&] { return weighted_sum(layer_norm(x, gamma, beta), w); },
               {{"x", x}, {"gamma", gamma}, {"beta", beta}});
    const Tensor parts[] = {x, y};
    check_grad([&] { return weighted_sum(concat(parts, 0), w); }, {{"x", x}, {"y", y}});
    check_grad([&] { return weighted_sum(concat(parts, s.size() - 1), w); }, {{"x", x}, {"y", y}});
    check_grad([&] { return weighted_sum(gather(x, 0, {0, s[0] - 1, 0}), w); }, {{"x", x}});
    if (s.size() >= 2) {
      check_grad([&] { return weighted_sum(transpose(x), w); }, {{"x", x}});
      Tensor b = random_param({last, 3}, ++seed);
      Tensor lhs = random_param({s[s.size() - 2], last}, ++seed);
      check_grad([&] { return weighted_sum(matmul(lhs, b), w); }, {{"lhs", lhs}, {"b", b}});
    }
    if (s.size() == 3) {
      check_grad([&] { return weighted_sum(transpose(x, {2, 0, 1}), w); }, {{"x", x}});
      Tensor b = random_param({s[0], s[2], 2}, ++seed);
      check_grad([&] { return weighted_sum(matmul(x, b), w); }, {{"x", x}, {"b", b}});
    }
  }
}

TEST_CASE("finite difference harness") {
  SUBCASE("sum of squares is near exact") {
    Tensor x = random_param({7}, 11);
    GradCheckOptions o;
    const auto r = finite_difference_check([](const Tensor& t) { return sum_all(t * t); }, x, o);
    CHECK(r.max_rel_error < 1e-6);
    CHECK(r.pass);
  }
  SUBCASE("constant function passes with zero gradients") {
    Tensor x = random_param({4}, 12);
    const auto r = finite_difference_check(
        [](const Tensor&) { return Tensor::scalar(3); }, x, GradCheckOptions{});
    CHECK(r.pass);
    CHECK(r.max_abs_error == 0);
  }
  SUBCASE("a wrong gradient is caught") {
    Tensor x = random_param({4}, 13, 0.5, 1.0);
    // y = x^2 computed with a detached factor has half the true gradient.
    const auto r = finite_difference_check(
        [](const Tensor& t) { return sum_all(t * t.detach()); }, x, GradCheckOptions{});
    CHECK_FALSE(r.pass);
  }
  SUBCASE("non-finite value is reported, not thrown") {
    Tensor x = Tensor::parameter({1}, {1e-6});
    const auto r = finite_difference_check([](const Tensor& t) { return sum_all(log(t)); }, x,
                                           GradCheckOptions{.eps = 1e-5});
    CHECK_FALSE(r.finite);
    CHECK_FALSE(r.pass);
  }
  SUBCASE("fourth order stencil with held choices") {
    Tensor x = random_param({3, 4}, 14);
    GradCheckOptions o;
    o.order = 4;
    o.eps = 1e-3;
    o.hold_choices = true;
    const auto r = finite_difference_check(
        [](const Tensor& t) { return sum_all(abs(max_reduce(t, 0))); }, x, o);
    CHECK(r.pass);
  }
}

TEST_CASE("held choices replay the base point's selection") {
  Tensor x = Tensor::parameter({2}, {1.0, 1.0 + 1e-9});
  std::vector<std::vector<std::size_t>> tape;
  {
    ChoiceRecording rec;
    (void)max_reduce(x, 0);
    tape = rec.take();
  }
  REQUIRE(tape.size() == 1);
  x.mutable_values()[0] = 2.0;
  ChoiceReplay replay(tape);
  CHECK(max_reduce(x, 0).item() == doctest::Approx(1.0 + 1e-9));
}

TEST_CASE("backward is linear") {
  Tensor x = random_param({3, 4}, 21);
  auto f = [&] { return weighted_sum(gelu(x), 1); };
  auto g = [&] { return weighted_sum(softmax(x * x), 2); };
  x.zero_grad();
  f().backward();
  const std::vector<Real> gf(x.grad().begin(), x.grad().end());
  x.zero_grad();
  g().backward();
  const std::vector<Real> gg(x.grad().begin(), x.grad().end());
  x.zero_grad();
  (scale(f(), 2.5) + scale(g(), -0.5)).backward();
  for (std::size_t i = 0; i < gf.size(); ++i) {
    CHECK(x.grad()[i] == doctest::Approx(2.5 * gf[i] - 0.5 * gg[i]).epsilon(1e-12));
  }
}

TEST_CASE("repeated forward and backward is bit identical") {
  auto run = [] {
    Tensor x = random_param({4, 5}, 31);
    Tensor w = random_param({5, 3}, 32);
    Tensor y = layer_norm(matmul(x, w), Tensor::full({3}, 1), Tensor::full({3}, 0));
    Tensor loss = mean_all(gelu(y));
    loss.backward();
    std::vector<Real> out(w.grad().begin(), w.grad().end());
    out.push_back(loss.item());
    return out;
  };
  CHECK(run() == run());
}
