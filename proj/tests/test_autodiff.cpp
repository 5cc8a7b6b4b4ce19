#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "elx/autodiff.hpp"
#include "elx/rng.hpp"
#include "support/gradcheck.hpp"

using namespace elx;
using ad::Tensor;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape, double sd = 1.0) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  std::vector<double> v(n);
  for (double& x : v) x = rng.gaussian(0.0, sd);
  return Tensor::from(std::move(v), std::move(shape), true);
}

}  // namespace

TEST_CASE("analytic example: d(mean(x^2))/dx at [1, 2]") {
  ad::Param x(Tensor::from({1.0, 2.0}, {2}, true));
  Tensor loss = ad::mean_all(ad::mul(x.value, x.value));
  x.zero_grad();
  loss.backward();
  CHECK(x.value.grad()[0] == doctest::Approx(1.0));
  CHECK(x.value.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("every elementwise op passes the finite-difference oracle") {
  Rng rng(101);
  ad::Param a(random_tensor(rng, {3, 4})), b(random_tensor(rng, {3, 4}));
  auto quad = [](Tensor t) { return ad::mean_all(ad::mul(t, t)); };

  CHECK(elx::testing::max_rel_err({&a, &b}, [&] { return quad(ad::add(a.value, b.value)); }) < 1e-4);
  CHECK(elx::testing::max_rel_err({&a, &b}, [&] { return quad(ad::sub(a.value, b.value)); }) < 1e-4);
  CHECK(elx::testing::max_rel_err({&a, &b}, [&] { return quad(ad::mul(a.value, b.value)); }) < 1e-4);
  CHECK(elx::testing::max_rel_err({&a, &b}, [&] {
          return quad(ad::div(a.value, ad::add_const(ad::mul(b.value, b.value), 1.0)));
        }) < 1e-4);
  CHECK(elx::testing::max_rel_err({&a}, [&] { return quad(ad::scale(a.value, -2.5)); }) < 1e-4);
  CHECK(elx::testing::max_rel_err({&a}, [&] { return quad(ad::relu(a.value)); }) < 1e-4);
  CHECK(elx::testing::max_rel_err({&a}, [&] { return quad(ad::sigmoid(a.value)); }) < 1e-4);
  CHECK(elx::testing::max_rel_err({&a}, [&] { return quad(ad::exp_(ad::scale(a.value, 0.3))); }) < 1e-4);
  CHECK(elx::testing::max_rel_err({&a}, [&] { return quad(ad::log_(ad::add_const(ad::mul(a.value, a.value), 1.0))); }) < 1e-4);
  CHECK(elx::testing::max_rel_err({&a}, [&] { return quad(ad::softmax(a.value)); }) < 1e-4);
  CHECK(elx::testing::max_rel_err({&a}, [&] { return ad::mean_all(a.value); }) < 1e-4);
}

TEST_CASE("matmul, linear, conv1d, gap and broadcast ops pass the oracle") {
  Rng rng(103);
  auto quad = [](Tensor t) { return ad::mean_all(ad::mul(t, t)); };
  {
    ad::Param a(random_tensor(rng, {4, 5})), w(random_tensor(rng, {5, 3})), b(random_tensor(rng, {3}));
    CHECK(elx::testing::max_rel_err({&a, &w}, [&] { return quad(ad::matmul(a.value, w.value)); }) < 1e-4);
    CHECK(elx::testing::max_rel_err({&a, &w, &b}, [&] { return quad(ad::linear(a.value, w.value, b.value)); }) < 1e-4);
  }
  {
    ad::Param x(random_tensor(rng, {2, 3, 17})), w(random_tensor(rng, {4, 3, 5})), b(random_tensor(rng, {4}));
    for (int stride : {1, 2, 3})
      for (int pad : {0, 2})
        CHECK(elx::testing::max_rel_err({&x, &w, &b},
                          [&] { return quad(ad::conv1d(x.value, w.value, b.value, stride, pad)); }) < 1e-4);
    CHECK(elx::testing::max_rel_err({&x}, [&] { return quad(ad::gap1d(x.value)); }) < 1e-4);
  }
  {
    ad::Param col(random_tensor(rng, {4, 1})), row(random_tensor(rng, {6}));
    CHECK(elx::testing::max_rel_err({&col, &row}, [&] { return quad(ad::outer_add(col.value, row.value)); }) < 1e-4);
    ad::Param theta(random_tensor(rng, {5}));
    CHECK(elx::testing::max_rel_err({&theta}, [&] { return quad(ad::ordered_bias(theta.value)); }) < 1e-4);
  }
}

TEST_CASE("batchnorm1d passes the oracle in both modes") {
  Rng rng(107);
  ad::Param x(random_tensor(rng, {2, 3, 8})), g(random_tensor(rng, {3})), be(random_tensor(rng, {3}));
  CHECK(elx::testing::max_rel_err({&x, &g, &be}, [&] {
          ad::BnStats st(3);
          Tensor o = ad::batchnorm1d(x.value, g.value, be.value, st, true);
          return ad::mean_all(ad::mul(ad::sigmoid(o), o));
        }) < 1e-4);
  ad::BnStats frozen(3);
  frozen.mean = {0.2, -0.4, 0.1};
  frozen.var = {1.3, 0.8, 1.1};
  CHECK(elx::testing::max_rel_err({&x, &g, &be}, [&] {
          Tensor o = ad::batchnorm1d(x.value, g.value, be.value, frozen, false);
          return ad::mean_all(ad::mul(o, o));
        }) < 1e-4);
}

TEST_CASE("batchnorm running statistics update only in training mode") {
  Rng rng(109);
  Tensor x = random_tensor(rng, {4, 2, 8});
  Tensor g = Tensor::from({1.0, 1.0}, {2}, true);
  Tensor b = Tensor::from({0.0, 0.0}, {2}, true);
  ad::BnStats st(2, 0.1);
  ad::batchnorm1d(x, g, b, st, true);
  const auto mean_after = st.mean;
  CHECK(mean_after != std::vector<double>(2, 0.0));
  ad::batchnorm1d(x, g, b, st, false);
  CHECK(st.mean == mean_after);  // eval leaves the estimates alone
}

TEST_CASE("losses pass the oracle and match analytic values") {
  Rng rng(113);
  {
    ad::Param mu(random_tensor(rng, {6, 1})), lv(random_tensor(rng, {6, 1}, 0.5));
    std::vector<double> y = {0.3, -1.2, 0.5, 2.0, -0.1, 0.9};
    CHECK(elx::testing::max_rel_err({&mu, &lv}, [&] { return ad::gaussian_nll(mu.value, lv.value, y); }) < 1e-4);
    CHECK(elx::testing::max_rel_err({&mu}, [&] { return ad::mse_loss(mu.value, y); }) < 1e-4);
    // mu = y, sigma^2 = 1 -> 0.5 log(2 pi) per point
    Tensor mu_eq = Tensor::from(y, {6, 1});
    Tensor lv_zero = Tensor::zeros({6, 1});
    CHECK(ad::gaussian_nll(mu_eq, lv_zero, y).item() == doctest::Approx(0.9189385332).epsilon(1e-9));
  }
  {
    ad::Param logits(random_tensor(rng, {5, 4}));
    std::vector<int> labels = {1, 3, 2, 4, 1};
    CHECK(elx::testing::max_rel_err({&logits}, [&] { return ad::ce_with_logits(logits.value, labels); }) < 1e-4);
    std::vector<double> targets(20);
    for (double& t : targets) t = rng.uniform() < 0.5 ? 0.0 : 1.0;
    CHECK(elx::testing::max_rel_err({&logits}, [&] { return ad::bce_with_logits(logits.value, targets); }) < 1e-4);
  }
}

TEST_CASE("fixed-variance gaussian NLL has the MSE minimizer") {
  // with logvar pinned at 0 the NLL is 0.5 MSE + const, so gradients in mu
  // are proportional to the MSE gradients
  Rng rng(117);
  ad::Param mu(random_tensor(rng, {8, 1}));
  std::vector<double> y(8);
  for (double& v : y) v = rng.gaussian();
  Tensor lv = Tensor::zeros({8, 1});
  Tensor nll = ad::gaussian_nll(mu.value, lv, y);
  mu.zero_grad();
  nll.backward();
  const auto g_nll = mu.value.grad();
  Tensor mse = ad::mse_loss(mu.value, y);
  mu.zero_grad();
  mse.backward();
  const auto g_mse = mu.value.grad();
  for (std::size_t i = 0; i < g_nll.size(); ++i) CHECK(g_nll[i] == doctest::Approx(0.5 * g_mse[i]).epsilon(1e-9));
}

TEST_CASE("dropout") {
  Rng rng(119);
  Tensor x = random_tensor(rng, {4, 8});
  Rng drop(5);
  SUBCASE("rate 0 is the identity in train and eval") {
    CHECK(ad::dropout(x, 0.0, drop, true).val() == x.val());
    CHECK(ad::dropout(x, 0.0, drop, false).val() == x.val());
  }
  SUBCASE("eval mode is the identity at any rate") {
    CHECK(ad::dropout(x, 0.7, drop, false).val() == x.val());
  }
  SUBCASE("train mode zeroes and rescales") {
    Rng d1(7);
    Tensor y = ad::dropout(x, 0.5, d1, true);
    bool any_zero = false;
    for (std::size_t i = 0; i < y.numel(); ++i) {
      if (y.val()[i] == 0.0) any_zero = true;
      else CHECK(y.val()[i] == doctest::Approx(2.0 * x.val()[i]));
    }
    CHECK(any_zero);
  }
  SUBCASE("identical rng state gives identical masks") {
    Rng d1(9), d2(9);
    CHECK(ad::dropout(x, 0.3, d1, true).val() == ad::dropout(x, 0.3, d2, true).val());
  }
}

TEST_CASE("adam") {
  SUBCASE("first step moves by about lr") {
    ad::Param p(Tensor::from({0.5}, {1}, true));
    p.value.grad()[0] = 1.0;
    ad::Adam opt;
    opt.lr = 1e-3;
    std::vector<ad::Param*> ps{&p};
    opt.step(ps);
    CHECK(0.5 - p.value.val()[0] == doctest::Approx(1e-3).epsilon(1e-6));
  }
  SUBCASE("zero gradients leave parameters unchanged") {
    ad::Param p(Tensor::from({0.5, -1.0}, {2}, true));
    p.zero_grad();
    ad::Adam opt;
    std::vector<ad::Param*> ps{&p};
    opt.step(ps);
    CHECK(p.value.val() == std::vector<double>{0.5, -1.0});
  }
  SUBCASE("quadratic bowl converges") {
    Rng rng(11);
    ad::Param w(random_tensor(rng, {8}, 2.0));
    ad::Adam opt;
    opt.lr = 5e-2;
    std::vector<ad::Param*> ps{&w};
    for (int step = 0; step < 500; ++step) {
      Tensor loss = ad::mean_all(ad::mul(w.value, w.value));
      opt.zero_grad(ps);
      loss.backward();
      opt.step(ps);
    }
    double norm = 0.0;
    for (double v : w.value.val()) norm += v * v;
    CHECK(std::sqrt(norm) < 1e-2);
  }
}

TEST_CASE("debug mode aborts on non-finite values") {
  ad::check_finite() = true;
  Tensor x = Tensor::from({1.0, 0.0}, {2});
  CHECK_THROWS_AS(ad::log_(x), std::runtime_error);  // log(0) = -inf
  ad::check_finite() = false;
  CHECK_NOTHROW(ad::log_(x));
}

TEST_CASE("gradient accumulation across shared subexpressions") {
  // f = mean(x * x + x) -> df/dx = (2x + 1)/n
  ad::Param x(Tensor::from({1.0, -2.0, 3.0}, {3}, true));
  Tensor loss = ad::mean_all(ad::add(ad::mul(x.value, x.value), x.value));
  x.zero_grad();
  loss.backward();
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(x.value.grad()[i] == doctest::Approx((2.0 * x.value.val()[i] + 1.0) / 3.0));
}
