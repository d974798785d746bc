#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "vaca/distributions.hpp"
#include "vaca/gradcheck.hpp"

using Catch::Approx;
using vaca::GammaParams;
using vaca::GammaPrior;
using vaca::GaussianParams;
using vaca::Tensor;

namespace {

GammaParams make_gamma(double alpha, double beta, std::size_t n = 1, bool rg = false) {
  return {Tensor::full({n}, alpha, rg), Tensor::full({n}, beta, rg)};
}

}  // namespace

TEST_CASE("kl_gamma is zero at the prior and matches the spot value", "[distributions]") {
  CHECK(vaca::kl_gamma(make_gamma(1.0, 1.0), GammaPrior{1.0, 1.0}).item() ==
        Approx(0.0).margin(1e-12));
  // KL(Gamma(2,2) || Gamma(1,1)) = psi(2) + ln 2 - 1
  const double expect = vaca::digamma(2.0) + std::log(2.0) - 1.0;
  CHECK(expect == Approx(0.1159).margin(5e-5));
  CHECK(vaca::kl_gamma(make_gamma(2.0, 2.0), GammaPrior{1.0, 1.0}).item() ==
        Approx(expect).margin(1e-12));
}

TEST_CASE("kl_gamma matches quadrature on a parameter grid", "[distributions]") {
  for (double alpha : {0.5, 1.625, 2.75, 3.875, 5.0}) {
    for (double beta : {0.5, 1.625, 2.75, 3.875, 5.0}) {
      const double closed = vaca::kl_gamma(make_gamma(alpha, beta), GammaPrior{1.0, 1.0}).item();
      const double quad = oracle::gamma_kl_quadrature(alpha, beta, 1.0, 1.0);
      INFO("alpha=" << alpha << " beta=" << beta);
      CHECK(closed == Approx(quad).margin(1e-6));
    }
  }
}

TEST_CASE("kl_gamma is nonnegative on random parameters", "[distributions]") {
  vaca::Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const double a = rng.uniform(0.1, 8.0), b = rng.uniform(0.1, 8.0);
    const double ah = rng.uniform(0.1, 8.0), bh = rng.uniform(0.1, 8.0);
    const double kl = vaca::kl_gamma(make_gamma(a, b), GammaPrior{ah, bh}).item();
    CHECK(kl >= -1e-12);
  }
}

TEST_CASE("kl_gaussian spot values and quadrature", "[distributions]") {
  auto kl = [](double mu, double sigma) {
    return vaca::kl_gaussian({Tensor::scalar(mu), Tensor::scalar(sigma)}).item();
  };
  CHECK(kl(0.0, 1.0) == Approx(0.0).margin(1e-14));
  CHECK(kl(1.0, 1.0) == Approx(0.5).margin(1e-12));
  CHECK(kl(0.0, 2.0) == Approx(-std::log(2.0) + 2.0 - 0.5).margin(1e-12));
  CHECK(kl(0.0, 2.0) == Approx(0.8069).margin(5e-5));
  for (double mu : {-1.5, 0.0, 0.7}) {
    for (double sigma : {0.3, 1.0, 2.5}) {
      CHECK(kl(mu, sigma) == Approx(oracle::gaussian_kl_quadrature(mu, sigma)).margin(1e-8));
    }
  }
}

TEST_CASE("both KLs vanish only at the prior", "[distributions]") {
  CHECK(vaca::kl_gaussian({Tensor::scalar(0.0), Tensor::scalar(1.0)}).item() ==
        Approx(0.0).margin(1e-12));
  CHECK(vaca::kl_gaussian({Tensor::scalar(0.1), Tensor::scalar(1.0)}).item() > 1e-4);
  CHECK(vaca::kl_gamma(make_gamma(1.3, 1.3), GammaPrior{1.3, 1.3}).item() ==
        Approx(0.0).margin(1e-12));
  CHECK(vaca::kl_gamma(make_gamma(1.5, 1.3), GammaPrior{1.3, 1.3}).item() > 1e-4);
}

TEST_CASE("KL gradients pass finite-difference checks", "[distributions]") {
  GammaParams q = make_gamma(2.0, 1.5, 4, true);
  std::vector<Tensor*> params{&q.alpha, &q.beta};
  CHECK(vaca::check_gradients(params, [&]() {
          return vaca::kl_gamma(q, GammaPrior{1.0, 1.0});
        }) <= 1e-5);

  GaussianParams g{Tensor::full({4}, 0.3, true), Tensor::full({4}, 1.7, true)};
  std::vector<Tensor*> gp{&g.mu, &g.sigma};
  CHECK(vaca::check_gradients(gp, [&]() { return vaca::kl_gaussian(g); }) <= 1e-5);
}

TEST_CASE("gamma sampler: rate acts as pure scale", "[distributions][slow]") {
  // KS statistic between sample(alpha, c*beta) and sample(alpha, beta)/c.
  const int n = 100000;
  const double alpha = 2.0, beta = 1.0, c = 3.0;
  vaca::Rng r1(100), r2(200);
  std::vector<double> a(n), b(n);
  for (int i = 0; i < n; ++i) {
    a[i] = r1.gamma(alpha, c * beta);
    b[i] = r2.gamma(alpha, beta) / c;
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double ks = 0.0;
  std::size_t j = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    while (j < b.size() && b[j] <= a[i]) ++j;
    ks = std::max(ks, std::fabs((i + 1.0) / n - static_cast<double>(j) / n));
  }
  CHECK(ks <= 0.01);
}

TEST_CASE("implicit reparameterization gradient identities", "[distributions][slow]") {
  // E[z] = alpha/beta and E[ln z] = psi(alpha) - ln beta give the analytic
  // derivatives checked here by Monte-Carlo averaging of the pathwise grads.
  const int n = 100000;
  const double alpha = 2.0, beta = 1.0;
  vaca::Rng rng(42);
  GammaParams q = make_gamma(alpha, beta, 1, true);
  double g_a_z = 0.0, g_b_z = 0.0, g_a_lnz = 0.0, g_b_lnz = 0.0;
  for (int i = 0; i < n; ++i) {
    {
      q.alpha.zero_grad();
      q.beta.zero_grad();
      vaca::Tape tape;
      Tensor z = vaca::sample_gamma(q, rng);
      Tensor lnz = vaca::log(z);
      Tensor obj = vaca::add(z, lnz);
      // backward once; d z/d theta and d lnz/d theta both accumulate
      tape.backward(obj);
      // recover the two pieces: d(lnz)/dtheta = dz/dtheta / z
      const double dz_da_plus = q.alpha.grad()[0];
      const double dz_db_plus = q.beta.grad()[0];
      const double zval = z.item();
      // obj = z + ln z => d obj/da = dz/da (1 + 1/z)
      const double dz_da = dz_da_plus / (1.0 + 1.0 / zval);
      const double dz_db = dz_db_plus / (1.0 + 1.0 / zval);
      g_a_z += dz_da;
      g_b_z += dz_db;
      g_a_lnz += dz_da / zval;
      g_b_lnz += dz_db / zval;
    }
  }
  g_a_z /= n;
  g_b_z /= n;
  g_a_lnz /= n;
  g_b_lnz /= n;
  CHECK(g_a_z == Approx(1.0 / beta).epsilon(0.02));                  // dE[z]/dalpha
  CHECK(g_b_z == Approx(-alpha / (beta * beta)).epsilon(0.02));      // dE[z]/dbeta
  CHECK(g_a_lnz == Approx(vaca::trigamma(alpha)).epsilon(0.02));     // dE[lnz]/dalpha
  CHECK(g_b_lnz == Approx(-1.0 / beta).epsilon(0.02));               // dE[lnz]/dbeta
}

TEST_CASE("gaussian sampler basics", "[distributions]") {
  vaca::Rng rng(1);
  // sigma -> 0 limit: the sample collapses onto mu
  GaussianParams tight{Tensor::scalar(2.5), Tensor::scalar(1e-300)};
  CHECK(vaca::sample_gaussian(tight, rng).item() == 2.5);

  // d sample / d mu = 1 exactly, for any epsilon
  GaussianParams g{Tensor::scalar(0.7, true), Tensor::scalar(1.3, true)};
  for (int i = 0; i < 5; ++i) {
    g.mu.zero_grad();
    g.sigma.zero_grad();
    vaca::Tape tape;
    Tensor z = vaca::sample_gaussian(g, rng);
    tape.backward(z);
    CHECK(g.mu.grad()[0] == 1.0);
  }
}

TEST_CASE("gaussian sample mean approaches mu", "[distributions][slow]") {
  const int n = 100000;
  const double mu = 0.7, sigma = 1.3;
  vaca::Rng rng(9);
  GaussianParams g{Tensor::scalar(mu), Tensor::scalar(sigma)};
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += vaca::sample_gaussian(g, rng).item();
  acc /= n;
  CHECK(std::fabs(acc - mu) <= 3.0 * sigma / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("posterior_mean identities", "[distributions]") {
  CHECK(vaca::posterior_mean(make_gamma(2.3, 2.3, 5)).values() ==
        std::vector<double>(5, 1.0));
  CHECK(vaca::posterior_mean(make_gamma(3.0, 2.0)).item() == Approx(1.5));
}

TEST_CASE("posterior_mean matches Monte-Carlo sample mean", "[distributions][slow]") {
  const int n = 100000;
  vaca::Rng rng(31);
  GammaParams q = make_gamma(2.5, 4.0);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += vaca::sample_gamma(q, rng).item();
  acc /= n;
  CHECK(acc == Approx(vaca::posterior_mean(q).item()).epsilon(0.01));
}

TEST_CASE("frozen-quantile replay reproduces the sample and validates gradients",
          "[distributions]") {
  vaca::Rng rng(77);
  GammaParams q = make_gamma(1.8, 2.2, 6, true);
  vaca::NoiseCache cache;
  Tensor first = vaca::sample_gamma(q, rng, &cache);
  cache.rewind();
  Tensor replay = vaca::sample_gamma(q, rng, &cache);
  for (std::size_t i = 0; i < first.size(); ++i)
    CHECK(replay[i] == Approx(first[i]).epsilon(1e-9));

  // Finite differences through the frozen-quantile path must match the
  // implicit-reparameterization backward.
  std::vector<Tensor*> params{&q.alpha, &q.beta};
  const double err = vaca::check_gradients(params, [&]() {
    cache.rewind();
    return vaca::sum(vaca::square(vaca::sample_gamma(q, rng, &cache)));
  });
  CHECK(err <= 1e-5);
}

TEST_CASE("invalid parameters are rejected", "[distributions]") {
  vaca::Rng rng(1);
  CHECK_THROWS_AS(vaca::sample_gamma(make_gamma(-1.0, 1.0), rng), std::domain_error);
  CHECK_THROWS_AS(vaca::kl_gamma(make_gamma(0.0, 1.0), GammaPrior{}), std::domain_error);
  GaussianParams bad{Tensor::scalar(0.0), Tensor::scalar(-1.0)};
  CHECK_THROWS_AS(vaca::kl_gaussian(bad), std::domain_error);
}
