#pragma once

// Gamma and Gaussian variational families: reparameterized sampling and
// closed-form KL divergences against their priors.
//
// Gamma samples are drawn by Marsaglia-Tsang and differentiated with the
// implicit reparameterization  dz/dtheta = -(dF/dtheta)/(dF/dz)  where F is
// the Gamma CDF; dF/dalpha is a central difference of the CDF with step
// 1e-5*alpha and dF/dz is the density. dz/dbeta = -z/beta holds exactly.
//
// A NoiseCache records each sample's quantile u = F(z). Replaying with the
// cache inverts the CDF at the frozen u, which makes a sampled loss a smooth
// deterministic function of the parameters; finite differences of that
// function match the implicit gradients, which is how they are verified.

#include <optional>
#include <vector>

#include "vaca/rng.hpp"
#include "vaca/special.hpp"
#include "vaca/tensor.hpp"

namespace vaca {

struct GammaParams {
  Tensor alpha;  // > 0 elementwise
  Tensor beta;   // > 0 elementwise, same shape
};

struct GammaPrior {
  double alpha_hat = 1.0;
  double beta_hat = 1.0;
};

struct GaussianParams {
  Tensor mu;
  Tensor sigma;  // > 0 elementwise, same shape
};

// Fixed standard normal prior (mu_hat = 0, sigma_hat = 1).
struct GaussianPrior {};

// Frozen noise for deterministic replay of sampled losses. Records are keyed
// by call order; rewind() before each replayed evaluation.
struct NoiseCache {
  std::vector<std::vector<double>> gamma_u;    // quantiles per sample_gamma call
  std::vector<std::vector<double>> gauss_eps;  // epsilons per sample_gaussian call
  std::size_t gamma_pos = 0;
  std::size_t gauss_pos = 0;
  bool replay = false;

  void rewind() {
    gamma_pos = gauss_pos = 0;
    replay = true;
  }
  void reset() {
    gamma_u.clear();
    gauss_eps.clear();
    gamma_pos = gauss_pos = 0;
    replay = false;
  }
};

namespace detail {

inline void check_positive_params(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": parameter shapes differ");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a[i] > 0.0) || !(b[i] > 0.0))
      throw std::domain_error(std::string(op) + ": parameters must be positive");
}

inline double implicit_dz_dalpha(double z, double alpha, double beta) {
  const double pdf = gamma_pdf(z, alpha, beta);
  if (!(pdf > 1e-290)) return 0.0;  // far tail: no usable gradient signal
  const double h = 1e-5 * alpha;
  const double fp = gamma_cdf(z, alpha + h, beta);
  const double fm = gamma_cdf(z, alpha - h, beta);
  return -((fp - fm) / (2.0 * h)) / pdf;
}

}  // namespace detail

// One sample M ~ Gamma(alpha, beta) per element, with gradient paths into
// alpha and beta. Non-finite draws are retried up to 8 times.
inline Tensor sample_gamma(const GammaParams& params, Rng& rng, NoiseCache* cache = nullptr) {
  const Tensor& alpha = params.alpha;
  const Tensor& beta = params.beta;
  detail::check_positive_params(alpha, beta, "sample_gamma");
  const std::size_t n = alpha.size();
  Tensor z = Tensor::zeros(alpha.shape());

  const bool replaying = cache && cache->replay;
  std::vector<double>* urec = nullptr;
  if (cache && !replaying) {
    cache->gamma_u.emplace_back(n, 0.0);
    urec = &cache->gamma_u.back();
  }
  const std::vector<double>* uplay = nullptr;
  if (replaying) {
    if (cache->gamma_pos >= cache->gamma_u.size())
      throw std::logic_error("sample_gamma: noise cache exhausted");
    uplay = &cache->gamma_u[cache->gamma_pos++];
    if (uplay->size() != n) throw std::logic_error("sample_gamma: noise cache size mismatch");
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (replaying) {
      z[i] = gamma_quantile((*uplay)[i], alpha[i], beta[i]);
    } else {
      double draw = rng.gamma(alpha[i], beta[i]);
      int tries = 0;
      while (!std::isfinite(draw) || draw <= 0.0) {
        if (++tries > 8)
          throw std::runtime_error("sample_gamma: non-finite sample after 8 retries");
        draw = rng.gamma(alpha[i], beta[i]);
      }
      z[i] = draw;
      if (urec) {
        double u = gamma_cdf(draw, alpha[i], beta[i]);
        // keep u usable by the quantile inverse under small perturbations
        u = std::min(std::max(u, 1e-14), 1.0 - 1e-14);
        (*urec)[i] = u;
      }
    }
  }
  detail::ensure_finite(z, "sample_gamma");

  if (Tape::active() && (alpha.requires_grad() || beta.requires_grad())) {
    z.set_requires_grad(true);
    // local derivatives at the forward point
    std::vector<double> dza(n), dzb(n);
    for (std::size_t i = 0; i < n; ++i) {
      dza[i] = detail::implicit_dz_dalpha(z[i], alpha[i], beta[i]);
      dzb[i] = -z[i] / beta[i];
    }
    Tensor ac = alpha, bc = beta, zc = z;
    Tape::active()->record("sample_gamma",
                           [ac, bc, zc, dza = std::move(dza), dzb = std::move(dzb)]() mutable {
                             const double* g = zc.grad();
                             for (std::size_t i = 0; i < zc.size(); ++i) {
                               if (ac.requires_grad()) ac.grad()[i] += g[i] * dza[i];
                               if (bc.requires_grad()) bc.grad()[i] += g[i] * dzb[i];
                             }
                           });
  }
  return z;
}

// z = mu + sigma * eps with eps ~ N(0,1); gradient 1 into mu and eps into
// sigma.
inline Tensor sample_gaussian(const GaussianParams& params, Rng& rng,
                              NoiseCache* cache = nullptr) {
  const Tensor& mu = params.mu;
  const Tensor& sigma = params.sigma;
  if (mu.shape() != sigma.shape())
    throw std::invalid_argument("sample_gaussian: parameter shapes differ");
  for (std::size_t i = 0; i < sigma.size(); ++i)
    if (!(sigma[i] > 0.0)) throw std::domain_error("sample_gaussian: sigma must be positive");
  const std::size_t n = mu.size();

  std::vector<double> eps(n);
  const bool replaying = cache && cache->replay;
  if (replaying) {
    if (cache->gauss_pos >= cache->gauss_eps.size())
      throw std::logic_error("sample_gaussian: noise cache exhausted");
    const auto& rec = cache->gauss_eps[cache->gauss_pos++];
    if (rec.size() != n) throw std::logic_error("sample_gaussian: noise cache size mismatch");
    eps = rec;
  } else {
    for (auto& e : eps) e = rng.normal();
    if (cache) cache->gauss_eps.push_back(eps);
  }

  Tensor z = Tensor::zeros(mu.shape());
  for (std::size_t i = 0; i < n; ++i) z[i] = mu[i] + sigma[i] * eps[i];
  detail::ensure_finite(z, "sample_gaussian");

  if (Tape::active() && (mu.requires_grad() || sigma.requires_grad())) {
    z.set_requires_grad(true);
    Tensor mc = mu, sc = sigma, zc = z;
    Tape::active()->record("sample_gaussian", [mc, sc, zc, eps = std::move(eps)]() mutable {
      const double* g = zc.grad();
      for (std::size_t i = 0; i < zc.size(); ++i) {
        if (mc.requires_grad()) mc.grad()[i] += g[i];
        if (sc.requires_grad()) sc.grad()[i] += g[i] * eps[i];
      }
    });
  }
  return z;
}

// Sum over elements of KL(Gamma(alpha, beta) || Gamma(alpha_hat, beta_hat)):
//   (a - ah) psi(a) - lnG(a) + lnG(ah) + ah (ln b - ln bh) + a (bh - b) / b.
inline Tensor kl_gamma(const GammaParams& q, const GammaPrior& p) {
  detail::check_positive_params(q.alpha, q.beta, "kl_gamma");
  if (!(p.alpha_hat > 0.0) || !(p.beta_hat > 0.0))
    throw std::domain_error("kl_gamma: prior parameters must be positive");
  const Tensor& a = q.alpha;
  const Tensor& b = q.beta;
  const double lg_ah = vaca::lgamma(p.alpha_hat);
  const double ln_bh = std::log(p.beta_hat);
  Tensor t1 = mul(sub(a, p.alpha_hat), digamma(a));
  Tensor t2 = sub(Tensor::scalar(lg_ah), lgamma(a));
  Tensor t3 = mul(sub(log(b), ln_bh), p.alpha_hat);
  Tensor t4 = div(mul(a, sub(p.beta_hat, b)), b);
  return sum(add(add(t1, t2), add(t3, t4)));
}

// Sum over elements of KL(N(mu, sigma^2) || N(0, 1)):
//   -ln sigma + (sigma^2 + mu^2)/2 - 1/2.
inline Tensor kl_gaussian(const GaussianParams& q, const GaussianPrior& = {}) {
  if (q.mu.shape() != q.sigma.shape())
    throw std::invalid_argument("kl_gaussian: parameter shapes differ");
  for (std::size_t i = 0; i < q.sigma.size(); ++i)
    if (!(q.sigma[i] > 0.0)) throw std::domain_error("kl_gaussian: sigma must be positive");
  Tensor var_term = mul(add(square(q.sigma), square(q.mu)), 0.5);
  return sum(sub(sub(var_term, log(q.sigma)), 0.5));
}

// Elementwise posterior mean alpha / beta. This is the deterministic M handed
// to the regularized risk.
inline Tensor posterior_mean(const GammaParams& params) {
  detail::check_positive_params(params.alpha, params.beta, "posterior_mean");
  return div(params.alpha, params.beta);
}

}  // namespace vaca
