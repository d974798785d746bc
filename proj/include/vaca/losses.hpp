#pragma once

// Objective terms: supervised risk with the neighborhood label-correlation
// regularizer, the ELBO (reconstruction plus the two KL divergences), the
// compatibility loss tying correlation weights to the ground-truth local
// similarity, the combined variational objective, and the logic-synthesis
// degenerations that drop every geometry-dependent term.

#include <optional>
#include <span>

#include "vaca/distributions.hpp"
#include "vaca/metrics.hpp"
#include "vaca/models.hpp"
#include "vaca/synth.hpp"

namespace vaca {

struct LossConfig {
  double lambda = 0.1;              // regularizer weight
  double tau = 1.0;                 // compatibility weight
  int a = 1;                        // neighborhood radius
  std::optional<double> sigma_sim;  // similarity bandwidth; empty = 0.5 * std(target)
};

inline void validate_loss_config(const LossConfig& cfg) {
  if (cfg.lambda < 0.0 || cfg.tau < 0.0)
    throw std::invalid_argument("loss config: lambda and tau must be nonnegative");
  if (cfg.a < 1) throw std::invalid_argument("loss config: neighborhood radius must be >= 1");
  if (cfg.sigma_sim && !(*cfg.sigma_sim > 0.0))
    throw std::invalid_argument("loss config: sigma_sim must be positive");
}

// Value of the window slot (h, w) of the neighborhood around grid position
// (j, k); indices are 0-based with h, w in [0, 2a]. Positions falling off the
// map clamp to the center value.
inline double neighborhood_value(const GridMap& pred, int j, int k, int h, int w, int a) {
  const int r = j + h - a;
  const int v = k + w - a;
  if (r < 0 || r >= pred.H || v < 0 || v >= pred.W) return pred.at(j, k);
  return pred.at(r, v);
}

// Window-weighted absolute deviation of one grid position from its
// neighborhood: sum_{h,w} m[h,w] * |pred[j,k] - pred[r,v]|.
inline double label_corr_value(const GridMap& pred, const Tensor& m, int j, int k, int a) {
  const int win = 2 * a + 1;
  const std::size_t base = (static_cast<std::size_t>(j) * pred.W + k) * win * win;
  double acc = 0.0;
  for (int h = 0; h < win; ++h)
    for (int w = 0; w < win; ++w)
      acc += m[base + static_cast<std::size_t>(h) * win + w] *
             std::fabs(pred.at(j, k) - neighborhood_value(pred, j, k, h, w, a));
  return acc;
}

// Differentiable sum of label_corr_value over every grid position.
// pred {H,W}, m {H,W,2a+1,2a+1}.
inline Tensor reg_loss(const Tensor& pred, const Tensor& m, int a) {
  if (pred.ndim() != 2 || m.ndim() != 4)
    throw std::invalid_argument("reg_loss: expects pred {H,W} and m {H,W,k,k}");
  const int H = static_cast<int>(pred.shape()[0]);
  const int W = static_cast<int>(pred.shape()[1]);
  const int win = 2 * a + 1;
  if (static_cast<int>(m.shape()[0]) != H || static_cast<int>(m.shape()[1]) != W ||
      static_cast<int>(m.shape()[2]) != win || static_cast<int>(m.shape()[3]) != win)
    throw std::invalid_argument("reg_loss: weight tensor shape mismatch");

  double acc = 0.0;
  for (int j = 0; j < H; ++j)
    for (int k = 0; k < W; ++k) {
      const std::size_t base = (static_cast<std::size_t>(j) * W + k) * win * win;
      const double center = pred[static_cast<std::size_t>(j) * W + k];
      for (int h = 0; h < win; ++h)
        for (int w = 0; w < win; ++w) {
          const int r = j + h - a, v = k + w - a;
          const double nb = (r < 0 || r >= H || v < 0 || v >= W)
                                ? center
                                : pred[static_cast<std::size_t>(r) * W + v];
          acc += m[base + static_cast<std::size_t>(h) * win + w] * std::fabs(center - nb);
        }
    }
  Tensor out = Tensor::scalar(acc);
  detail::ensure_finite(out, "reg_loss");

  if (Tape::active() && (pred.requires_grad() || m.requires_grad())) {
    out.set_requires_grad(true);
    Tensor pc = pred, mc = m, oc = out;
    Tape::active()->record("reg_loss", [pc, mc, oc, H, W, win, a]() mutable {
      const double g = oc.grad()[0];
      for (int j = 0; j < H; ++j)
        for (int k = 0; k < W; ++k) {
          const std::size_t base = (static_cast<std::size_t>(j) * W + k) * win * win;
          const std::size_t cidx = static_cast<std::size_t>(j) * W + k;
          const double center = pc[cidx];
          for (int h = 0; h < win; ++h)
            for (int w = 0; w < win; ++w) {
              const int r = j + h - a, v = k + w - a;
              const bool inside = !(r < 0 || r >= H || v < 0 || v >= W);
              const std::size_t nidx = inside ? static_cast<std::size_t>(r) * W + v : cidx;
              const double diff = center - pc[nidx];
              const std::size_t midx = base + static_cast<std::size_t>(h) * win + w;
              if (mc.requires_grad()) mc.grad()[midx] += g * std::fabs(diff);
              if (pc.requires_grad() && diff != 0.0) {
                const double s = g * mc[midx] * (diff > 0.0 ? 1.0 : -1.0);
                pc.grad()[cidx] += s;
                pc.grad()[nidx] -= s;
              }
            }
        }
    });
  }
  return out;
}

inline Tensor mse(const Tensor& pred, const Tensor& target) {
  return mean(square(sub(pred, target)));
}

// Supervised risk of one example: MSE plus lambda times the label-correlation
// regularizer. lambda = 0 skips the regularizer entirely, making the path
// identical to plain MSE training.
inline Tensor risk_example(const Tensor& pred, const Tensor& target, const Tensor& m,
                           const LossConfig& cfg) {
  Tensor loss = mse(pred, target);
  if (cfg.lambda != 0.0) loss = add(loss, mul(reg_loss(pred, m, cfg.a), cfg.lambda));
  return loss;
}

// Similarity bandwidth: configured value, or half the standard deviation of
// the target map (floored to keep the exponent finite on constant maps).
inline double similarity_sigma(const GridMap& target, const LossConfig& cfg) {
  if (cfg.sigma_sim) return *cfg.sigma_sim;
  double mean = 0.0;
  for (double v : target.v) mean += v;
  mean /= static_cast<double>(target.v.size());
  double var = 0.0;
  for (double v : target.v) var += (v - mean) * (v - mean);
  var /= static_cast<double>(target.v.size());
  return std::max(0.5 * std::sqrt(var), 1e-6);
}

// Local similarity tensor of the ground-truth map:
// s = exp(-|y[j,k] - y[r,v]| / (2 sigma^2)), out-of-range neighbors clamp to
// the center and therefore score 1.
inline Tensor local_similarity(const GridMap& target, int a, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("local_similarity: sigma must be positive");
  const int win = 2 * a + 1;
  const double denom = 2.0 * sigma * sigma;
  Tensor out = Tensor::zeros({static_cast<std::size_t>(target.H),
                              static_cast<std::size_t>(target.W),
                              static_cast<std::size_t>(win), static_cast<std::size_t>(win)});
  std::size_t idx = 0;
  for (int j = 0; j < target.H; ++j)
    for (int k = 0; k < target.W; ++k)
      for (int h = 0; h < win; ++h)
        for (int w = 0; w < win; ++w)
          out[idx++] = std::exp(
              -std::fabs(target.at(j, k) - neighborhood_value(target, j, k, h, w, a)) / denom);
  return out;
}

// L1 distance between the correlation weights and the similarity tensor.
inline Tensor compatibility_loss(const Tensor& m, const Tensor& s) {
  if (m.shape() != s.shape())
    throw std::invalid_argument("compatibility_loss: shape mismatch");
  return sum(abs(sub(m, s)));
}

// Squared Frobenius reconstruction of geometry, topology and adjacency;
// the sigmoid is applied to the adjacency logits here.
inline Tensor reconstruction_loss(const Tensor& phi, const Tensor& phi_hat, const Tensor& psi,
                                  const Tensor& psi_hat, const Tensor& adj,
                                  const Tensor& adj_logits) {
  Tensor geom_term = sum(square(sub(phi_hat, phi)));
  Tensor topo_term = sum(square(sub(psi_hat, psi)));
  Tensor adj_term = sum(square(sub(sigmoid(adj_logits), adj)));
  return add(add(geom_term, topo_term), adj_term);
}

// Constant per-example tensors consumed by the variational objective.
struct ViInputs {
  Tensor geom;        // {H,W,3}; defined only in placement mode
  Tensor topo;        // {C,b}
  Tensor adj;         // {C,C} binary
  Tensor a_hat;       // normalized adjacency with self-loops
  Tensor similarity;  // {H,W,2a+1,2a+1}
  std::vector<int> cell_bin;
  int H = 0;
  int W = 0;
};

// Assembles the constant tensors of one example. The target map is consumed
// only through its similarity tensor (scale-invariant when sigma_sim is
// derived from the target's own spread). Logic-synthesis mode leaves the
// geometry channels undefined and zeroes the positional feature columns.
inline ViInputs make_vi_inputs(const Example& ex, const GridSpec& grid, const LossConfig& cfg,
                               Mode mode = Mode::placement) {
  ViInputs in;
  in.H = grid.H;
  in.W = grid.W;
  in.cell_bin = ex.cell_bin;
  if (mode == Mode::placement) {
    in.geom = Tensor::from_data({static_cast<std::size_t>(grid.H),
                                 static_cast<std::size_t>(grid.W), 3},
                                ex.geom.data);
  }
  std::vector<double> topo = ex.topo.features;
  if (mode == Mode::logic_synthesis && ex.topo.b >= 6) {
    for (int c = 0; c < ex.topo.C; ++c) {
      topo[static_cast<std::size_t>(c) * ex.topo.b + 4] = 0.0;
      topo[static_cast<std::size_t>(c) * ex.topo.b + 5] = 0.0;
    }
  }
  in.topo = Tensor::from_data({static_cast<std::size_t>(ex.topo.C),
                               static_cast<std::size_t>(ex.topo.b)},
                              std::move(topo));
  std::vector<double> adj(ex.topo.adj.begin(), ex.topo.adj.end());
  in.adj = Tensor::from_data({static_cast<std::size_t>(ex.topo.C),
                              static_cast<std::size_t>(ex.topo.C)},
                             std::move(adj));
  in.a_hat = normalized_adjacency(ex.topo);
  if (mode == Mode::placement)
    in.similarity = local_similarity(ex.target, cfg.a, similarity_sigma(ex.target, cfg));
  return in;
}

// Per-example terms of the variational objective, kept separate both for the
// divergence diagnostics and for the logic-mode equivalence checks.
struct ViBreakdown {
  Tensor rec_geom;   // scalar; undefined in logic mode
  Tensor rec_topo;   // scalar
  Tensor rec_adj;    // scalar
  Tensor kl_gamma_term;  // scalar; undefined in logic mode
  Tensor kl_gauss_term;  // scalar
  Tensor compat;     // scalar; undefined in logic mode
  GammaParams gamma;
  GaussianParams gauss;
  Tensor z_sample;   // {C,b}
  Tensor m_sample;   // {H,W,k,k}; undefined in logic mode
  Tensor z_grid;     // {H,W,b}
};

namespace detail {
template <class Fn>
inline Tensor vi_term(const char* term, Fn&& fn) {
  try {
    Tensor t = fn();
    ensure_finite(t, term);
    return t;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("vi objective: term '") + term +
                             "' diverged: " + e.what());
  }
}
}  // namespace detail

// Runs the inference and observation models on one example with a single
// Monte-Carlo sample of Z (and of M in placement mode).
inline ViBreakdown vi_forward(const ViInputs& in, Models& models, const GammaPrior& prior,
                              Rng& rng, NoiseCache* cache = nullptr) {
  ViBreakdown out;
  out.gauss = models.infer_topo(in.topo, in.a_hat);
  out.z_sample = vaca::sample_gaussian(out.gauss, rng, cache);
  out.z_grid = scatter_latent(out.z_sample, in.cell_bin, in.H, in.W);

  out.kl_gauss_term = detail::vi_term("kl_gaussian", [&] { return kl_gaussian(out.gauss); });
  out.rec_topo = detail::vi_term("rec_topo", [&] {
    return sum(square(sub(models.obs.decode_topo(out.z_sample), in.topo)));
  });
  out.rec_adj = detail::vi_term("rec_adj", [&] {
    return sum(square(sub(sigmoid(models.obs.adjacency_logits(out.z_sample)), in.adj)));
  });

  if (models.arch.mode == Mode::placement) {
    if (!models.infer_geom) throw std::logic_error("vi_forward: missing geometry model");
    out.gamma = (*models.infer_geom)(in.geom, out.z_grid);
    out.m_sample = vaca::sample_gamma(out.gamma, rng, cache);
    out.kl_gamma_term =
        detail::vi_term("kl_gamma", [&] { return kl_gamma(out.gamma, prior); });
    out.rec_geom = detail::vi_term("rec_geom", [&] {
      return sum(square(sub(models.obs.decode_geom(out.m_sample, out.z_grid), in.geom)));
    });
    out.compat = detail::vi_term("compatibility", [&] {
      return compatibility_loss(out.m_sample, in.similarity);
    });
  }
  return out;
}

// Batch aggregation: reconstruction is averaged over the batch, the KL terms
// and the compatibility loss are summed.
struct ViBatchTerms {
  Tensor rec;
  Tensor kl;
  Tensor compat;  // zero scalar in logic mode
  std::vector<ViBreakdown> per_example;
};

inline ViBatchTerms vi_batch(std::span<const ViInputs* const> batch, Models& models,
                             const GammaPrior& prior, Rng& rng, NoiseCache* cache = nullptr) {
  if (batch.empty()) throw std::invalid_argument("vi_batch: empty batch");
  ViBatchTerms terms;
  Tensor rec_sum = Tensor::scalar(0.0);
  Tensor kl_sum = Tensor::scalar(0.0);
  Tensor compat_sum = Tensor::scalar(0.0);
  for (const ViInputs* in : batch) {
    ViBreakdown b = vi_forward(*in, models, prior, rng, cache);
    Tensor rec = add(b.rec_topo, b.rec_adj);
    if (b.rec_geom.defined()) rec = add(rec, b.rec_geom);
    rec_sum = add(rec_sum, rec);
    kl_sum = add(kl_sum, b.kl_gauss_term);
    if (b.kl_gamma_term.defined()) kl_sum = add(kl_sum, b.kl_gamma_term);
    if (b.compat.defined()) compat_sum = add(compat_sum, b.compat);
    terms.per_example.push_back(std::move(b));
  }
  terms.rec = mul(rec_sum, 1.0 / static_cast<double>(batch.size()));
  terms.kl = kl_sum;
  terms.compat = compat_sum;
  return terms;
}

// ELBO: batch-mean reconstruction log-likelihood (entering negatively) minus
// the KL divergences.
inline Tensor elbo(const ViBatchTerms& terms) { return neg(add(terms.rec, terms.kl)); }

// Variational objective L_VI = tau * L_o - L_ELBO.
inline Tensor vi_loss(const ViBatchTerms& terms, const LossConfig& cfg) {
  Tensor loss = neg(elbo(terms));
  if (cfg.tau != 0.0) loss = add(loss, mul(terms.compat, cfg.tau));
  return loss;
}

// Logic-synthesis degenerations: the variational objective loses every
// geometry term (vi_batch already produces none in logic mode), and the risk
// is plain supervised loss on the latent-feature regression.
inline Tensor vi_loss_logic(const ViBatchTerms& terms) { return neg(elbo(terms)); }

inline Tensor risk_logic(const Tensor& pred, const Tensor& target) {
  return mse(pred, target);
}

}  // namespace vaca
