#pragma once

// The four learnable networks: the Gamma-posterior inference net over the
// grid, the Gaussian-posterior graph net over cells, the observation
// decoders, and the congestion regressor. Grid tensors are HWC row-major
// throughout, matching the on-disk layouts.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vaca/distributions.hpp"
#include "vaca/features.hpp"
#include "vaca/tensor.hpp"

namespace vaca {

inline constexpr double kPositiveLinkFloor = 1e-4;

// softplus(x) + floor: the positivity link used by every posterior head.
inline Tensor positive_link(const Tensor& pre) {
  return add(softplus(pre), kPositiveLinkFloor);
}

// Mean-pools cell latents into the bins holding the cell centers; empty bins
// stay zero. Z is {C,b}, output {H,W,b}.
inline Tensor scatter_latent(const Tensor& z, const std::vector<int>& cell_bin, int H, int W) {
  if (z.ndim() != 2) throw std::invalid_argument("scatter_latent: Z must be C x b");
  const std::size_t C = z.shape()[0], b = z.shape()[1];
  if (cell_bin.size() != C)
    throw std::invalid_argument("scatter_latent: cell bin count does not match Z rows");
  const std::size_t bins = static_cast<std::size_t>(H) * W;
  std::vector<double> count(bins, 0.0);
  for (int bi : cell_bin) {
    if (bi < 0 || static_cast<std::size_t>(bi) >= bins)
      throw std::invalid_argument("scatter_latent: cell bin out of range");
    count[bi] += 1.0;
  }
  Tensor out = Tensor::zeros({static_cast<std::size_t>(H), static_cast<std::size_t>(W), b});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < b; ++k)
      out[cell_bin[c] * b + k] += z[c * b + k] / count[cell_bin[c]];
  detail::ensure_finite(out, "scatter_latent");
  if (detail::taping(z)) {
    out.set_requires_grad(true);
    Tensor zc = z, oc = out;
    Tape::active()->record("scatter_latent", [zc, oc, cell_bin, count, b]() mutable {
      for (std::size_t c = 0; c < cell_bin.size(); ++c)
        for (std::size_t k = 0; k < b; ++k)
          zc.grad()[c * b + k] += oc.grad()[cell_bin[c] * b + k] / count[cell_bin[c]];
    });
  }
  return out;
}

// 2-D convolution over an HWC grid, odd square kernel, stride 1, zero
// padding that preserves H x W. Weight layout {out_c, k, k, in_c}.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.ndim() != 3 || w.ndim() != 4)
    throw std::invalid_argument("conv2d: expects HWC input and OKKI weights");
  const int H = static_cast<int>(x.shape()[0]);
  const int W = static_cast<int>(x.shape()[1]);
  const int in_c = static_cast<int>(x.shape()[2]);
  const int out_c = static_cast<int>(w.shape()[0]);
  const int k = static_cast<int>(w.shape()[1]);
  if (static_cast<int>(w.shape()[2]) != k || static_cast<int>(w.shape()[3]) != in_c ||
      static_cast<int>(bias.size()) != out_c || k % 2 == 0)
    throw std::invalid_argument("conv2d: weight/bias shapes inconsistent with input");
  const int pad = k / 2;

  Tensor out = Tensor::zeros({static_cast<std::size_t>(H), static_cast<std::size_t>(W),
                              static_cast<std::size_t>(out_c)});
  auto xat = [&](int i, int j, int c) -> double {
    return x[(static_cast<std::size_t>(i) * W + j) * in_c + c];
  };
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int o = 0; o < out_c; ++o) {
        double acc = bias[o];
        for (int u = 0; u < k; ++u) {
          const int ii = i + u - pad;
          if (ii < 0 || ii >= H) continue;
          for (int v = 0; v < k; ++v) {
            const int jj = j + v - pad;
            if (jj < 0 || jj >= W) continue;
            const std::size_t wbase = ((static_cast<std::size_t>(o) * k + u) * k + v) * in_c;
            for (int c = 0; c < in_c; ++c) acc += xat(ii, jj, c) * w[wbase + c];
          }
        }
        out[(static_cast<std::size_t>(i) * W + j) * out_c + o] = acc;
      }
  detail::ensure_finite(out, "conv2d");

  if (Tape::active() && (x.requires_grad() || w.requires_grad() || bias.requires_grad())) {
    out.set_requires_grad(true);
    Tensor xc = x, wc = w, bc = bias, oc = out;
    Tape::active()->record("conv2d", [xc, wc, bc, oc, H, W, in_c, out_c, k, pad]() mutable {
      const double* g = oc.grad();
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
          for (int o = 0; o < out_c; ++o) {
            const double go = g[(static_cast<std::size_t>(i) * W + j) * out_c + o];
            if (bc.requires_grad()) bc.grad()[o] += go;
            for (int u = 0; u < k; ++u) {
              const int ii = i + u - pad;
              if (ii < 0 || ii >= H) continue;
              for (int v = 0; v < k; ++v) {
                const int jj = j + v - pad;
                if (jj < 0 || jj >= W) continue;
                const std::size_t wbase =
                    ((static_cast<std::size_t>(o) * k + u) * k + v) * in_c;
                const std::size_t xbase = (static_cast<std::size_t>(ii) * W + jj) * in_c;
                for (int c = 0; c < in_c; ++c) {
                  if (xc.requires_grad()) xc.grad()[xbase + c] += go * wc[wbase + c];
                  if (wc.requires_grad()) wc.grad()[wbase + c] += go * xc[xbase + c];
                }
              }
            }
          }
    });
  }
  return out;
}

namespace detail {
inline Tensor init_weight(Shape shape, std::size_t fan_in, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), rng, -s, s, true);
}
}  // namespace detail

struct Conv2dLayer {
  Tensor w, b;

  Conv2dLayer() = default;
  Conv2dLayer(int in_c, int out_c, int k, Rng& rng, bool zero_init = false) {
    const Shape ws{static_cast<std::size_t>(out_c), static_cast<std::size_t>(k),
                   static_cast<std::size_t>(k), static_cast<std::size_t>(in_c)};
    if (zero_init) {
      w = Tensor::zeros(ws, true);
      b = Tensor::zeros({static_cast<std::size_t>(out_c)}, true);
    } else {
      w = detail::init_weight(ws, static_cast<std::size_t>(k) * k * in_c, rng);
      b = detail::init_weight({static_cast<std::size_t>(out_c)},
                              static_cast<std::size_t>(k) * k * in_c, rng);
    }
  }
  Tensor operator()(const Tensor& x) const { return conv2d(x, w, b); }
};

struct LinearLayer {
  Tensor w, b;

  LinearLayer() = default;
  LinearLayer(int in, int out, Rng& rng, bool zero_init = false) {
    if (zero_init) {
      w = Tensor::zeros({static_cast<std::size_t>(in), static_cast<std::size_t>(out)}, true);
      b = Tensor::zeros({static_cast<std::size_t>(out)}, true);
    } else {
      w = detail::init_weight({static_cast<std::size_t>(in), static_cast<std::size_t>(out)},
                              in, rng);
      b = detail::init_weight({static_cast<std::size_t>(out)}, in, rng);
    }
  }
  // x {n, in} -> {n, out}
  Tensor operator()(const Tensor& x) const { return add(matmul(x, w), b); }
};

// Symmetrically normalized adjacency with self-loops:
// D^{-1/2} (A + I) D^{-1/2}, as a constant tensor.
inline Tensor normalized_adjacency(const TopoGraph& g) {
  const int C = g.C;
  std::vector<double> deg(C, 0.0);
  for (int i = 0; i < C; ++i) {
    deg[i] = 1.0;  // self loop
    for (int j = 0; j < C; ++j) deg[i] += g.at(i, j);
  }
  Tensor a = Tensor::zeros({static_cast<std::size_t>(C), static_cast<std::size_t>(C)});
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) {
      const double v = i == j ? 1.0 : static_cast<double>(g.at(i, j));
      if (v != 0.0) a[static_cast<std::size_t>(i) * C + j] = v / std::sqrt(deg[i] * deg[j]);
    }
  return a;
}

// Inference model over the grid: two 3x3 convolutions mapping the geometry
// channels concatenated with the pooled latent onto per-window Gamma
// posterior parameters. The final layer starts at zero so training starts at
// the prior.
struct InferGeom {
  int a = 1;
  Conv2dLayer c1, c2;

  InferGeom() = default;
  InferGeom(int geom_channels, int b, int a_, int hidden, Rng& rng) : a(a_) {
    const int win = (2 * a_ + 1) * (2 * a_ + 1);
    c1 = Conv2dLayer(geom_channels + b, hidden, 3, rng);
    c2 = Conv2dLayer(hidden, 2 * win, 3, rng, /*zero_init=*/true);
  }

  GammaParams operator()(const Tensor& geom_hwc, const Tensor& z_grid) const {
    const int win = (2 * a + 1) * (2 * a + 1);
    Tensor x = cat_last(geom_hwc, z_grid);
    Tensor h = relu(c1(x));
    Tensor head = c2(h);  // {H, W, 2*win}
    const std::size_t H = head.shape()[0], W = head.shape()[1];
    Tensor pre_alpha = slice_last(head, 0, win);
    Tensor pre_beta = slice_last(head, win, win);
    const Shape win_shape{H, W, static_cast<std::size_t>(2 * a + 1),
                          static_cast<std::size_t>(2 * a + 1)};
    return {reshape(positive_link(pre_alpha), win_shape),
            reshape(positive_link(pre_beta), win_shape)};
  }

  std::vector<std::pair<std::string, Tensor*>> named_params(const std::string& prefix) {
    return {{prefix + ".c1.w", &c1.w},
            {prefix + ".c1.b", &c1.b},
            {prefix + ".c2.w", &c2.w},
            {prefix + ".c2.b", &c2.b}};
  }
};

// Inference model over cells: two graph-convolution layers
// X' = relu(A_hat X W1 + b1), [mu || pre-sigma] = A_hat X' W2 + b2.
struct InferTopo {
  int b = kTopoFeatureWidth;
  Tensor w1, b1, w2, b2;

  InferTopo() = default;
  InferTopo(int b_, int hidden, Rng& rng) : b(b_) {
    w1 = detail::init_weight({static_cast<std::size_t>(b_), static_cast<std::size_t>(hidden)},
                             b_, rng);
    b1 = detail::init_weight({static_cast<std::size_t>(hidden)}, b_, rng);
    w2 = Tensor::zeros({static_cast<std::size_t>(hidden), static_cast<std::size_t>(2 * b_)},
                       true);
    b2 = Tensor::zeros({static_cast<std::size_t>(2 * b_)}, true);
  }

  GaussianParams operator()(const Tensor& features, const Tensor& a_hat) const {
    Tensor h = relu(add(matmul(a_hat, matmul(features, w1)), b1));
    Tensor head = add(matmul(a_hat, matmul(h, w2)), b2);  // {C, 2b}
    Tensor mu = slice_last(head, 0, b);
    Tensor sigma = positive_link(slice_last(head, b, b));
    return {mu, sigma};
  }

  std::vector<std::pair<std::string, Tensor*>> named_params(const std::string& prefix) {
    return {{prefix + ".w1", &w1}, {prefix + ".b1", &b1}, {prefix + ".w2", &w2},
            {prefix + ".b2", &b2}};
  }
};

// Observation model: per-grid-position MLP reconstructing the geometry
// channels from [M-window || pooled Z], per-cell MLP reconstructing the
// topological features from z, and the parameter-free sigmoid(Z Z^T)
// adjacency head.
struct ObsModel {
  LinearLayer g1, g2;  // geometry decoder (absent in logic-synthesis mode)
  LinearLayer t1, t2;  // topology decoder
  bool has_geom = true;

  ObsModel() = default;
  ObsModel(int win, int b, int hidden, Rng& rng, bool with_geom) : has_geom(with_geom) {
    if (with_geom) {
      g1 = LinearLayer(win + b, hidden, rng);
      g2 = LinearLayer(hidden, 3, rng);
    }
    t1 = LinearLayer(b, hidden, rng);
    t2 = LinearLayer(hidden, b, rng);
  }

  // m {H,W,k,k}, z_grid {H,W,b} -> {H,W,3}
  Tensor decode_geom(const Tensor& m, const Tensor& z_grid) const {
    if (!has_geom) throw std::logic_error("ObsModel: geometry decoder absent in this mode");
    const std::size_t H = z_grid.shape()[0], W = z_grid.shape()[1];
    const std::size_t win = m.size() / (H * W);
    Tensor rows = cat_last(reshape(m, {H, W, win}), z_grid);        // {H,W,win+b}
    Tensor flat = reshape(rows, {H * W, win + z_grid.shape()[2]});  // {HW, win+b}
    Tensor rec = g2(relu(g1(flat)));
    return reshape(rec, {H, W, 3});
  }

  // z {C,b} -> {C,b}
  Tensor decode_topo(const Tensor& z) const { return t2(relu(t1(z))); }

  // z {C,b} -> logits {C,C}; sigmoid applied by the reconstruction loss
  Tensor adjacency_logits(const Tensor& z) const { return matmul(z, transpose(z)); }

  std::vector<std::pair<std::string, Tensor*>> named_params(const std::string& prefix) {
    std::vector<std::pair<std::string, Tensor*>> out;
    if (has_geom) {
      out.insert(out.end(), {{prefix + ".g1.w", &g1.w},
                             {prefix + ".g1.b", &g1.b},
                             {prefix + ".g2.w", &g2.w},
                             {prefix + ".g2.b", &g2.b}});
    }
    out.insert(out.end(), {{prefix + ".t1.w", &t1.w},
                           {prefix + ".t1.b", &t1.b},
                           {prefix + ".t2.w", &t2.w},
                           {prefix + ".t2.b", &t2.b}});
    return out;
  }
};

// Congestion regressor: three 3x3 convolutions with a softplus head keeping
// the output strictly positive. Placement mode consumes geometry plus pooled
// latents; logic-synthesis mode consumes pooled latents alone.
struct RegModel {
  Conv2dLayer c1, c2, c3;

  RegModel() = default;
  RegModel(int in_channels, int hidden, Rng& rng) {
    c1 = Conv2dLayer(in_channels, hidden, 3, rng);
    c2 = Conv2dLayer(hidden, hidden, 3, rng);
    c3 = Conv2dLayer(hidden, 1, 3, rng);
  }

  // x {H,W,in} -> {H,W} strictly positive
  Tensor operator()(const Tensor& x) const {
    Tensor h = relu(c1(x));
    h = relu(c2(h));
    Tensor out = softplus(c3(h));  // {H,W,1}
    return reshape(out, {x.shape()[0], x.shape()[1]});
  }

  std::vector<std::pair<std::string, Tensor*>> named_params(const std::string& prefix) {
    return {{prefix + ".c1.w", &c1.w}, {prefix + ".c1.b", &c1.b},
            {prefix + ".c2.w", &c2.w}, {prefix + ".c2.b", &c2.b},
            {prefix + ".c3.w", &c3.w}, {prefix + ".c3.b", &c3.b}};
  }
};

enum class Mode { placement, logic_synthesis };

struct ModelArch {
  Mode mode = Mode::placement;
  int b = kTopoFeatureWidth;
  int a = 1;
  int geom_channels = 3;
  int infer_hidden = 16;
  int reg_hidden = 32;
  int reg_in() const {
    return mode == Mode::placement ? geom_channels + b : b;
  }
  int window() const { return (2 * a + 1) * (2 * a + 1); }
};

struct Models {
  ModelArch arch;
  std::optional<InferGeom> infer_geom;  // absent in logic-synthesis mode
  InferTopo infer_topo;
  ObsModel obs;
  RegModel reg;

  Models() = default;
  Models(const ModelArch& arch_, std::uint64_t seed) : arch(arch_) {
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));
    if (arch.mode == Mode::placement)
      infer_geom.emplace(arch.geom_channels, arch.b, arch.a, arch.infer_hidden, rng);
    infer_topo = InferTopo(arch.b, arch.infer_hidden, rng);
    obs = ObsModel(arch.window(), arch.b, arch.infer_hidden, rng,
                   arch.mode == Mode::placement);
    reg = RegModel(arch.reg_in(), arch.reg_hidden, rng);
  }

  std::vector<std::pair<std::string, Tensor*>> theta_params() {
    return reg.named_params("theta");
  }
  std::vector<std::pair<std::string, Tensor*>> vi_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    if (infer_geom) {
      auto p = infer_geom->named_params("omega1");
      out.insert(out.end(), p.begin(), p.end());
    }
    auto p2 = infer_topo.named_params("omega2");
    out.insert(out.end(), p2.begin(), p2.end());
    auto p3 = obs.named_params("eta");
    out.insert(out.end(), p3.begin(), p3.end());
    return out;
  }
  std::vector<std::pair<std::string, Tensor*>> named_params() {
    auto out = theta_params();
    auto vi = vi_params();
    out.insert(out.end(), vi.begin(), vi.end());
    return out;
  }
};

}  // namespace vaca
