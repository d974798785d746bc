#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "vaca/gradcheck.hpp"
#include "vaca/losses.hpp"
#include "vaca/models.hpp"
#include "vaca/synth.hpp"

using Catch::Approx;
using vaca::Tensor;

TEST_CASE("scatter_latent places single-cell latents and zeroes empty bins", "[models]") {
  Tensor z = Tensor::from_data({1, 2}, {3.0, -1.0});
  Tensor grid = vaca::scatter_latent(z, {5}, 2, 3);  // bin (1,2)
  REQUIRE(grid.shape() == vaca::Shape{2, 3, 2});
  CHECK(grid[5 * 2 + 0] == 3.0);
  CHECK(grid[5 * 2 + 1] == -1.0);
  double other = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (i / 2 != 5) other += std::fabs(grid[i]);
  CHECK(other == 0.0);
}

TEST_CASE("scatter_latent mean-pools opposite latents to zero", "[models]") {
  Tensor z = Tensor::from_data({2, 3}, {1.0, 2.0, -0.5, -1.0, -2.0, 0.5});
  Tensor grid = vaca::scatter_latent(z, {0, 0}, 1, 1);
  for (std::size_t i = 0; i < grid.size(); ++i) CHECK(grid[i] == 0.0);
}

TEST_CASE("scatter_latent matches brute-force per-bin averaging", "[models]") {
  vaca::Rng rng(21);
  const int C = 17, H = 4, W = 5, b = 3;
  Tensor z = Tensor::uniform({C, b}, rng, -2.0, 2.0);
  std::vector<int> bins(C);
  for (auto& bi : bins) bi = static_cast<int>(rng.uniform_index(H * W));
  Tensor grid = vaca::scatter_latent(z, bins, H, W);

  for (int cell_bin = 0; cell_bin < H * W; ++cell_bin) {
    for (int k = 0; k < b; ++k) {
      double acc = 0.0;
      int count = 0;
      for (int c = 0; c < C; ++c)
        if (bins[c] == cell_bin) {
          acc += z[static_cast<std::size_t>(c) * b + k];
          ++count;
        }
      const double want = count ? acc / count : 0.0;
      CHECK(grid[static_cast<std::size_t>(cell_bin) * b + k] == Approx(want).margin(1e-12));
    }
  }
}

TEST_CASE("scatter_latent gradient", "[models]") {
  vaca::Rng rng(22);
  Tensor z = Tensor::uniform({5, 2}, rng, -1.0, 1.0, true);
  std::vector<int> bins{0, 3, 3, 2, 0};
  Tensor w = Tensor::uniform({2, 2, 2}, rng, -1.0, 1.0);
  std::vector<Tensor*> params{&z};
  CHECK(vaca::check_gradients(params, [&]() {
          return vaca::sum(vaca::mul(vaca::scatter_latent(z, bins, 2, 2), w));
        }) <= 1e-6);
}

TEST_CASE("conv2d gradient and shape", "[models]") {
  vaca::Rng rng(23);
  Tensor x = Tensor::uniform({4, 4, 2}, rng, -1.0, 1.0, true);
  Tensor w = Tensor::uniform({3, 3, 3, 2}, rng, -0.5, 0.5, true);
  Tensor b = Tensor::uniform({3}, rng, -0.1, 0.1, true);
  Tensor out = vaca::conv2d(x, w, b);
  REQUIRE(out.shape() == vaca::Shape{4, 4, 3});
  Tensor proj = Tensor::uniform({4, 4, 3}, rng, -1.0, 1.0);
  std::vector<Tensor*> params{&x, &w, &b};
  CHECK(vaca::check_gradients(params, [&]() {
          return vaca::sum(vaca::mul(vaca::conv2d(x, w, b), proj));
        }) <= 1e-5);
}

TEST_CASE("infer_gamma_params at zero init starts at unit posterior mean", "[models]") {
  vaca::Models models({vaca::Mode::placement, 8, 1}, 5);
  Tensor geom = Tensor::zeros({4, 4, 3});
  Tensor z_grid = Tensor::zeros({4, 4, 8});
  const auto gp = (*models.infer_geom)(geom, z_grid);
  REQUIRE(gp.alpha.shape() == vaca::Shape{4, 4, 3, 3});
  const double link0 = std::log1p(std::exp(0.0)) + vaca::kPositiveLinkFloor;
  for (std::size_t i = 0; i < gp.alpha.size(); ++i) {
    CHECK(gp.alpha[i] == Approx(link0));
    CHECK(gp.beta[i] == Approx(link0));
  }
  const Tensor mean = vaca::posterior_mean(gp);
  for (std::size_t i = 0; i < mean.size(); ++i) CHECK(mean[i] == Approx(1.0));
}

TEST_CASE("infer_gamma_params is deterministic and differentiable to the geometry",
          "[models]") {
  vaca::Models models({vaca::Mode::placement, 8, 1}, 6);
  vaca::Rng rng(31);
  Tensor geom = Tensor::uniform({3, 3, 3}, rng, 0.0, 1.0, true);
  Tensor z_grid = Tensor::uniform({3, 3, 8}, rng, -1.0, 1.0);

  const auto p1 = (*models.infer_geom)(geom, z_grid);
  const auto p2 = (*models.infer_geom)(geom, z_grid);
  CHECK(p1.alpha.values() == p2.alpha.values());
  for (std::size_t i = 0; i < p1.alpha.size(); ++i) CHECK(p1.alpha[i] > 0.0);

  // gradient to the geometry input
  std::vector<Tensor*> params{&geom};
  CHECK(vaca::check_gradients(params, [&]() {
          const auto gp = (*models.infer_geom)(geom, z_grid);
          return vaca::add(vaca::sum(gp.alpha), vaca::sum(vaca::square(gp.beta)));
        }) <= 1e-4);
}

TEST_CASE("normalized adjacency of a 3-clique has unit row sums", "[models]") {
  vaca::TopoGraph g;
  g.C = 3;
  g.b = 8;
  g.adj = {0, 1, 1, 1, 0, 1, 1, 1, 0};
  g.features.assign(24, 0.0);
  const Tensor a_hat = vaca::normalized_adjacency(g);
  for (int i = 0; i < 3; ++i) {
    double row = 0.0;
    for (int j = 0; j < 3; ++j) row += a_hat[static_cast<std::size_t>(i) * 3 + j];
    CHECK(row == Approx(1.0));
  }
}

TEST_CASE("infer_gaussian_params with zero features depends only on degree", "[models]") {
  vaca::Models models({vaca::Mode::placement, 8, 1}, 7);
  // path graph 0-1-2: cells 0 and 2 share degree 1
  vaca::TopoGraph g;
  g.C = 3;
  g.b = 8;
  g.adj = {0, 1, 0, 1, 0, 1, 0, 1, 0};
  g.features.assign(24, 0.0);
  Tensor feats = Tensor::zeros({3, 8});
  const auto gp = models.infer_topo(feats, vaca::normalized_adjacency(g));
  for (int k = 0; k < 8; ++k) {
    CHECK(gp.mu[0 * 8 + k] == Approx(gp.mu[2 * 8 + k]).margin(1e-15));
    CHECK(gp.sigma[0 * 8 + k] == Approx(gp.sigma[2 * 8 + k]).margin(1e-15));
  }
}

TEST_CASE("infer_gaussian_params is permutation equivariant", "[models]") {
  vaca::Models models({vaca::Mode::placement, 8, 1}, 8);
  const auto d = vaca::synth_generate(55, {6, 6, 9, 14, 1});
  const auto& topo = d.example.topo;
  const int C = topo.C;
  Tensor feats = Tensor::from_data({static_cast<std::size_t>(C), 8}, topo.features);
  const auto base = models.infer_topo(feats, vaca::normalized_adjacency(topo));

  vaca::Rng rng(66);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<int> perm(C);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = C - 1; i > 0; --i)
      std::swap(perm[i], perm[rng.uniform_index(static_cast<std::uint64_t>(i) + 1)]);

    vaca::TopoGraph pg;
    pg.C = C;
    pg.b = 8;
    pg.adj.assign(static_cast<std::size_t>(C) * C, 0);
    pg.features.assign(static_cast<std::size_t>(C) * 8, 0.0);
    for (int i = 0; i < C; ++i) {
      for (int j = 0; j < C; ++j)
        pg.adj[static_cast<std::size_t>(perm[i]) * C + perm[j]] = topo.at(i, j);
      for (int k = 0; k < 8; ++k) pg.feat(perm[i], k) = topo.feat(i, k);
    }
    Tensor pfeats = Tensor::from_data({static_cast<std::size_t>(C), 8}, pg.features);
    const auto got = models.infer_topo(pfeats, vaca::normalized_adjacency(pg));
    for (int i = 0; i < C; ++i)
      for (int k = 0; k < 8; ++k) {
        CHECK(got.mu[static_cast<std::size_t>(perm[i]) * 8 + k] ==
              base.mu[static_cast<std::size_t>(i) * 8 + k]);
        CHECK(got.sigma[static_cast<std::size_t>(perm[i]) * 8 + k] ==
              base.sigma[static_cast<std::size_t>(i) * 8 + k]);
      }
  }
}

TEST_CASE("decoder heads: shapes, sigmoid range, zero-latent midpoint", "[models]") {
  vaca::Models models({vaca::Mode::placement, 8, 1}, 9);
  vaca::Rng rng(10);
  Tensor m = Tensor::uniform({3, 3, 3, 3}, rng, 0.2, 2.0);
  Tensor z_grid = Tensor::uniform({3, 3, 8}, rng, -1.0, 1.0);
  Tensor z = Tensor::uniform({5, 8}, rng, -1.0, 1.0);

  Tensor phi_hat = models.obs.decode_geom(m, z_grid);
  REQUIRE(phi_hat.shape() == vaca::Shape{3, 3, 3});
  Tensor psi_hat = models.obs.decode_topo(z);
  REQUIRE(psi_hat.shape() == vaca::Shape{5, 8});

  Tensor probs = vaca::sigmoid(models.obs.adjacency_logits(z));
  for (std::size_t i = 0; i < probs.size(); ++i) {
    CHECK(probs[i] > 0.0);
    CHECK(probs[i] < 1.0);
  }
  Tensor zeros = Tensor::zeros({5, 8});
  Tensor mid = vaca::sigmoid(models.obs.adjacency_logits(zeros));
  for (std::size_t i = 0; i < mid.size(); ++i) CHECK(mid[i] == 0.5);
}

TEST_CASE("decoder gradients pass finite differences", "[models]") {
  vaca::Models models({vaca::Mode::placement, 8, 1}, 11);
  vaca::Rng rng(12);
  Tensor m = Tensor::uniform({2, 2, 3, 3}, rng, 0.2, 2.0, true);
  Tensor z_grid = Tensor::uniform({2, 2, 8}, rng, -1.0, 1.0, true);
  Tensor z = Tensor::uniform({4, 8}, rng, -1.0, 1.0, true);
  std::vector<Tensor*> params{&m, &z_grid, &z};
  CHECK(vaca::check_gradients(params, [&]() {
          Tensor a = vaca::sum(vaca::square(models.obs.decode_geom(m, z_grid)));
          Tensor b = vaca::sum(vaca::square(models.obs.decode_topo(z)));
          Tensor c = vaca::sum(vaca::sigmoid(models.obs.adjacency_logits(z)));
          return vaca::add(a, vaca::add(b, c));
        }) <= 1e-4);
}

TEST_CASE("regression model output is strictly positive and deterministic", "[models]") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    vaca::Models models({vaca::Mode::placement, 8, 1}, seed);
    vaca::Rng rng(seed + 100);
    Tensor x = Tensor::uniform({5, 6, 11}, rng, -3.0, 3.0);
    Tensor y1 = models.reg(x);
    Tensor y2 = models.reg(x);
    REQUIRE(y1.shape() == vaca::Shape{5, 6});
    CHECK(y1.values() == y2.values());
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] > 0.0);
  }
}

TEST_CASE("regression model is translation consistent in the interior", "[models]") {
  vaca::Models models({vaca::Mode::placement, 8, 1}, 13);
  vaca::Rng rng(14);
  const int H = 8, W = 10, C = 11;
  Tensor x = Tensor::uniform({H, W, C}, rng, -1.0, 1.0);
  // shift contents one column to the right
  Tensor xs = Tensor::zeros({H, W, C});
  for (int i = 0; i < H; ++i)
    for (int j = 1; j < W; ++j)
      for (int c = 0; c < C; ++c)
        xs[(static_cast<std::size_t>(i) * W + j) * C + c] =
            x[(static_cast<std::size_t>(i) * W + j - 1) * C + c];

  Tensor y = models.reg(x);
  Tensor ys = models.reg(xs);
  // stack of three 3x3 convs: margin 3 keeps the receptive field inside
  const int margin = 3;
  for (int i = margin; i < H - margin; ++i)
    for (int j = margin + 1; j < W - margin; ++j)
      CHECK(ys[static_cast<std::size_t>(i) * W + j] ==
            Approx(y[static_cast<std::size_t>(i) * W + j - 1]).margin(1e-12));
}

TEST_CASE("model heads stay valid for large-magnitude inputs", "[models]") {
  vaca::Models models({vaca::Mode::placement, 8, 1}, 15);
  vaca::Rng rng(16);
  Tensor geom = Tensor::uniform({3, 3, 3}, rng, -1e3, 1e3);
  Tensor z_grid = Tensor::uniform({3, 3, 8}, rng, -1e3, 1e3);
  const auto gp = (*models.infer_geom)(geom, z_grid);
  for (std::size_t i = 0; i < gp.alpha.size(); ++i) {
    CHECK(std::isfinite(gp.alpha[i]));
    CHECK(gp.alpha[i] > 0.0);
    CHECK(gp.beta[i] > 0.0);
  }
  Tensor feats = Tensor::uniform({6, 8}, rng, -1e3, 1e3);
  vaca::TopoGraph g;
  g.C = 6;
  g.b = 8;
  g.adj.assign(36, 0);
  for (int i = 0; i < 5; ++i) {
    g.adj[static_cast<std::size_t>(i) * 6 + i + 1] = 1;
    g.adj[static_cast<std::size_t>(i + 1) * 6 + i] = 1;
  }
  const auto gauss = models.infer_topo(feats, vaca::normalized_adjacency(g));
  for (std::size_t i = 0; i < gauss.sigma.size(); ++i) {
    CHECK(std::isfinite(gauss.mu[i]));
    CHECK(gauss.sigma[i] > 0.0);
  }
}

TEST_CASE("every model's parameter gradients match finite differences", "[models]") {
  vaca::Models models({vaca::Mode::placement, 8, 1}, 17);
  const auto d = vaca::synth_generate(70, {4, 4, 5, 8, 1});
  const vaca::LossConfig cfg;
  const auto in = vaca::make_vi_inputs(d.example, d.grid, cfg);
  Tensor target = Tensor::from_data({4, 4}, d.example.target.v);

  // theta through the prediction path
  {
    Tensor z_grid = Tensor::zeros({4, 4, 8});
    auto named = models.theta_params();
    std::vector<Tensor*> params;
    for (auto& [name, t] : named) params.push_back(t);
    const double err = vaca::check_gradients(params, [&]() {
      Tensor x = vaca::cat_last(in.geom, z_grid);
      return vaca::mse(models.reg(x), target);
    });
    CHECK(err <= 1e-4);
  }

  // omega1 / omega2 / eta through deterministic heads
  {
    auto named = models.vi_params();
    std::vector<Tensor*> params;
    for (auto& [name, t] : named) params.push_back(t);
    const double err = vaca::check_gradients(params, [&]() {
      const auto gauss = models.infer_topo(in.topo, in.a_hat);
      Tensor z_grid = vaca::scatter_latent(gauss.mu, in.cell_bin, 4, 4);
      const auto gamma = (*models.infer_geom)(in.geom, z_grid);
      Tensor m = vaca::posterior_mean(gamma);
      Tensor phi_hat = models.obs.decode_geom(m, z_grid);
      Tensor psi_hat = models.obs.decode_topo(gauss.mu);
      Tensor rec = vaca::reconstruction_loss(in.geom, phi_hat, in.topo, psi_hat, in.adj,
                                             models.obs.adjacency_logits(gauss.mu));
      return vaca::add(rec, vaca::add(vaca::sum(vaca::square(gauss.sigma)),
                                      vaca::sum(vaca::square(gamma.alpha))));
    });
    CHECK(err <= 1e-4);
  }
}
