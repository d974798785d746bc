#pragma once

// Synthetic desk-scale designs with a deterministic routing-demand oracle:
// every net routes each pin to the net's first pin along an L-path
// (horizontal leg, then vertical), incrementing the demand of every
// traversed bin. The resulting maps carry the positive spatial
// autocorrelation the correlation-weight machinery is built to exploit.

#include <cstdint>
#include <string>

#include "vaca/features.hpp"
#include "vaca/rng.hpp"

namespace vaca {

struct SynthSpec {
  int H = 16;
  int W = 16;
  int C = 60;
  int nets = 90;
  int a = 1;
  double macro_frac = 0.08;
};

struct Example {
  GeomFeatureMap geom;
  TopoGraph topo;
  CongestionMap target;
  std::vector<int> cell_bin;  // row * W + col per cell
  std::uint64_t seed = 0;
};

struct Dataset {
  GridSpec grid;
  int b = kTopoFeatureWidth;
  int a = 1;
  std::vector<Example> examples;
  std::vector<std::size_t> train, val, test;
};

struct SynthDesign {
  Netlist netlist;
  Placement placement;
  GridSpec grid;
  Example example;
};

// Demand from the two-bend routing oracle, before the positivity floor.
inline GridMap route_demand(const Netlist& nl, const Placement& pl, const GridSpec& grid) {
  validate_grid(grid);
  GridMap demand(grid.H, grid.W);
  for (const Net& net : nl.nets) {
    if (net.pins.empty()) continue;
    const Point t = detail::pin_position(nl, pl, net.pins.front());
    const int tx = bin_index(t.x, grid.bin_w, grid.W);
    const int ty = bin_index(t.y, grid.bin_h, grid.H);
    for (std::size_t k = 1; k < net.pins.size(); ++k) {
      const Point s = detail::pin_position(nl, pl, net.pins[k]);
      const int sx = bin_index(s.x, grid.bin_w, grid.W);
      const int sy = bin_index(s.y, grid.bin_h, grid.H);
      // horizontal leg on the source row, then vertical leg on the target
      // column; the corner bin counts once
      for (int x = std::min(sx, tx); x <= std::max(sx, tx); ++x) demand.at(sy, x) += 1.0;
      for (int y = std::min(sy, ty); y <= std::max(sy, ty); ++y)
        if (y != sy) demand.at(y, tx) += 1.0;
    }
  }
  return demand;
}

// Deterministic synthetic design: random placement, locality-biased nets,
// oracle congestion target.
inline SynthDesign synth_generate(std::uint64_t seed, const SynthSpec& spec) {
  if (spec.C < 2) throw std::invalid_argument("synth_generate: need at least 2 cells");
  if (spec.nets < 0) throw std::invalid_argument("synth_generate: negative net count");
  GridSpec grid{spec.H, spec.W, 1.0, 1.0};
  validate_grid(grid);

  Rng rng(seed);
  const double die_w = spec.W * grid.bin_w;
  const double die_h = spec.H * grid.bin_h;

  Netlist nl;
  Placement pl;
  pl.die_w = die_w;
  pl.die_h = die_h;
  for (int i = 0; i < spec.C; ++i) {
    Cell c;
    c.name = "c" + std::to_string(i);
    c.is_macro = rng.uniform() < spec.macro_frac;
    if (c.is_macro) {
      c.width = rng.uniform(1.2, std::min(3.0, die_w));
      c.height = rng.uniform(1.2, std::min(3.0, die_h));
    } else {
      c.width = rng.uniform(0.3, std::min(1.0, die_w));
      c.height = rng.uniform(0.3, std::min(1.0, die_h));
    }
    nl.cells.push_back(c);
    pl.pos.push_back({rng.uniform(0.0, die_w - c.width), rng.uniform(0.0, die_h - c.height)});
  }

  auto center = [&](int c) -> Point {
    return {pl.pos[c].x + 0.5 * nl.cells[c].width, pl.pos[c].y + 0.5 * nl.cells[c].height};
  };

  for (int n = 0; n < spec.nets; ++n) {
    Net net;
    const int k = 2 + static_cast<int>(rng.uniform_index(4));  // 2..5 pins
    const int anchor = static_cast<int>(rng.uniform_index(spec.C));
    const Point ac = center(anchor);
    std::vector<int> members{anchor};
    while (static_cast<int>(members.size()) < k) {
      // locality bias: among three uniform candidates keep the closest
      int best = -1;
      double best_d = 1e300;
      for (int t = 0; t < 3; ++t) {
        const int cand = static_cast<int>(rng.uniform_index(spec.C));
        const Point cc = center(cand);
        const double d = std::fabs(cc.x - ac.x) + std::fabs(cc.y - ac.y);
        if (d < best_d) {
          best_d = d;
          best = cand;
        }
      }
      members.push_back(best);
    }
    for (int m : members) {
      Pin p;
      p.cell = m;
      p.dx = rng.uniform(0.0, nl.cells[m].width);
      p.dy = rng.uniform(0.0, nl.cells[m].height);
      net.pins.push_back(p);
    }
    nl.nets.push_back(std::move(net));
  }

  SynthDesign d;
  d.example.target = route_demand(nl, pl, grid);
  for (double& x : d.example.target.v) x += kCongestionFloor;
  d.example.geom = build_geom_features(nl, pl, grid);
  d.example.topo = build_topo_features(nl, pl, Stage::placement);
  d.example.cell_bin = cell_bins_from_placement(nl, pl, grid);
  d.example.seed = seed;
  d.netlist = std::move(nl);
  d.placement = std::move(pl);
  d.grid = grid;
  return d;
}

// 70/15/15 split in index order; counts are rounded, train gets at least one
// example.
inline void assign_splits(Dataset& ds) {
  const std::size_t n = ds.examples.size();
  std::size_t ntrain = static_cast<std::size_t>(std::llround(0.70 * static_cast<double>(n)));
  std::size_t nval = static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(n)));
  ntrain = std::max<std::size_t>(1, std::min(ntrain, n));
  nval = std::min(nval, n - ntrain);
  ds.train.clear();
  ds.val.clear();
  ds.test.clear();
  for (std::size_t i = 0; i < n; ++i) {
    if (i < ntrain)
      ds.train.push_back(i);
    else if (i < ntrain + nval)
      ds.val.push_back(i);
    else
      ds.test.push_back(i);
  }
}

inline Dataset synth_dataset(std::uint64_t seed, int designs, const SynthSpec& spec) {
  Dataset ds;
  ds.grid = {spec.H, spec.W, 1.0, 1.0};
  ds.a = spec.a;
  for (int i = 0; i < designs; ++i)
    ds.examples.push_back(synth_generate(derived_seed(seed, i), spec).example);
  assign_splits(ds);
  return ds;
}

}  // namespace vaca
