#pragma once

// Grid-level feature rasterization (RUDY, PinRUDY, MacroRegion) and the
// cell-level topological graph.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "vaca/circuit.hpp"

namespace vaca {

// H x W grid of reals, row-major (row = y bin, column = x bin).
struct GridMap {
  int H = 0;
  int W = 0;
  std::vector<double> v;

  GridMap() = default;
  GridMap(int h, int w, double fill = 0.0) : H(h), W(w), v(static_cast<std::size_t>(h) * w, fill) {}
  double& at(int i, int j) { return v[static_cast<std::size_t>(i) * W + j]; }
  double at(int i, int j) const { return v[static_cast<std::size_t>(i) * W + j]; }
  std::size_t size() const { return v.size(); }
};

// Congestion maps live in the positive reals; ingestion clamps to this floor.
inline constexpr double kCongestionFloor = 1e-6;

using CongestionMap = GridMap;

inline void clamp_floor(GridMap& m, double eps = kCongestionFloor) {
  for (double& x : m.v) x = std::max(x, eps);
}

// H x W x 3 stack: channel 0 RUDY, 1 PinRUDY, 2 MacroRegion. Row-major HWC.
struct GeomFeatureMap {
  int H = 0;
  int W = 0;
  std::vector<double> data;

  GeomFeatureMap() = default;
  GeomFeatureMap(int h, int w) : H(h), W(w), data(static_cast<std::size_t>(h) * w * 3, 0.0) {}
  double& at(int i, int j, int c) { return data[(static_cast<std::size_t>(i) * W + j) * 3 + c]; }
  double at(int i, int j, int c) const {
    return data[(static_cast<std::size_t>(i) * W + j) * 3 + c];
  }
};

// Per-cell feature matrix (C x b) plus a dense binary adjacency.
struct TopoGraph {
  int C = 0;
  int b = 0;
  std::vector<double> features;      // C x b row-major
  std::vector<std::uint8_t> adj;     // C x C, symmetric, zero diagonal

  double& feat(int c, int k) { return features[static_cast<std::size_t>(c) * b + k]; }
  double feat(int c, int k) const { return features[static_cast<std::size_t>(c) * b + k]; }
  std::uint8_t at(int i, int j) const { return adj[static_cast<std::size_t>(i) * C + j]; }
};

inline constexpr int kTopoFeatureWidth = 8;  // degree, pins, area, macro, x, y, 2 reserved
inline constexpr double kDegenerateBoxFloor = 1e-9;

enum class Stage { placement, logic_synthesis };

namespace detail {

inline Point pin_position(const Netlist& nl, const Placement& pl, const Pin& p) {
  (void)nl;
  return {pl.pos[p.cell].x + p.dx, pl.pos[p.cell].y + p.dy};
}

struct BBox {
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
};

inline BBox net_bbox(const Netlist& nl, const Placement& pl, const Net& net) {
  BBox bb{1e300, -1e300, 1e300, -1e300};
  for (const Pin& p : net.pins) {
    const Point q = pin_position(nl, pl, p);
    bb.xmin = std::min(bb.xmin, q.x);
    bb.xmax = std::max(bb.xmax, q.x);
    bb.ymin = std::min(bb.ymin, q.y);
    bb.ymax = std::max(bb.ymax, q.y);
  }
  return bb;
}

// RUDY density of one net; degenerate zero-area boxes fall back to
// 2 / max(w, h, floor).
inline double net_density(const BBox& bb) {
  const double w = bb.xmax - bb.xmin;
  const double h = bb.ymax - bb.ymin;
  if (w > 0.0 && h > 0.0) return (w + h) / (w * h);
  return 2.0 / std::max({w, h, kDegenerateBoxFloor});
}

}  // namespace detail

// Spreads each net's density over its bounding box, weighted by the fraction
// of each bin the box covers. Zero-area boxes deposit nothing.
inline GridMap compute_rudy(const Netlist& nl, const Placement& pl, const GridSpec& grid) {
  validate_grid(grid);
  GridMap out(grid.H, grid.W);
  for (const Net& net : nl.nets) {
    if (net.pins.empty()) continue;
    const auto bb = detail::net_bbox(nl, pl, net);
    const double w = bb.xmax - bb.xmin;
    const double h = bb.ymax - bb.ymin;
    if (!(w > 0.0) || !(h > 0.0)) continue;
    const double d = detail::net_density(bb);
    const double bin_area = grid.bin_w * grid.bin_h;
    const int jx0 = bin_index(bb.xmin, grid.bin_w, grid.W);
    const int jx1 = bin_index(std::nexttoward(bb.xmax, bb.xmin), grid.bin_w, grid.W);
    const int iy0 = bin_index(bb.ymin, grid.bin_h, grid.H);
    const int iy1 = bin_index(std::nexttoward(bb.ymax, bb.ymin), grid.bin_h, grid.H);
    for (int i = iy0; i <= iy1; ++i) {
      const double by0 = i * grid.bin_h, by1 = by0 + grid.bin_h;
      const double oy = std::min(bb.ymax, by1) - std::max(bb.ymin, by0);
      if (oy <= 0.0) continue;
      for (int j = jx0; j <= jx1; ++j) {
        const double bx0 = j * grid.bin_w, bx1 = bx0 + grid.bin_w;
        const double ox = std::min(bb.xmax, bx1) - std::max(bb.xmin, bx0);
        if (ox <= 0.0) continue;
        out.at(i, j) += d * (ox * oy) / bin_area;
      }
    }
  }
  return out;
}

// Each pin deposits its net's density into the bin containing it.
inline GridMap compute_pin_rudy(const Netlist& nl, const Placement& pl, const GridSpec& grid) {
  validate_grid(grid);
  GridMap out(grid.H, grid.W);
  for (const Net& net : nl.nets) {
    if (net.pins.empty()) continue;
    const double d = detail::net_density(detail::net_bbox(nl, pl, net));
    for (const Pin& p : net.pins) {
      const Point q = detail::pin_position(nl, pl, p);
      out.at(bin_index(q.y, grid.bin_h, grid.H), bin_index(q.x, grid.bin_w, grid.W)) += d;
    }
  }
  return out;
}

// Fraction of each bin covered by macro cells, clamped to [0, 1].
inline GridMap compute_macro_region(const Netlist& nl, const Placement& pl,
                                    const GridSpec& grid) {
  validate_grid(grid);
  GridMap out(grid.H, grid.W);
  const double bin_area = grid.bin_w * grid.bin_h;
  for (std::size_t ci = 0; ci < nl.cells.size(); ++ci) {
    const Cell& c = nl.cells[ci];
    if (!c.is_macro) continue;
    const double x0 = pl.pos[ci].x, x1 = x0 + c.width;
    const double y0 = pl.pos[ci].y, y1 = y0 + c.height;
    const int jx0 = bin_index(x0, grid.bin_w, grid.W);
    const int jx1 = bin_index(std::nexttoward(x1, x0), grid.bin_w, grid.W);
    const int iy0 = bin_index(y0, grid.bin_h, grid.H);
    const int iy1 = bin_index(std::nexttoward(y1, y0), grid.bin_h, grid.H);
    for (int i = iy0; i <= iy1; ++i) {
      const double by0 = i * grid.bin_h, by1 = by0 + grid.bin_h;
      const double oy = std::min(y1, by1) - std::max(y0, by0);
      if (oy <= 0.0) continue;
      for (int j = jx0; j <= jx1; ++j) {
        const double bx0 = j * grid.bin_w, bx1 = bx0 + grid.bin_w;
        const double ox = std::min(x1, bx1) - std::max(x0, bx0);
        if (ox <= 0.0) continue;
        out.at(i, j) += (ox * oy) / bin_area;
      }
    }
  }
  for (double& x : out.v) x = std::min(x, 1.0);
  return out;
}

inline GeomFeatureMap build_geom_features(const Netlist& nl, const Placement& pl,
                                          const GridSpec& grid) {
  const GridMap rudy = compute_rudy(nl, pl, grid);
  const GridMap pin_rudy = compute_pin_rudy(nl, pl, grid);
  const GridMap macro = compute_macro_region(nl, pl, grid);
  GeomFeatureMap out(grid.H, grid.W);
  for (int i = 0; i < grid.H; ++i)
    for (int j = 0; j < grid.W; ++j) {
      out.at(i, j, 0) = rudy.at(i, j);
      out.at(i, j, 1) = pin_rudy.at(i, j);
      out.at(i, j, 2) = macro.at(i, j);
    }
  return out;
}

// Clique-expands nets into cell-cell edges (nets with more than 32 pins are
// star-expanded through their first pin's cell) and assembles per-cell
// features: degree, pin count, area, macro flag, normalized center x and y
// (zeroed before placement), two reserved zeros.
inline TopoGraph build_topo_features(const Netlist& nl, const Placement& pl,
                                     Stage stage = Stage::placement) {
  const int C = static_cast<int>(nl.cells.size());
  TopoGraph g;
  g.C = C;
  g.b = kTopoFeatureWidth;
  g.adj.assign(static_cast<std::size_t>(C) * C, 0);
  g.features.assign(static_cast<std::size_t>(C) * g.b, 0.0);

  auto connect = [&](int u, int v) {
    if (u == v) return;
    g.adj[static_cast<std::size_t>(u) * C + v] = 1;
    g.adj[static_cast<std::size_t>(v) * C + u] = 1;
  };

  std::vector<int> pin_count(C, 0);
  for (const Net& net : nl.nets) {
    for (const Pin& p : net.pins) ++pin_count[p.cell];
    std::vector<int> members;
    members.reserve(net.pins.size());
    for (const Pin& p : net.pins) members.push_back(p.cell);
    if (net.pins.size() > 32) {
      const int hub = members.front();
      for (int m : members) connect(hub, m);
    } else {
      for (std::size_t i = 0; i < members.size(); ++i)
        for (std::size_t j = i + 1; j < members.size(); ++j) connect(members[i], members[j]);
    }
  }

  for (int c = 0; c < C; ++c) {
    int degree = 0;
    for (int o = 0; o < C; ++o) degree += g.adj[static_cast<std::size_t>(c) * C + o];
    const Cell& cell = nl.cells[c];
    g.feat(c, 0) = degree;
    g.feat(c, 1) = pin_count[c];
    g.feat(c, 2) = cell.width * cell.height;
    g.feat(c, 3) = cell.is_macro ? 1.0 : 0.0;
    if (stage == Stage::placement && pl.die_w > 0.0 && pl.die_h > 0.0) {
      g.feat(c, 4) = (pl.pos[c].x + 0.5 * cell.width) / pl.die_w;
      g.feat(c, 5) = (pl.pos[c].y + 0.5 * cell.height) / pl.die_h;
    }
  }
  return g;
}

// Flat bin index (row * W + col) of each cell's center.
inline std::vector<int> cell_bins_from_placement(const Netlist& nl, const Placement& pl,
                                                 const GridSpec& grid) {
  std::vector<int> bins(nl.cells.size());
  for (std::size_t c = 0; c < nl.cells.size(); ++c) {
    const double cx = pl.pos[c].x + 0.5 * nl.cells[c].width;
    const double cy = pl.pos[c].y + 0.5 * nl.cells[c].height;
    bins[c] = bin_index(cy, grid.bin_h, grid.H) * grid.W + bin_index(cx, grid.bin_w, grid.W);
  }
  return bins;
}

// Same mapping, recovered from the normalized x/y columns of a feature
// matrix (the form available when a design is loaded from an archive).
inline std::vector<int> cell_bins_from_topo(const TopoGraph& topo, const GridSpec& grid) {
  std::vector<int> bins(topo.C);
  for (int c = 0; c < topo.C; ++c) {
    const double cx = topo.feat(c, 4) * grid.W * grid.bin_w;
    const double cy = topo.feat(c, 5) * grid.H * grid.bin_h;
    bins[c] = bin_index(cy, grid.bin_h, grid.H) * grid.W + bin_index(cx, grid.bin_w, grid.W);
  }
  return bins;
}

}  // namespace vaca
