#pragma once

// Circuit data model and the Bookshelf-subset text formats.
//
//   .nodes  name width height [terminal]
//   .nets   NetDegree : k        followed by k lines  cellname I/O : dx dy
//   .pl     name x y
//
// Lines starting with '#' are comments; files are whitespace-delimited and
// line-oriented. Pin offsets are relative to the cell's lower-left corner.
// The .pl writer emits a "# die W H" comment so a serialized placement
// round-trips with its die dimensions; the parser falls back to the placed
// bounding box when the comment is absent.

#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vaca {

struct Cell {
  std::string name;
  double width = 0.0;
  double height = 0.0;
  bool is_macro = false;
};

struct Pin {
  int cell = -1;
  double dx = 0.0;  // offset from the cell's lower-left corner
  double dy = 0.0;
};

struct Net {
  std::vector<Pin> pins;
};

struct Netlist {
  std::vector<Cell> cells;
  std::vector<Net> nets;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct Placement {
  std::vector<Point> pos;  // lower-left corner per cell, indexed like cells
  double die_w = 0.0;
  double die_h = 0.0;
};

struct GridSpec {
  int H = 1;
  int W = 1;
  double bin_w = 1.0;
  double bin_h = 1.0;
};

inline void validate_grid(const GridSpec& g) {
  if (g.H < 1 || g.W < 1) throw std::invalid_argument("grid: H and W must be >= 1");
  if (!(g.bin_w > 0.0) || !(g.bin_h > 0.0))
    throw std::invalid_argument("grid: bin dimensions must be positive");
}

// Bin index along one axis; exact boundary coordinates go to the
// higher-index bin, the die's upper edge clamps into the last bin.
inline int bin_index(double coord, double bin_size, int count) {
  int b = static_cast<int>(std::floor(coord / bin_size));
  if (b < 0) b = 0;
  if (b >= count) b = count - 1;
  return b;
}

// True when every pin of the net lands on one cell (allowed, but carries no
// connectivity information).
inline bool net_is_degenerate(const Net& net) {
  for (const Pin& p : net.pins)
    if (p.cell != net.pins.front().cell) return false;
  return true;
}

inline void validate_netlist(const Netlist& nl) {
  for (const Cell& c : nl.cells)
    if (!(c.width > 0.0) || !(c.height > 0.0))
      throw std::invalid_argument("netlist: cell '" + c.name + "' has nonpositive dimensions");
  for (std::size_t i = 0; i < nl.nets.size(); ++i) {
    const Net& n = nl.nets[i];
    if (n.pins.size() < 2)
      throw std::invalid_argument("netlist: net " + std::to_string(i) + " has fewer than 2 pins");
    for (const Pin& p : n.pins)
      if (p.cell < 0 || p.cell >= static_cast<int>(nl.cells.size()))
        throw std::invalid_argument("netlist: net " + std::to_string(i) +
                                    " has a pin on a nonexistent cell");
  }
}

inline void validate_placement(const Netlist& nl, const Placement& pl) {
  if (pl.pos.size() != nl.cells.size())
    throw std::invalid_argument("placement: position count does not match cell count");
  for (std::size_t i = 0; i < nl.cells.size(); ++i) {
    const Cell& c = nl.cells[i];
    const Point& p = pl.pos[i];
    if (p.x < -1e-9 || p.y < -1e-9 || p.x + c.width > pl.die_w + 1e-9 ||
        p.y + c.height > pl.die_h + 1e-9)
      throw std::invalid_argument("placement: cell '" + c.name + "' lies outside the die");
  }
}

namespace detail {

inline std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline bool skippable(const std::string& line) {
  for (char ch : line) {
    if (ch == '#') return true;
    if (!std::isspace(static_cast<unsigned char>(ch))) return false;
  }
  return true;
}

inline double parse_real(const std::string& tok, const char* file, int lineno) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size())
    throw std::invalid_argument(std::string(file) + " line " + std::to_string(lineno) +
                                ": expected a number, got '" + tok + "'");
  return v;
}

}  // namespace detail

// Parses the three Bookshelf-subset texts into a placed netlist.
inline std::pair<Netlist, Placement> parse_bookshelf(const std::string& nodes_text,
                                                     const std::string& nets_text,
                                                     const std::string& pl_text) {
  Netlist nl;
  std::map<std::string, int> index;

  {
    std::istringstream is(nodes_text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (detail::skippable(line)) continue;
      const auto tok = detail::tokenize(line);
      if (tok.size() != 3 && !(tok.size() == 4 && tok[3] == "terminal"))
        throw std::invalid_argument("nodes line " + std::to_string(lineno) +
                                    ": expected 'name width height [terminal]'");
      Cell c;
      c.name = tok[0];
      c.width = detail::parse_real(tok[1], "nodes", lineno);
      c.height = detail::parse_real(tok[2], "nodes", lineno);
      c.is_macro = tok.size() == 4;
      if (!(c.width > 0.0) || !(c.height > 0.0))
        throw std::invalid_argument("nodes line " + std::to_string(lineno) +
                                    ": cell dimensions must be positive");
      if (index.count(c.name))
        throw std::invalid_argument("nodes line " + std::to_string(lineno) +
                                    ": duplicate cell '" + c.name + "'");
      index[c.name] = static_cast<int>(nl.cells.size());
      nl.cells.push_back(std::move(c));
    }
  }

  {
    std::istringstream is(nets_text);
    std::string line;
    int lineno = 0;
    int remaining = 0;  // pins still expected for the open net
    while (std::getline(is, line)) {
      ++lineno;
      if (detail::skippable(line)) continue;
      const auto tok = detail::tokenize(line);
      if (remaining == 0) {
        if (tok.size() != 3 || tok[0] != "NetDegree" || tok[1] != ":")
          throw std::invalid_argument("nets line " + std::to_string(lineno) +
                                      ": expected 'NetDegree : k'");
        const double kf = detail::parse_real(tok[2], "nets", lineno);
        const int k = static_cast<int>(kf);
        if (kf != k || k < 2)
          throw std::invalid_argument("nets line " + std::to_string(lineno) +
                                      ": net degree must be an integer >= 2");
        nl.nets.emplace_back();
        remaining = k;
      } else {
        if (tok.size() != 5 || (tok[1] != "I" && tok[1] != "O" && tok[1] != "B") ||
            tok[2] != ":")
          throw std::invalid_argument("nets line " + std::to_string(lineno) +
                                      ": expected 'cellname I/O : dx dy'");
        const auto it = index.find(tok[0]);
        if (it == index.end())
          throw std::invalid_argument("nets line " + std::to_string(lineno) +
                                      ": pin references unknown cell '" + tok[0] + "'");
        Pin p;
        p.cell = it->second;
        p.dx = detail::parse_real(tok[3], "nets", lineno);
        p.dy = detail::parse_real(tok[4], "nets", lineno);
        nl.nets.back().pins.push_back(p);
        --remaining;
      }
    }
    if (remaining != 0)
      throw std::invalid_argument("nets: unexpected end of file, " + std::to_string(remaining) +
                                  " pin lines missing");
  }

  Placement pl;
  pl.pos.assign(nl.cells.size(), Point{});
  std::vector<bool> placed(nl.cells.size(), false);
  bool die_given = false;
  {
    std::istringstream is(pl_text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (detail::skippable(line)) {
        // structured comment carrying the die dimensions
        const auto tok = detail::tokenize(line);
        if (tok.size() == 4 && tok[0] == "#" && tok[1] == "die") {
          pl.die_w = detail::parse_real(tok[2], "pl", lineno);
          pl.die_h = detail::parse_real(tok[3], "pl", lineno);
          die_given = true;
        }
        continue;
      }
      const auto tok = detail::tokenize(line);
      if (tok.size() != 3)
        throw std::invalid_argument("pl line " + std::to_string(lineno) +
                                    ": expected 'name x y'");
      const auto it = index.find(tok[0]);
      if (it == index.end())
        throw std::invalid_argument("pl line " + std::to_string(lineno) +
                                    ": placement for unknown cell '" + tok[0] + "'");
      pl.pos[it->second].x = detail::parse_real(tok[1], "pl", lineno);
      pl.pos[it->second].y = detail::parse_real(tok[2], "pl", lineno);
      placed[it->second] = true;
    }
  }
  for (std::size_t i = 0; i < placed.size(); ++i)
    if (!placed[i])
      throw std::invalid_argument("pl: missing placement entry for cell '" + nl.cells[i].name +
                                  "'");
  if (!die_given) {
    for (std::size_t i = 0; i < nl.cells.size(); ++i) {
      pl.die_w = std::max(pl.die_w, pl.pos[i].x + nl.cells[i].width);
      pl.die_h = std::max(pl.die_h, pl.pos[i].y + nl.cells[i].height);
    }
  }

  validate_netlist(nl);
  validate_placement(nl, pl);
  return {std::move(nl), std::move(pl)};
}

namespace detail {
inline std::string real_str(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

struct BookshelfText {
  std::string nodes;
  std::string nets;
  std::string pl;
};

inline BookshelfText write_bookshelf(const Netlist& nl, const Placement& pl) {
  std::ostringstream nodes, nets, plos;
  for (const Cell& c : nl.cells) {
    nodes << c.name << ' ' << detail::real_str(c.width) << ' ' << detail::real_str(c.height);
    if (c.is_macro) nodes << " terminal";
    nodes << '\n';
  }
  for (const Net& n : nl.nets) {
    nets << "NetDegree : " << n.pins.size() << '\n';
    for (const Pin& p : n.pins)
      nets << nl.cells[p.cell].name << " I : " << detail::real_str(p.dx) << ' '
           << detail::real_str(p.dy) << '\n';
  }
  plos << "# die " << detail::real_str(pl.die_w) << ' ' << detail::real_str(pl.die_h) << '\n';
  for (std::size_t i = 0; i < nl.cells.size(); ++i)
    plos << nl.cells[i].name << ' ' << detail::real_str(pl.pos[i].x) << ' '
         << detail::real_str(pl.pos[i].y) << '\n';
  return {nodes.str(), nets.str(), plos.str()};
}

}  // namespace vaca
