#pragma once

// Dataset archive layout: one directory per example holding
//   geom.f32           row-major H x W x 3 little-endian 32-bit floats
//   topo_features.f32  C x b
//   adjacency.edges    text, one "j k" pair per line with j < k (0-based)
//   target.f32         H x W
//   meta.json          {H, W, C, b, a, seed}
// plus a top-level splits.json naming the train/val/test members.

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "vaca/synth.hpp"

namespace vaca {

namespace io {

inline void write_f32(const std::filesystem::path& path, const std::vector<double>& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  for (double d : data) {
    const float f = static_cast<float>(d);
    os.write(reinterpret_cast<const char*>(&f), sizeof f);
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline std::vector<double> read_f32(const std::filesystem::path& path, std::size_t count) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path.string());
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    float f = 0.0f;
    is.read(reinterpret_cast<char*>(&f), sizeof f);
    if (!is) throw std::runtime_error("short read: " + path.string());
    out[i] = f;
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace io

inline void write_example_dir(const std::filesystem::path& dir, const Example& ex,
                              const GridSpec& grid, int a) {
  std::filesystem::create_directories(dir);
  io::write_f32(dir / "geom.f32", ex.geom.data);
  io::write_f32(dir / "topo_features.f32", ex.topo.features);
  io::write_f32(dir / "target.f32", ex.target.v);

  std::ostringstream edges;
  for (int j = 0; j < ex.topo.C; ++j)
    for (int k = j + 1; k < ex.topo.C; ++k)
      if (ex.topo.at(j, k)) edges << j << ' ' << k << '\n';
  io::write_text(dir / "adjacency.edges", edges.str());

  nlohmann::json meta{{"H", grid.H},     {"W", grid.W}, {"C", ex.topo.C},
                      {"b", ex.topo.b},  {"a", a},      {"seed", ex.seed}};
  io::write_text(dir / "meta.json", meta.dump(2) + "\n");
}

struct LoadedExample {
  Example example;
  GridSpec grid;
  int a = 1;
};

inline LoadedExample read_example_dir(const std::filesystem::path& dir) {
  const auto meta = nlohmann::json::parse(io::read_text(dir / "meta.json"));
  LoadedExample out;
  out.grid.H = meta.at("H").get<int>();
  out.grid.W = meta.at("W").get<int>();
  out.grid.bin_w = out.grid.bin_h = 1.0;
  validate_grid(out.grid);
  const int C = meta.at("C").get<int>();
  const int b = meta.at("b").get<int>();
  out.a = meta.at("a").get<int>();
  if (C < 1 || b < 1) throw std::runtime_error("meta.json: invalid C or b in " + dir.string());

  Example& ex = out.example;
  ex.seed = meta.value("seed", 0ULL);
  const std::size_t hw = static_cast<std::size_t>(out.grid.H) * out.grid.W;

  ex.geom.H = out.grid.H;
  ex.geom.W = out.grid.W;
  ex.geom.data = io::read_f32(dir / "geom.f32", hw * 3);

  ex.topo.C = C;
  ex.topo.b = b;
  ex.topo.features = io::read_f32(dir / "topo_features.f32", static_cast<std::size_t>(C) * b);
  ex.topo.adj.assign(static_cast<std::size_t>(C) * C, 0);
  {
    std::istringstream is(io::read_text(dir / "adjacency.edges"));
    int j, k;
    while (is >> j >> k) {
      if (j < 0 || k < 0 || j >= C || k >= C)
        throw std::runtime_error("adjacency.edges: index out of range in " + dir.string());
      ex.topo.adj[static_cast<std::size_t>(j) * C + k] = 1;
      ex.topo.adj[static_cast<std::size_t>(k) * C + j] = 1;
    }
  }

  ex.target.H = out.grid.H;
  ex.target.W = out.grid.W;
  ex.target.v = io::read_f32(dir / "target.f32", hw);
  clamp_floor(ex.target);

  ex.cell_bin = cell_bins_from_topo(ex.topo, out.grid);
  return out;
}

inline std::string design_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "design_%04d", index);
  return buf;
}

inline void write_dataset(const std::filesystem::path& root, const Dataset& ds) {
  std::filesystem::create_directories(root);
  for (std::size_t i = 0; i < ds.examples.size(); ++i)
    write_example_dir(root / design_dir_name(static_cast<int>(i)), ds.examples[i], ds.grid,
                      ds.a);
  nlohmann::json splits;
  auto names = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::string> out;
    for (auto i : idx) out.push_back(design_dir_name(static_cast<int>(i)));
    return out;
  };
  splits["train"] = names(ds.train);
  splits["val"] = names(ds.val);
  splits["test"] = names(ds.test);
  io::write_text(root / "splits.json", splits.dump(2) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& root) {
  if (!std::filesystem::exists(root / "splits.json"))
    throw std::runtime_error("dataset: missing splits.json in " + root.string());
  const auto splits = nlohmann::json::parse(io::read_text(root / "splits.json"));

  Dataset ds;
  bool first = true;
  auto load_split = [&](const char* key, std::vector<std::size_t>& idx) {
    for (const auto& name : splits.at(key)) {
      LoadedExample le = read_example_dir(root / name.get<std::string>());
      if (first) {
        ds.grid = le.grid;
        ds.a = le.a;
        ds.b = le.example.topo.b;
        first = false;
      } else if (le.grid.H != ds.grid.H || le.grid.W != ds.grid.W) {
        throw std::runtime_error("dataset: examples disagree on grid dimensions");
      }
      idx.push_back(ds.examples.size());
      ds.examples.push_back(std::move(le.example));
    }
  };
  load_split("train", ds.train);
  load_split("val", ds.val);
  load_split("test", ds.test);
  if (ds.train.empty()) throw std::runtime_error("dataset: train split is empty");
  return ds;
}

}  // namespace vaca
