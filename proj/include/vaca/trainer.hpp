#pragma once

// Training loop: per mini-batch, step A obtains the correlation weights from
// the current posterior (gradients blocked) and updates the regressor by the
// regularized risk; step B updates the inference and observation models by
// the variational objective. Both steps use Adam. A fused variant runs one
// combined backward over both objectives and updates everything at once.
//
// Determinism: all randomness is derived statelessly from (seed, epoch,
// batch), so resuming from a checkpoint reproduces the uninterrupted run
// bit for bit.

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <limits>
#include <ostream>

#include "vaca/dataset_io.hpp"
#include "vaca/losses.hpp"
#include "vaca/metrics.hpp"
#include "vaca/models.hpp"

namespace vaca {

struct TrainConfig {
  int epochs = 40;
  int batch_size = 4;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  LossConfig loss;
  Mode mode = Mode::placement;
  int patience = 10;
  bool fused = false;  // single backward over risk + VI, updating all nets
  GammaPrior prior{};
  int infer_hidden = 16;
  int reg_hidden = 32;
};

inline void validate_train_config(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
  if (cfg.patience < 0) throw std::invalid_argument("train config: patience must be >= 0");
  validate_loss_config(cfg.loss);
}

// Adam with bias correction; beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor*> params, double lr) : params_(std::move(params)), lr_(lr) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i]->size(), 0.0);
      v_[i].assign(params_[i]->size(), 0.0);
    }
  }

  void zero_grad() {
    for (Tensor* p : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = *params_[i];
      const double* g = p.grad();
      for (std::size_t k = 0; k < p.size(); ++k) {
        m_[i][k] = 0.9 * m_[i][k] + 0.1 * g[k];
        v_[i][k] = 0.999 * v_[i][k] + 0.001 * g[k] * g[k];
        const double mhat = m_[i][k] / bc1;
        const double vhat = v_[i][k] / bc2;
        p[k] -= lr_ * mhat / (std::sqrt(vhat) + 1e-8);
      }
    }
  }

  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }
  std::vector<std::vector<double>>& moments_m() { return m_; }
  std::vector<std::vector<double>>& moments_v() { return v_; }
  const std::vector<Tensor*>& params() const { return params_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_ = 1e-3;
  long t_ = 0;
};

// Per-channel / per-column standardization fitted on the train split; the
// target keeps only a positive scale so predictions stay positive.
struct Normalizer {
  std::vector<double> geom_mean{0, 0, 0}, geom_std{1, 1, 1};
  std::vector<double> topo_mean, topo_std;
  double target_scale = 1.0;
};

inline Normalizer fit_normalizer(const Dataset& ds, Mode mode) {
  Normalizer nz;
  nz.topo_mean.assign(ds.b, 0.0);
  nz.topo_std.assign(ds.b, 1.0);

  double gsum[3] = {0, 0, 0}, gsq[3] = {0, 0, 0};
  std::size_t gcount = 0;
  std::vector<double> tsum(ds.b, 0.0), tsq(ds.b, 0.0);
  std::size_t tcount = 0;
  double ysum = 0.0, ysq = 0.0;
  std::size_t ycount = 0;

  for (std::size_t idx : ds.train) {
    const Example& ex = ds.examples[idx];
    for (int i = 0; i < ex.geom.H; ++i)
      for (int j = 0; j < ex.geom.W; ++j)
        for (int c = 0; c < 3; ++c) {
          const double v = ex.geom.at(i, j, c);
          gsum[c] += v;
          gsq[c] += v * v;
        }
    gcount += static_cast<std::size_t>(ex.geom.H) * ex.geom.W;
    for (int c = 0; c < ex.topo.C; ++c)
      for (int k = 0; k < ds.b; ++k) {
        double v = ex.topo.feat(c, k);
        if (mode == Mode::logic_synthesis && (k == 4 || k == 5)) v = 0.0;
        tsum[k] += v;
        tsq[k] += v * v;
      }
    tcount += static_cast<std::size_t>(ex.topo.C);
    for (double v : ex.target.v) {
      ysum += v;
      ysq += v * v;
    }
    ycount += ex.target.v.size();
  }

  for (int c = 0; c < 3; ++c) {
    const double mean = gsum[c] / static_cast<double>(gcount);
    const double var = std::max(0.0, gsq[c] / static_cast<double>(gcount) - mean * mean);
    nz.geom_mean[c] = mean;
    nz.geom_std[c] = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;
  }
  for (int k = 0; k < ds.b; ++k) {
    const double mean = tsum[k] / static_cast<double>(tcount);
    const double var = std::max(0.0, tsq[k] / static_cast<double>(tcount) - mean * mean);
    nz.topo_mean[k] = mean;
    nz.topo_std[k] = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;
  }
  {
    const double mean = ysum / static_cast<double>(ycount);
    const double var = std::max(0.0, ysq / static_cast<double>(ycount) - mean * mean);
    nz.target_scale = std::sqrt(var) > 1e-9 ? std::sqrt(var) : 1.0;
  }
  return nz;
}

// One example with normalization applied and constant tensors built.
struct PreparedExample {
  ViInputs vi;
  Tensor target_norm;      // {H, W}, raw / target_scale
  const Example* raw = nullptr;
};

inline PreparedExample prepare_example(const Example& ex, const GridSpec& grid,
                                       const Normalizer& nz, const TrainConfig& cfg) {
  Example adj = ex;  // normalized copy
  for (int i = 0; i < adj.geom.H; ++i)
    for (int j = 0; j < adj.geom.W; ++j)
      for (int c = 0; c < 3; ++c)
        adj.geom.at(i, j, c) = (adj.geom.at(i, j, c) - nz.geom_mean[c]) / nz.geom_std[c];
  for (int c = 0; c < adj.topo.C; ++c)
    for (int k = 0; k < adj.topo.b; ++k)
      adj.topo.feat(c, k) = (adj.topo.feat(c, k) - nz.topo_mean[k]) / nz.topo_std[k];

  PreparedExample out;
  // the logic-mode positional zeroing in make_vi_inputs must see true zeros,
  // which standardization of the raw columns would destroy; re-zero after
  if (cfg.mode == Mode::logic_synthesis && adj.topo.b >= 6)
    for (int c = 0; c < adj.topo.C; ++c) {
      adj.topo.feat(c, 4) = 0.0;
      adj.topo.feat(c, 5) = 0.0;
    }
  // similarity is computed from the raw target inside make_vi_inputs
  adj.target = ex.target;
  out.vi = make_vi_inputs(adj, grid, cfg.loss, cfg.mode);
  std::vector<double> tn(ex.target.v.size());
  for (std::size_t i = 0; i < tn.size(); ++i) tn[i] = ex.target.v[i] / nz.target_scale;
  out.target_norm = Tensor::from_data({static_cast<std::size_t>(grid.H),
                                       static_cast<std::size_t>(grid.W)},
                                      std::move(tn));
  out.raw = &ex;
  return out;
}

struct TrainState {
  TrainConfig cfg;
  ModelArch arch;
  Models models;
  Adam opt_theta, opt_vi;
  Normalizer norm;
  int epoch = 0;  // epochs completed
  double best_val = -std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int bad_epochs = 0;
  std::vector<std::vector<double>> best_params;  // snapshot at the best epoch
  double initial_risk = -1.0;
  double initial_vi = -1.0;
};

inline TrainState init_train_state(const Dataset& ds, const TrainConfig& cfg) {
  validate_train_config(cfg);
  if (ds.train.empty()) throw std::invalid_argument("train: empty train split");
  TrainState st;
  st.cfg = cfg;
  st.arch.mode = cfg.mode;
  st.arch.b = ds.b;
  st.arch.a = cfg.loss.a;
  st.arch.infer_hidden = cfg.infer_hidden;
  st.arch.reg_hidden = cfg.reg_hidden;
  st.models = Models(st.arch, cfg.seed);
  std::vector<Tensor*> tp, vp;
  for (auto& [n, t] : st.models.theta_params()) tp.push_back(t);
  for (auto& [n, t] : st.models.vi_params()) vp.push_back(t);
  st.opt_theta = Adam(tp, cfg.lr);
  st.opt_vi = Adam(vp, cfg.lr);
  st.norm = fit_normalizer(ds, cfg.mode);
  return st;
}

// Deterministic prediction path (posterior-mean latent, no sampling),
// returned on the raw target scale.
inline CongestionMap predict_map(TrainState& st, const PreparedExample& pe) {
  const auto gauss = st.models.infer_topo(pe.vi.topo, pe.vi.a_hat);
  Tensor z_grid = scatter_latent(gauss.mu, pe.vi.cell_bin, pe.vi.H, pe.vi.W);
  Tensor x = st.arch.mode == Mode::placement ? cat_last(pe.vi.geom, z_grid) : z_grid;
  Tensor pred = st.models.reg(x);
  CongestionMap out;
  out.H = pe.vi.H;
  out.W = pe.vi.W;
  out.v.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out.v[i] = pred[i] * st.norm.target_scale;
  return out;
}

struct EvalRecord {
  double grid_pearson = 0, grid_spearman = 0, grid_kendall = 0;
  double cell_pearson = 0, cell_spearman = 0, cell_kendall = 0;
  double mse = 0;
  std::size_t n_examples = 0;
};

// Correlation metrics averaged over the examples of a split; MSE on the raw
// scale. Throws if any prediction or target series is constant.
inline EvalRecord evaluate_epoch(TrainState& st, const Dataset& ds,
                                 const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("evaluate_epoch: empty split");
  EvalRecord rec;
  for (std::size_t idx : indices) {
    const Example& ex = ds.examples[idx];
    const PreparedExample pe = prepare_example(ex, ds.grid, st.norm, st.cfg);
    const CongestionMap pred = predict_map(st, pe);
    const PairedSeries gs = grid_level(pred, ex.target);
    const PairedSeries cs = cell_level(pred, ex.target, ex.cell_bin);
    rec.grid_pearson += pearson(gs);
    rec.grid_spearman += spearman(gs);
    rec.grid_kendall += kendall(gs);
    rec.cell_pearson += pearson(cs);
    rec.cell_spearman += spearman(cs);
    rec.cell_kendall += kendall(cs);
    double se = 0.0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
      const double d = pred.v[i] - ex.target.v[i];
      se += d * d;
    }
    rec.mse += se / static_cast<double>(pred.v.size());
    ++rec.n_examples;
  }
  const double n = static_cast<double>(rec.n_examples);
  rec.grid_pearson /= n;
  rec.grid_spearman /= n;
  rec.grid_kendall /= n;
  rec.cell_pearson /= n;
  rec.cell_spearman /= n;
  rec.cell_kendall /= n;
  rec.mse /= n;
  return rec;
}

struct TrainHooks {
  // phase 'A' after the regressor update, 'B' after the VI update, 'F' after
  // a fused update
  std::function<void(char phase, TrainState& st)> after_step;
};

namespace detail {

inline void check_divergence(const char* term, double value, double& initial) {
  if (!std::isfinite(value))
    throw std::runtime_error(std::string("divergence: ") + term + " is non-finite");
  if (initial < 0.0)
    initial = std::max(std::fabs(value), 1e-9);
  else if (std::fabs(value) > 100.0 * initial)
    throw std::runtime_error(std::string("divergence: ") + term +
                             " grew 100x above its initial value");
}

inline std::vector<std::vector<double>> snapshot_params(Models& models) {
  std::vector<std::vector<double>> out;
  for (auto& [n, t] : models.named_params()) out.emplace_back(t->values());
  return out;
}

inline void restore_params(Models& models, const std::vector<std::vector<double>>& snap) {
  auto named = models.named_params();
  if (snap.size() != named.size())
    throw std::logic_error("restore_params: snapshot size mismatch");
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (snap[i].size() != named[i].second->size())
      throw std::logic_error("restore_params: tensor size mismatch");
    named[i].second->values() = snap[i];
  }
}

}  // namespace detail

// Runs epochs [st.epoch, cfg.epochs) on the dataset, logging one JSON line
// per epoch. Early stopping tracks validation grid-level Spearman; the best
// parameters are restored at the end when a validation split exists.
inline void train_loop(TrainState& st, const Dataset& ds, std::ostream* log = nullptr,
                       const TrainHooks& hooks = {}) {
  const TrainConfig& cfg = st.cfg;
  std::vector<PreparedExample> prepared;
  prepared.reserve(ds.examples.size());
  for (const Example& ex : ds.examples)
    prepared.push_back(prepare_example(ex, ds.grid, st.norm, cfg));

  const bool use_val = !ds.val.empty();
  for (; st.epoch < cfg.epochs; ) {
    const int epoch = st.epoch;
    const auto t0 = std::chrono::steady_clock::now();

    // epoch shuffle: a permutation of the train split
    std::vector<std::size_t> order(ds.train);
    {
      Rng rng(mix_seed(mix_seed(cfg.seed, 0x73687566666cULL), static_cast<std::uint64_t>(epoch)));
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_index(i)]);
    }

    double epoch_risk = 0.0, epoch_vi = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<PreparedExample*> batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&prepared[order[i]]);
      Rng step_rng(mix_seed(mix_seed(mix_seed(cfg.seed, 0x766163612d726eULL),
                                     static_cast<std::uint64_t>(epoch)),
                            static_cast<std::uint64_t>(batches)));

      if (!cfg.fused) {
        // ---- step A: update theta under the regularized risk ----
        // posterior weights and pooled latents evaluated outside the tape,
        // so no gradient reaches the inference models
        std::vector<Tensor> m_means, z_grids;
        for (PreparedExample* pe : batch) {
          const auto gauss = st.models.infer_topo(pe->vi.topo, pe->vi.a_hat);
          Tensor z_grid = scatter_latent(gauss.mu, pe->vi.cell_bin, pe->vi.H, pe->vi.W);
          z_grids.push_back(z_grid);
          if (cfg.mode == Mode::placement && cfg.loss.lambda != 0.0)
            m_means.push_back(posterior_mean((*st.models.infer_geom)(pe->vi.geom, z_grid)));
          else
            m_means.push_back(Tensor());
        }
        st.opt_theta.zero_grad();
        {
          Tape tape;
          Tensor total = Tensor::scalar(0.0);
          for (std::size_t i = 0; i < batch.size(); ++i) {
            PreparedExample* pe = batch[i];
            Tensor x = cfg.mode == Mode::placement ? cat_last(pe->vi.geom, z_grids[i])
                                                   : z_grids[i];
            Tensor pred = st.models.reg(x);
            Tensor loss = cfg.mode == Mode::placement
                              ? risk_example(pred, pe->target_norm, m_means[i], cfg.loss)
                              : risk_logic(pred, pe->target_norm);
            total = add(total, loss);
          }
          total = mul(total, 1.0 / static_cast<double>(batch.size()));
          detail::check_divergence("risk", total.item(), st.initial_risk);
          epoch_risk += total.item();
          tape.backward(total);
        }
        st.opt_theta.step();
        if (hooks.after_step) hooks.after_step('A', st);

        // ---- step B: update the inference and observation models ----
        st.opt_vi.zero_grad();
        {
          Tape tape;
          std::vector<const ViInputs*> vins;
          for (PreparedExample* pe : batch) vins.push_back(&pe->vi);
          ViBatchTerms terms = vi_batch(vins, st.models, cfg.prior, step_rng);
          Tensor loss = cfg.mode == Mode::placement ? vi_loss(terms, cfg.loss)
                                                    : vi_loss_logic(terms);
          detail::check_divergence("vi_loss", loss.item(), st.initial_vi);
          epoch_vi += loss.item();
          tape.backward(loss);
        }
        st.opt_vi.step();
        if (hooks.after_step) hooks.after_step('B', st);
      } else {
        // ---- fused: one backward over risk + VI, all models updated ----
        st.opt_theta.zero_grad();
        st.opt_vi.zero_grad();
        {
          Tape tape;
          std::vector<const ViInputs*> vins;
          for (PreparedExample* pe : batch) vins.push_back(&pe->vi);
          ViBatchTerms terms = vi_batch(vins, st.models, cfg.prior, step_rng);
          Tensor vloss = cfg.mode == Mode::placement ? vi_loss(terms, cfg.loss)
                                                     : vi_loss_logic(terms);
          Tensor total = Tensor::scalar(0.0);
          for (std::size_t i = 0; i < batch.size(); ++i) {
            PreparedExample* pe = batch[i];
            const ViBreakdown& b = terms.per_example[i];
            Tensor z_grid = b.z_grid;
            Tensor x = cfg.mode == Mode::placement ? cat_last(pe->vi.geom, z_grid) : z_grid;
            Tensor pred = st.models.reg(x);
            Tensor loss;
            if (cfg.mode == Mode::placement) {
              Tensor m = posterior_mean(b.gamma);  // gradients flow into omega1
              loss = risk_example(pred, pe->target_norm, m, cfg.loss);
            } else {
              loss = risk_logic(pred, pe->target_norm);
            }
            total = add(total, loss);
          }
          total = mul(total, 1.0 / static_cast<double>(batch.size()));
          detail::check_divergence("risk", total.item(), st.initial_risk);
          detail::check_divergence("vi_loss", vloss.item(), st.initial_vi);
          epoch_risk += total.item();
          epoch_vi += vloss.item();
          Tensor fusedv = add(total, vloss);
          tape.backward(fusedv);
        }
        st.opt_theta.step();
        st.opt_vi.step();
        if (hooks.after_step) hooks.after_step('F', st);
      }
      ++batches;
    }
    epoch_risk /= static_cast<double>(batches);
    epoch_vi /= static_cast<double>(batches);
    ++st.epoch;

    double val_spearman = std::numeric_limits<double>::quiet_NaN();
    double val_pearson = std::numeric_limits<double>::quiet_NaN();
    if (use_val) {
      try {
        const EvalRecord rec = evaluate_epoch(st, ds, ds.val);
        val_spearman = rec.grid_spearman;
        val_pearson = rec.grid_pearson;
      } catch (const std::invalid_argument&) {
        // constant prediction: leave the score undefined for this epoch
      }
      if (std::isfinite(val_spearman) && val_spearman > st.best_val) {
        st.best_val = val_spearman;
        st.best_epoch = epoch;
        st.best_params = detail::snapshot_params(st.models);
        st.bad_epochs = 0;
      } else {
        ++st.bad_epochs;
      }
    }

    if (log) {
      const auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
      nlohmann::json line{{"epoch", epoch},
                          {"risk", epoch_risk},
                          {"vi_loss", epoch_vi},
                          {"wall_ms", wall}};
      if (std::isfinite(val_spearman)) {
        line["val_spearman_grid"] = val_spearman;
        line["val_pearson_grid"] = val_pearson;
      } else {
        line["val_spearman_grid"] = nullptr;
        line["val_pearson_grid"] = nullptr;
      }
      (*log) << line.dump() << '\n';
      log->flush();
    }

    if (use_val && st.bad_epochs >= cfg.patience && cfg.patience > 0) break;
  }

  if (use_val && st.best_epoch >= 0) detail::restore_params(st.models, st.best_params);
}

inline TrainState train(const Dataset& ds, const TrainConfig& cfg, std::ostream* log = nullptr,
                        const TrainHooks& hooks = {}) {
  TrainState st = init_train_state(ds, cfg);
  train_loop(st, ds, log, hooks);
  return st;
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "VACACKP1", u64 JSON header length, JSON header
// (architecture + train-state scalars + normalizer), u64 record count, then
// length-prefixed named tensor records (row-major 64-bit floats).

namespace detail {

struct Record {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

inline void write_record(std::ostream& os, const std::string& name, const Shape& shape,
                         const std::vector<double>& data) {
  write_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(os, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) write_u64(os, d);
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(double)));
}

inline Record read_record(std::istream& is) {
  Record r;
  const auto name_len = read_u32(is);
  r.name.resize(name_len);
  is.read(r.name.data(), name_len);
  const auto ndim = read_u32(is);
  r.shape.resize(ndim);
  std::size_t numel = 1;
  for (auto& d : r.shape) {
    d = read_u64(is);
    numel *= d;
  }
  r.data.resize(numel);
  is.read(reinterpret_cast<char*>(r.data.data()),
          static_cast<std::streamsize>(numel * sizeof(double)));
  if (!is) throw std::runtime_error("checkpoint: truncated record");
  return r;
}

}  // namespace detail

inline void save_checkpoint(const TrainState& st, const std::filesystem::path& path) {
  TrainState& mst = const_cast<TrainState&>(st);
  nlohmann::json header;
  header["format"] = 1;
  header["arch"] = {{"mode", st.arch.mode == Mode::placement ? "placement" : "logic"},
                    {"b", st.arch.b},
                    {"a", st.arch.a},
                    {"geom_channels", st.arch.geom_channels},
                    {"infer_hidden", st.arch.infer_hidden},
                    {"reg_hidden", st.arch.reg_hidden}};
  header["train"] = {{"epoch", st.epoch},
                     {"best_val", st.best_val},
                     {"best_epoch", st.best_epoch},
                     {"bad_epochs", st.bad_epochs},
                     {"adam_theta_t", mst.opt_theta.step_count()},
                     {"adam_vi_t", mst.opt_vi.step_count()},
                     {"initial_risk", st.initial_risk},
                     {"initial_vi", st.initial_vi}};
  header["config"] = {{"epochs", st.cfg.epochs},
                      {"batch_size", st.cfg.batch_size},
                      {"lr", st.cfg.lr},
                      {"seed", st.cfg.seed},
                      {"patience", st.cfg.patience},
                      {"fused", st.cfg.fused},
                      {"lambda", st.cfg.loss.lambda},
                      {"tau", st.cfg.loss.tau},
                      {"a", st.cfg.loss.a},
                      {"prior_alpha", st.cfg.prior.alpha_hat},
                      {"prior_beta", st.cfg.prior.beta_hat},
                      {"infer_hidden", st.cfg.infer_hidden},
                      {"reg_hidden", st.cfg.reg_hidden}};
  if (st.cfg.loss.sigma_sim) header["config"]["sigma_sim"] = *st.cfg.loss.sigma_sim;
  header["normalizer"] = {{"geom_mean", st.norm.geom_mean},
                          {"geom_std", st.norm.geom_std},
                          {"topo_mean", st.norm.topo_mean},
                          {"topo_std", st.norm.topo_std},
                          {"target_scale", st.norm.target_scale}};

  std::vector<std::pair<std::string, Tensor*>> named = mst.models.named_params();
  std::uint64_t count = static_cast<std::uint64_t>(named.size());
  // adam moments, one m and one v record per parameter
  count += 2 * (mst.opt_theta.params().size() + mst.opt_vi.params().size());
  const bool with_best = !st.best_params.empty();
  if (with_best) count += named.size();

  const std::string header_text = header.dump();
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + tmp.string());
    os.write("VACACKP1", 8);
    detail::write_u64(os, header_text.size());
    os.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    detail::write_u64(os, count);
    for (auto& [name, t] : named) detail::write_record(os, name, t->shape(), t->values());
    auto write_moments = [&](const char* prefix, Adam& opt,
                             std::vector<std::pair<std::string, Tensor*>>& names) {
      for (std::size_t i = 0; i < opt.params().size(); ++i) {
        detail::write_record(os, std::string(prefix) + ".m." + names[i].first,
                             names[i].second->shape(), opt.moments_m()[i]);
        detail::write_record(os, std::string(prefix) + ".v." + names[i].first,
                             names[i].second->shape(), opt.moments_v()[i]);
      }
    };
    auto tp = mst.models.theta_params();
    auto vp = mst.models.vi_params();
    write_moments("adam_theta", mst.opt_theta, tp);
    write_moments("adam_vi", mst.opt_vi, vp);
    if (with_best)
      for (std::size_t i = 0; i < named.size(); ++i)
        detail::write_record(os, "best." + named[i].first, named[i].second->shape(),
                             st.best_params[i]);
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "VACACKP1", 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  const auto header_len = detail::read_u64(is);
  std::string header_text(header_len, '\0');
  is.read(header_text.data(), static_cast<std::streamsize>(header_len));
  const auto header = nlohmann::json::parse(header_text);

  TrainState st;
  const auto& arch = header.at("arch");
  st.arch.mode = arch.at("mode").get<std::string>() == "placement" ? Mode::placement
                                                                   : Mode::logic_synthesis;
  st.arch.b = arch.at("b").get<int>();
  st.arch.a = arch.at("a").get<int>();
  st.arch.geom_channels = arch.at("geom_channels").get<int>();
  st.arch.infer_hidden = arch.at("infer_hidden").get<int>();
  st.arch.reg_hidden = arch.at("reg_hidden").get<int>();

  const auto& c = header.at("config");
  st.cfg.epochs = c.at("epochs").get<int>();
  st.cfg.batch_size = c.at("batch_size").get<int>();
  st.cfg.lr = c.at("lr").get<double>();
  st.cfg.seed = c.at("seed").get<std::uint64_t>();
  st.cfg.patience = c.at("patience").get<int>();
  st.cfg.fused = c.at("fused").get<bool>();
  st.cfg.loss.lambda = c.at("lambda").get<double>();
  st.cfg.loss.tau = c.at("tau").get<double>();
  st.cfg.loss.a = c.at("a").get<int>();
  if (c.contains("sigma_sim")) st.cfg.loss.sigma_sim = c.at("sigma_sim").get<double>();
  st.cfg.prior.alpha_hat = c.at("prior_alpha").get<double>();
  st.cfg.prior.beta_hat = c.at("prior_beta").get<double>();
  st.cfg.infer_hidden = c.at("infer_hidden").get<int>();
  st.cfg.reg_hidden = c.at("reg_hidden").get<int>();
  st.cfg.mode = st.arch.mode;

  const auto& t = header.at("train");
  st.epoch = t.at("epoch").get<int>();
  st.best_val = t.at("best_val").get<double>();
  st.best_epoch = t.at("best_epoch").get<int>();
  st.bad_epochs = t.at("bad_epochs").get<int>();
  st.initial_risk = t.at("initial_risk").get<double>();
  st.initial_vi = t.at("initial_vi").get<double>();

  const auto& nz = header.at("normalizer");
  st.norm.geom_mean = nz.at("geom_mean").get<std::vector<double>>();
  st.norm.geom_std = nz.at("geom_std").get<std::vector<double>>();
  st.norm.topo_mean = nz.at("topo_mean").get<std::vector<double>>();
  st.norm.topo_std = nz.at("topo_std").get<std::vector<double>>();
  st.norm.target_scale = nz.at("target_scale").get<double>();

  st.models = Models(st.arch, st.cfg.seed);
  std::vector<Tensor*> tp, vp;
  for (auto& [n, tt] : st.models.theta_params()) tp.push_back(tt);
  for (auto& [n, tt] : st.models.vi_params()) vp.push_back(tt);
  st.opt_theta = Adam(tp, st.cfg.lr);
  st.opt_vi = Adam(vp, st.cfg.lr);
  st.opt_theta.set_step_count(t.at("adam_theta_t").get<long>());
  st.opt_vi.set_step_count(t.at("adam_vi_t").get<long>());

  auto named = st.models.named_params();
  std::map<std::string, Tensor*> by_name;
  for (auto& [n, tt] : named) by_name[n] = tt;
  auto theta_named = st.models.theta_params();
  auto vi_named = st.models.vi_params();
  std::map<std::string, std::pair<Adam*, std::size_t>> moment_slot;
  for (std::size_t i = 0; i < theta_named.size(); ++i)
    moment_slot[theta_named[i].first] = {&st.opt_theta, i};
  for (std::size_t i = 0; i < vi_named.size(); ++i)
    moment_slot[vi_named[i].first] = {&st.opt_vi, i};

  std::vector<std::vector<double>> best(named.size());
  bool any_best = false;

  const auto n_records = detail::read_u64(is);
  for (std::uint64_t r = 0; r < n_records; ++r) {
    detail::Record rec = detail::read_record(is);
    auto expect_shape = [&](const Tensor* target) {
      if (target->shape() != rec.shape)
        throw std::runtime_error("checkpoint: tensor '" + rec.name + "' has shape " +
                                 shape_str(rec.shape) + " but the architecture expects " +
                                 shape_str(target->shape()));
    };
    if (rec.name.rfind("adam_theta.", 0) == 0 || rec.name.rfind("adam_vi.", 0) == 0) {
      const bool is_m = rec.name.find(".m.") != std::string::npos;
      const std::string pname = rec.name.substr(rec.name.find(is_m ? ".m." : ".v.") + 3);
      auto it = moment_slot.find(pname);
      if (it == moment_slot.end())
        throw std::runtime_error("checkpoint: moments for unknown parameter '" + pname + "'");
      expect_shape(by_name.at(pname));
      auto& buf = is_m ? it->second.first->moments_m()[it->second.second]
                       : it->second.first->moments_v()[it->second.second];
      buf = std::move(rec.data);
    } else if (rec.name.rfind("best.", 0) == 0) {
      const std::string pname = rec.name.substr(5);
      auto it = by_name.find(pname);
      if (it == by_name.end())
        throw std::runtime_error("checkpoint: best snapshot for unknown parameter '" + pname +
                                 "'");
      expect_shape(it->second);
      for (std::size_t i = 0; i < named.size(); ++i)
        if (named[i].first == pname) best[i] = std::move(rec.data);
      any_best = true;
    } else {
      auto it = by_name.find(rec.name);
      if (it == by_name.end())
        throw std::runtime_error("checkpoint: unknown tensor '" + rec.name + "'");
      expect_shape(it->second);
      it->second->values() = std::move(rec.data);
    }
  }
  if (any_best) st.best_params = std::move(best);
  return st;
}

}  // namespace vaca
