#pragma once

// Training pipeline: batch scheduling over contiguous windows, AdamW with
// decoupled weight decay, warmup + linear-decay learning rate, gradient
// clipping at global norm 1.0, and a fully deterministic step loop — the
// (seed, corpus, config) triple pins the loss trajectory bitwise.

#include <cstdio>

#include "model.hpp"
#include "vocab.hpp"

namespace backpack {

struct TrainConfig {
  BackpackConfig model;
  int batch_tokens = 1024;
  int total_steps = 100;
  int warmup_steps = 10;
  double peak_lr = 3e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  uint64_t seed = 0;
  int seq_len = 64;           // training window; must not exceed model.seq_len
  double clip_norm = 1.0;
  int eval_interval = 50;
  double heldout_fraction = 0.1;
  int eval_max_tokens = 8192;

  void validate() const {
    model.validate();
    if (seq_len < 1 || seq_len > model.seq_len)
      throw DimensionError("train config: seq_len must be in [1, model seq_len]");
    if (batch_tokens < seq_len || batch_tokens % seq_len != 0)
      throw DimensionError("train config: batch_tokens must be a positive multiple of seq_len");
    if (total_steps < 1) throw DimensionError("train config: total_steps must be >= 1");
    if (warmup_steps < 0 || warmup_steps >= total_steps)
      throw DimensionError("train config: require 0 <= warmup_steps < total_steps");
    if (!(peak_lr > 0.0)) throw DimensionError("train config: peak_lr must be positive");
    if (heldout_fraction < 0.0 || heldout_fraction > 0.5)
      throw DimensionError("train config: heldout_fraction must be in [0, 0.5]");
  }
};

// Linear 0 -> peak over [0, warmup], then linear peak -> 0 over
// [warmup, total]. Exact at the knots: lr(warmup) == peak, lr(total) == 0.
inline double lr_at(long step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) throw UsageError("lr_at: step out of range");
  double peak = cfg.peak_lr;
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  return peak * static_cast<double>(cfg.total_steps - step) /
         static_cast<double>(cfg.total_steps - cfg.warmup_steps);
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  long step = 0;
  std::vector<std::vector<double>> m;  // first moments, one vector per parameter
  std::vector<std::vector<double>> v;  // second moments

  static OptimizerState for_params(const std::vector<std::pair<std::string, Tensor>>& params) {
    OptimizerState s;
    for (const auto& [name, t] : params) {
      s.m.emplace_back(t.size(), 0.0);
      s.v.emplace_back(t.size(), 0.0);
    }
    return s;
  }
};

// Global L2-norm clipping across every parameter gradient. Returns the norm
// before clipping. Missing gradients count as zero.
inline double clip_gradients(const std::vector<std::pair<std::string, Tensor>>& params,
                             double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params)
    for (double g : t.grad()) sq += g * g;
  double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (const auto& [name, t] : params) {
      auto& g = const_cast<std::vector<double>&>(t.grad());
      for (double& x : g) x *= s;
    }
  }
  return norm;
}

// One AdamW step with bias correction and decoupled weight decay. Fails
// fast on non-finite gradients.
inline void adamw_step(const std::vector<std::pair<std::string, Tensor>>& params,
                       OptimizerState& st, double lr, const AdamWConfig& cfg) {
  if (st.m.size() != params.size() || st.v.size() != params.size())
    throw DimensionError("adamw_step: optimizer state does not mirror parameters");
  st.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].second;
    auto& m = st.m[p];
    auto& v = st.v[p];
    if (m.size() != t.size()) throw DimensionError("adamw_step: state shape mismatch");
    const std::vector<double>& g = t.grad();
    auto& w = t.data();
    bool has_grad = g.size() == w.size();
    for (size_t i = 0; i < w.size(); ++i) {
      double gi = has_grad ? g[i] : 0.0;
      if (std::isnan(gi) || std::isinf(gi))
        throw NumericError("adamw_step: non-finite gradient in " + params[p].first);
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w[i]);
    }
  }
}

// Contiguous (input, target-shifted-by-one) windows over an id stream,
// visited in an order reshuffled every epoch from the seed. Batches that
// straddle an epoch boundary are filled from the fresh shuffle.
class BatchStream {
 public:
  struct Window {
    std::span<const int> input;
    std::span<const int> target;
  };

  BatchStream(std::vector<int> ids, int seq_len, int batch_tokens, uint64_t seed)
      : ids_(std::move(ids)), seq_len_(seq_len), rng_(seed) {
    if (seq_len < 1) throw DimensionError("batch_stream: seq_len must be >= 1");
    if (batch_tokens < seq_len || batch_tokens % seq_len != 0)
      throw DimensionError("batch_stream: batch_tokens must be a multiple of seq_len");
    if (static_cast<int>(ids_.size()) <= seq_len)
      throw DataError("batch_stream: corpus shorter than one window");
    windows_ = static_cast<int>((ids_.size() - 1) / static_cast<size_t>(seq_len));
    per_batch_ = batch_tokens / seq_len;
    order_.resize(static_cast<size_t>(windows_));
    reshuffle();
  }

  int windows_per_epoch() const { return windows_; }
  int windows_per_batch() const { return per_batch_; }
  uint64_t rng_state() const { return rng_.state(); }

  std::vector<Window> next() {
    std::vector<Window> batch;
    batch.reserve(static_cast<size_t>(per_batch_));
    for (int b = 0; b < per_batch_; ++b) {
      if (cursor_ >= windows_) reshuffle();
      int w = order_[static_cast<size_t>(cursor_++)];
      const int* base = ids_.data() + static_cast<size_t>(w) * seq_len_;
      batch.push_back({{base, static_cast<size_t>(seq_len_)},
                       {base + 1, static_cast<size_t>(seq_len_)}});
    }
    return batch;
  }

 private:
  void reshuffle() {
    for (int i = 0; i < windows_; ++i) order_[static_cast<size_t>(i)] = i;
    for (int i = windows_ - 1; i > 0; --i) {
      int j = static_cast<int>(rng_.below(static_cast<uint64_t>(i) + 1));
      std::swap(order_[static_cast<size_t>(i)], order_[static_cast<size_t>(j)]);
    }
    cursor_ = 0;
  }

  std::vector<int> ids_;
  int seq_len_;
  int windows_ = 0;
  int per_batch_ = 0;
  int cursor_ = 0;
  std::vector<int> order_;
  Rng rng_;
};

// Mean next-token NLL over non-overlapping windows of an id stream,
// token-weighted, capped at max_tokens.
inline double mean_nll(const BackpackModel& m, std::span<const int> ids, int seq_len,
                       int max_tokens = 1 << 30) {
  if (ids.size() < 2) throw DataError("mean_nll: need at least two tokens");
  double total = 0.0;
  long count = 0;
  size_t pos = 0;
  while (pos + 1 < ids.size() && count < max_tokens) {
    size_t len = std::min(static_cast<size_t>(seq_len), ids.size() - 1 - pos);
    auto inputs = ids.subspan(pos, len);
    auto targets = ids.subspan(pos + 1, len);
    double loss = lm_loss(m, inputs, targets).item();
    total += loss * static_cast<double>(len);
    count += static_cast<long>(len);
    pos += len;
  }
  return total / static_cast<double>(count);
}

struct TrainLogRow {
  long step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
  bool has_eval = false;
};

struct TrainResult {
  BackpackModel model;
  Vocabulary vocab;
  OptimizerState opt;
  uint64_t rng_state = 0;  // batch-stream RNG state at the end of training
  long step = 0;
  std::vector<TrainLogRow> log;
  double final_eval_loss = 0.0;
  bool has_final_eval = false;
};

inline std::string loss_log_csv(const std::vector<TrainLogRow>& log) {
  std::string out = "step,lr,train_loss,eval_loss\n";
  char buf[160];
  for (const auto& r : log) {
    if (r.has_eval)
      std::snprintf(buf, sizeof buf, "%ld,%.10g,%.10g,%.10g\n", r.step, r.lr, r.train_loss, r.eval_loss);
    else
      std::snprintf(buf, sizeof buf, "%ld,%.10g,%.10g,\n", r.step, r.lr, r.train_loss);
    out += buf;
  }
  return out;
}

inline TrainResult train(TrainConfig cfg, const std::string& corpus, Vocabulary vocab) {
  if (cfg.model.vocab_size == 0) cfg.model.vocab_size = vocab.size();
  if (cfg.model.vocab_size != vocab.size())
    throw DimensionError("train: config vocab_size disagrees with the vocabulary");
  cfg.validate();

  std::vector<int> ids;
  ids.push_back(Vocabulary::kBos);
  {
    std::vector<int> body = vocab.encode(corpus);
    ids.insert(ids.end(), body.begin(), body.end());
  }
  size_t heldout = static_cast<size_t>(std::floor(cfg.heldout_fraction * static_cast<double>(ids.size())));
  if (heldout > 0 && heldout < 2) heldout = 2;
  if (heldout >= ids.size()) throw DataError("train: corpus too small for the held-out split");
  std::vector<int> train_ids(ids.begin(), ids.end() - static_cast<long>(heldout));
  std::span<const int> eval_ids(ids.data() + ids.size() - heldout, heldout);

  // Sub-seeds for init and batching are derived from one master stream so
  // the pair (seed) -> (init, batch order) is stable.
  Rng master(cfg.seed);
  uint64_t init_seed = master.next_u64();
  uint64_t batch_seed = master.next_u64();

  TrainResult out{BackpackModel(cfg.model, init_seed), std::move(vocab), {}, 0, 0, {}, 0.0, false};
  out.opt = OptimizerState::for_params(out.model.parameters());
  AdamWConfig acfg{cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};
  BatchStream stream(std::move(train_ids), cfg.seq_len, cfg.batch_tokens, batch_seed);

  for (long step = 1; step <= cfg.total_steps; ++step) {
    auto batch = stream.next();
    Tensor loss;
    for (const auto& w : batch) {
      Tensor wl = lm_loss(out.model, w.input, w.target);
      loss = loss.defined() ? add(loss, wl) : wl;
    }
    loss = scale(loss, 1.0 / static_cast<double>(batch.size()));
    double train_loss = loss.item();
    if (!std::isfinite(train_loss))
      throw NumericError("train: loss diverged to non-finite at step " + std::to_string(step));
    backward(loss);
    clip_gradients(out.model.parameters(), cfg.clip_norm);
    double lr = lr_at(step, cfg);
    adamw_step(out.model.parameters(), out.opt, lr, acfg);

    TrainLogRow row{step, lr, train_loss, 0.0, false};
    bool eval_now = heldout >= 2 && (step % cfg.eval_interval == 0 || step == cfg.total_steps);
    if (eval_now) {
      row.eval_loss = mean_nll(out.model, eval_ids, cfg.seq_len, cfg.eval_max_tokens);
      row.has_eval = true;
      out.final_eval_loss = row.eval_loss;
      out.has_final_eval = true;
    }
    out.log.push_back(row);
  }
  out.step = cfg.total_steps;
  out.rng_state = stream.rng_state();
  return out;
}

}  // namespace backpack
