#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "friendly/adam.hpp"
#include "friendly/data.hpp"
#include "friendly/models.hpp"
#include "friendly/params.hpp"
#include "friendly/schedule.hpp"
#include "friendly/tape.hpp"

namespace friendly {

enum class Regime { ct, ft, eef, nft };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::ct: return "ct";
    case Regime::ft: return "ft";
    case Regime::eef: return "eef";
    case Regime::nft: return "nft";
  }
  return "?";
}

inline Regime regime_from(const std::string& s) {
  if (s == "ct") return Regime::ct;
  if (s == "ft") return Regime::ft;
  if (s == "eef") return Regime::eef;
  if (s == "nft") return Regime::nft;
  throw Error("unknown regime: " + s);
}

struct RunConfig {
  Regime regime = Regime::ct;
  std::size_t batch_size = 32;
  double alpha = 1e-3;  // main-net learning rate
  double beta = 1e-4;   // aux-net learning rate
  SchedulePlan plan;
  std::uint64_t seed = 1;
  int ft_tau_max = 10;
  double ft_step = 0.1;
  double ft_eps_stop = 0.01;
  double eef_p0 = 0.5;
  int eval_every = 1;
  bool reset_adam_on_drop = false;

  void validate() const {
    if (batch_size < 1) throw Error("run config: batch_size must be >= 1");
    if (alpha <= 0.0) throw Error("run config: alpha must be positive");
    if (regime != Regime::ct) plan.validate();
    if (regime == Regime::nft && beta <= 0.0)
      throw Error("run config: beta must be positive");
    if (regime == Regime::ft) {
      if (ft_tau_max < 0) throw Error("run config: ft_tau_max must be >= 0");
      if (ft_tau_max > 0 && ft_step <= 0.0)
        throw Error("run config: ft_step must be positive");
    }
    if (regime == Regime::eef && (eef_p0 <= 0.0 || eef_p0 > 1.0))
      throw Error("run config: eef_p0 must be in (0,1]");
    if (eval_every < 1) throw Error("run config: eval_every must be >= 1");
    if (plan.gamma_max < 0) throw Error("run config: gamma_max must be >= 0");
  }
};

struct EpochRecord {
  int gamma = 0;
  double eta = 0.0;
  double train_loss = 0.0;
  double train_error = 0.0;
  double val_error = 0.0;
  double test_error = 0.0;
  double mean_delta_sq = 0.0;
  double wall_ms = 0.0;
};

template <class Real>
struct TrainHooks {
  /// Called with the exact input tensor the model consumed for one batch,
  /// plus the dataset indices it covers.
  std::function<void(int gamma, int phase, std::size_t batch_index,
                     const Tensor<Real>& x_used, const std::vector<std::size_t>& idx)>
      on_batch;
  std::function<void(int gamma, int phase)> on_phase_end;
  /// Aux pointer is null once the auxiliary network has been dropped.
  std::function<void(int gamma, const EpochRecord& rec, Classifier<Real>& model,
                     Auxiliary<Real>* active_aux)>
      on_epoch_end;
};

template <class Real>
struct TrainResult {
  std::vector<EpochRecord> records;
  ParamStore<Real> best_params;
  ParamStore<Real> best_aux_params;
  int best_gamma = 0;
  double best_val_error = std::numeric_limits<double>::infinity();
  double best_test_error = std::numeric_limits<double>::infinity();
};

namespace detail {

inline std::size_t argmax_row(const std::vector<double>& row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

template <class Real>
std::size_t count_errors(const Tensor<Real>& logits, const std::vector<int>& labels) {
  std::size_t errs = 0;
  const std::size_t c = logits.shape[1];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits.at2(i, j) > logits.at2(i, best)) best = j;
    if (best != static_cast<std::size_t>(labels[i])) ++errs;
  }
  return errs;
}

inline constexpr std::size_t kEvalChunk = 256;

}  // namespace detail

/// Error rate of the classifier on a set of indices, eval mode, raw inputs.
/// An empty index set reports 0 by convention.
template <class Real>
double error_rate(Classifier<Real>& model, const Dataset<Real>& ds,
                  const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  std::size_t errs = 0;
  for (std::size_t at = 0; at < idx.size(); at += detail::kEvalChunk) {
    const std::size_t hi = std::min(at + detail::kEvalChunk, idx.size());
    std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(at),
                                   idx.begin() + static_cast<std::ptrdiff_t>(hi));
    const Tensor<Real> logits = model.logits_eval(ds.gather(chunk));
    errs += detail::count_errors(logits, ds.labels(chunk));
  }
  return static_cast<double>(errs) / static_cast<double>(idx.size());
}

/// Per-example cross-entropy under the current weights, eval mode.
template <class Real>
std::vector<double> per_example_losses(Classifier<Real>& model, const Dataset<Real>& ds,
                                       const std::vector<std::size_t>& idx) {
  std::vector<double> out(idx.size());
  for (std::size_t at = 0; at < idx.size(); at += detail::kEvalChunk) {
    const std::size_t hi = std::min(at + detail::kEvalChunk, idx.size());
    std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(at),
                                   idx.begin() + static_cast<std::ptrdiff_t>(hi));
    Tape<Real> tape;
    const int xv = tape.leaf(ds.gather(chunk));
    auto pb = bind_params(tape, model.params(), /*trainable=*/false);
    const int logits = model.forward(tape, xv, pb, ForwardCtx{});
    const int ce = tape.cross_entropy(logits, ds.labels(chunk));
    const Tensor<Real>& per = tape.per_example(ce);
    for (std::size_t i = 0; i < chunk.size(); ++i)
      out[at + i] = static_cast<double>(per[i]);
  }
  return out;
}

/// Eq. 1: mean cross-entropy of f(x_i, w) over a batch.
template <class Real>
double ct_loss(Classifier<Real>& model, const Tensor<Real>& x,
               const std::vector<int>& y) {
  if (y.empty()) throw Error("ct_loss: empty batch");
  Tape<Real> tape;
  const int xv = tape.leaf(x);
  auto pb = bind_params(tape, model.params(), /*trainable=*/false);
  const int logits = model.forward(tape, xv, pb, ForwardCtx{});
  return static_cast<double>(tape.value(tape.cross_entropy(logits, y)).item());
}

/// Eq. 4: mean over the batch of cross-entropy on transformed inputs plus
/// eta times the squared perturbation norm.
template <class Real>
double nft_loss(Classifier<Real>& model, Auxiliary<Real>& aux, const Tensor<Real>& x,
                const std::vector<int>& y, double eta) {
  if (y.empty()) throw Error("nft_loss: empty batch");
  if (eta < 0.0) throw Error("nft_loss: eta must be nonnegative");
  Tape<Real> tape;
  const int xv = tape.leaf(x);
  auto pb_aux = bind_params(tape, aux.params(), /*trainable=*/false);
  auto pb = bind_params(tape, model.params(), /*trainable=*/false);
  const int xt = aux.forward(tape, xv, pb_aux, ForwardCtx{});
  const int logits = model.forward(tape, xt, pb, ForwardCtx{});
  const int ce = tape.cross_entropy(logits, y);
  if (aux.is_identity()) return static_cast<double>(tape.value(ce).item());
  const int delta = tape.sub(xt, xv);
  const int pen = tape.scale(tape.sum(tape.square(delta)),
                             static_cast<Real>(eta / static_cast<double>(y.size())));
  return static_cast<double>(tape.value(tape.add(ce, pen)).item());
}

namespace detail {

template <class Real>
struct EpochStats {
  double loss_sum = 0.0;  // example-weighted
  std::size_t errors = 0;
  std::size_t examples = 0;
  double delta_sq_sum = 0.0;
};

template <class Real>
std::uint64_t dropout_key(std::uint64_t seed, int gamma, int phase, std::size_t batch) {
  Rng r = stream(seed, {stream_tag::kDropout, static_cast<std::uint64_t>(gamma),
                        static_cast<std::uint64_t>(phase), batch});
  return r.next_u64();
}

/// One optimizer pass of the main network over a batch cover. When `aux` is
/// non-null its parameters are bound frozen and inputs are transformed;
/// `deltas` (FT) adds precomputed per-example offsets instead.
template <class Real>
void main_update_pass(const Dataset<Real>& ds, Classifier<Real>& model,
                      Auxiliary<Real>* aux, const Tensor<Real>* deltas,
                      const BatchPlan& plan, double eta, double alpha,
                      Adam<Real>& adam_w, const RunConfig& cfg, int gamma,
                      EpochStats<Real>& stats, const TrainHooks<Real>* hooks) {
  const bool transform = aux != nullptr && !aux->is_identity();
  for (std::size_t b = 0; b < plan.n_batches(); ++b) {
    const auto idx = plan.batch(b);
    Tensor<Real> x_raw = ds.gather(idx);
    const auto y = ds.labels(idx);
    if (deltas != nullptr) {
      const std::size_t d = ds.dim();
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < d; ++j)
          x_raw.at2(r, j) += deltas->at2(idx[r], j);
    }
    Tape<Real> tape;
    const int xv = tape.leaf(std::move(x_raw));
    int x_in = xv;
    ParamBinding<Real> pb_aux;
    if (transform) {
      pb_aux = bind_params(tape, aux->params(), /*trainable=*/false);
      x_in = aux->forward(tape, xv, pb_aux, ForwardCtx{});
    }
    auto pb = bind_params(tape, model.params(), /*trainable=*/true);
    ForwardCtx ctx;
    ctx.train = true;
    ctx.update_bn_running = true;
    ctx.dropout_key = dropout_key<Real>(cfg.seed, gamma, /*phase=*/2, b);
    const int logits = model.forward(tape, x_in, pb, ctx);
    const int ce = tape.cross_entropy(logits, y);
    int loss = ce;
    if (transform) {
      const int delta = tape.sub(x_in, xv);
      stats.delta_sq_sum += static_cast<double>(tape.value(tape.sum(tape.square(delta))).item());
      const int pen = tape.scale(tape.sum(tape.square(delta)),
                                 static_cast<Real>(eta / static_cast<double>(y.size())));
      loss = tape.add(ce, pen);
    } else if (deltas != nullptr) {
      double dsq = 0.0;
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < ds.dim(); ++j) {
          const double dv = static_cast<double>(deltas->at2(idx[r], j));
          dsq += dv * dv;
        }
      stats.delta_sq_sum += dsq;
      if (dsq > 0.0) {
        const int delta_leaf = tape.leaf([&] {
          Tensor<Real> t({idx.size(), ds.dim()});
          for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < ds.dim(); ++j)
              t.at2(r, j) = deltas->at2(idx[r], j);
          return t;
        }());
        const int pen = tape.scale(tape.sum(tape.square(delta_leaf)),
                                   static_cast<Real>(eta / static_cast<double>(y.size())));
        loss = tape.add(ce, pen);
      }
    }
    const double loss_val = static_cast<double>(tape.value(loss).item());
    if (!std::isfinite(loss_val))
      throw Diverged("training diverged at gamma " + std::to_string(gamma) + ", batch " +
                     std::to_string(b));
    if (hooks && hooks->on_batch) hooks->on_batch(gamma, 2, b, tape.value(x_in), idx);
    tape.backward(loss);
    adam_w.step(model.params(), collect_grads(tape, pb), static_cast<Real>(alpha));
    stats.loss_sum += loss_val * static_cast<double>(y.size());
    stats.errors += count_errors(tape.value(logits), y);
    stats.examples += y.size();
  }
  if (hooks && hooks->on_phase_end) hooks->on_phase_end(gamma, 2);
}

/// Phase 1 of the NFT iteration: update theta on Eq. 4 with w frozen.
template <class Real>
void aux_update_pass(const Dataset<Real>& ds, Classifier<Real>& model,
                     Auxiliary<Real>& aux, const BatchPlan& plan, double eta,
                     double beta, Adam<Real>& adam_theta, const RunConfig& cfg,
                     int gamma, const TrainHooks<Real>* hooks) {
  for (std::size_t b = 0; b < plan.n_batches(); ++b) {
    const auto idx = plan.batch(b);
    const auto y = ds.labels(idx);
    Tape<Real> tape;
    const int xv = tape.leaf(ds.gather(idx));
    auto pb_aux = bind_params(tape, aux.params(), /*trainable=*/true);
    auto pb = bind_params(tape, model.params(), /*trainable=*/false);
    const int xt = aux.forward(tape, xv, pb_aux, ForwardCtx{});
    ForwardCtx ctx;
    ctx.train = true;
    ctx.update_bn_running = false;  // phase 1 must leave the main net untouched
    ctx.dropout_key = dropout_key<Real>(cfg.seed, gamma, /*phase=*/1, b);
    const int logits = model.forward(tape, xt, pb, ctx);
    const int ce = tape.cross_entropy(logits, y);
    const int delta = tape.sub(xt, xv);
    const int pen = tape.scale(tape.sum(tape.square(delta)),
                               static_cast<Real>(eta / static_cast<double>(y.size())));
    const int loss = tape.add(ce, pen);
    const double loss_val = static_cast<double>(tape.value(loss).item());
    if (!std::isfinite(loss_val))
      throw Diverged("aux update diverged at gamma " + std::to_string(gamma) + ", batch " +
                     std::to_string(b));
    if (hooks && hooks->on_batch) hooks->on_batch(gamma, 1, b, tape.value(xt), idx);
    tape.backward(loss);
    adam_theta.step(aux.params(), collect_grads(tape, pb_aux), static_cast<Real>(beta));
  }
  if (hooks && hooks->on_phase_end) hooks->on_phase_end(gamma, 1);
}

template <class Real>
struct RunState {
  const Dataset<Real>& ds;
  std::vector<std::size_t> train_idx, val_idx, test_idx;
  TrainResult<Real> result;
  double last_val = 0.0, last_test = 0.0;

  explicit RunState(const Dataset<Real>& dataset)
      : ds(dataset),
        train_idx(ds.indices(Split::train)),
        val_idx(ds.indices(Split::val)),
        test_idx(ds.indices(Split::test)) {
    if (train_idx.empty()) throw Error("training: dataset has no train examples");
  }

  void finish_epoch(int gamma, double eta, const EpochStats<Real>& stats,
                    Classifier<Real>& model, Auxiliary<Real>* aux,
                    Auxiliary<Real>* active_aux, const RunConfig& cfg,
                    double wall_ms, const TrainHooks<Real>* hooks) {
    EpochRecord rec;
    rec.gamma = gamma;
    rec.eta = eta;
    rec.train_loss = stats.loss_sum / static_cast<double>(stats.examples);
    rec.train_error =
        static_cast<double>(stats.errors) / static_cast<double>(stats.examples);
    rec.mean_delta_sq = stats.delta_sq_sum / static_cast<double>(train_idx.size());
    const bool eval_now =
        gamma % cfg.eval_every == 0 || gamma == cfg.plan.gamma_max || gamma == 1;
    if (eval_now) {
      last_val = error_rate(model, ds, val_idx);
      last_test = error_rate(model, ds, test_idx);
    }
    rec.val_error = last_val;
    rec.test_error = last_test;
    rec.wall_ms = wall_ms;
    result.records.push_back(rec);
    if (eval_now && rec.val_error < result.best_val_error) {
      result.best_val_error = rec.val_error;
      result.best_test_error = rec.test_error;
      result.best_gamma = gamma;
      result.best_params = model.params();
      if (aux != nullptr) result.best_aux_params = aux->params();
    }
    if (hooks && hooks->on_epoch_end) hooks->on_epoch_end(gamma, rec, model, active_aux);
  }
};

}  // namespace detail

/// Classic Training: mini-batch empirical risk minimization with Adam.
template <class Real>
TrainResult<Real> train_ct(const Dataset<Real>& ds, Classifier<Real>& model,
                           const RunConfig& cfg, const TrainHooks<Real>* hooks = nullptr) {
  cfg.validate();
  detail::RunState<Real> st(ds);
  Adam<Real> adam_w(model.params());
  for (int gamma = 1; gamma <= cfg.plan.gamma_max; ++gamma) {
    const auto t0 = std::chrono::steady_clock::now();
    detail::EpochStats<Real> stats;
    const auto plan = make_batch_plan(st.train_idx, cfg.batch_size, cfg.seed,
                                      static_cast<std::uint64_t>(gamma), /*phase=*/2);
    detail::main_update_pass(ds, model, static_cast<Auxiliary<Real>*>(nullptr),
                             static_cast<const Tensor<Real>*>(nullptr),
                             plan, 0.0, cfg.alpha, adam_w, cfg, gamma, stats, hooks);
    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    st.finish_epoch(gamma, 0.0, stats, model, nullptr, nullptr, cfg, ms, hooks);
  }
  return std::move(st.result);
}

/// Neural Friendly Training, the two-phase alternation: Phase 1 trains the
/// auxiliary simplifier on Eq. 4 (w frozen, rate beta) while the plan allows,
/// Phase 2 always trains the classifier (theta frozen, rate alpha). After
/// gamma_max_simp the transform is the identity and batches are raw data.
template <class Real>
TrainResult<Real> train_nft(const Dataset<Real>& ds, Classifier<Real>& model,
                            Auxiliary<Real>& aux, const RunConfig& cfg,
                            const TrainHooks<Real>* hooks = nullptr) {
  cfg.validate();
  if (cfg.regime != Regime::nft) throw Error("train_nft: config regime is not nft");
  detail::RunState<Real> st(ds);
  Adam<Real> adam_w(model.params());
  Adam<Real> adam_theta(aux.params());
  bool adam_reset_done = false;
  for (int gamma = 1; gamma <= cfg.plan.gamma_max; ++gamma) {
    const auto t0 = std::chrono::steady_clock::now();
    const double eta = eta_at(cfg.plan, gamma);
    const Phase phase = phase_of(cfg.plan, gamma);
    if (phase == Phase::update_aux && aux.params().parameter_count() > 0) {
      const auto plan1 = make_batch_plan(st.train_idx, cfg.batch_size, cfg.seed,
                                         static_cast<std::uint64_t>(gamma), /*phase=*/1);
      detail::aux_update_pass(ds, model, aux, plan1, eta, cfg.beta, adam_theta, cfg,
                              gamma, hooks);
    }
    if (phase == Phase::dropped && cfg.reset_adam_on_drop && !adam_reset_done) {
      adam_w.reset();
      adam_reset_done = true;
    }
    detail::EpochStats<Real> stats;
    const auto plan2 = make_batch_plan(st.train_idx, cfg.batch_size, cfg.seed,
                                       static_cast<std::uint64_t>(gamma), /*phase=*/2);
    Auxiliary<Real>* active = phase == Phase::dropped ? nullptr : &aux;
    detail::main_update_pass(ds, model, active, static_cast<const Tensor<Real>*>(nullptr),
                             plan2, eta, cfg.alpha, adam_w, cfg, gamma, stats, hooks);
    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    st.finish_epoch(gamma, eta, stats, model, &aux, active, cfg, ms, hooks);
  }
  return std::move(st.result);
}

/// Per-example perturbation estimate of Friendly Training: at most tau
/// descent steps on l(f(x+delta, w), y) + eta*||delta||^2, starting from
/// delta = 0, stopping early once the per-example loss falls below eps_stop.
/// The quadratic penalty is applied as its exact proximal shrinkage, so the
/// update stays stable for arbitrarily large eta. Batched; each example's
/// row evolves independently.
template <class Real>
Tensor<Real> ft_estimate_deltas(Classifier<Real>& model, const Tensor<Real>& x,
                                const std::vector<int>& y, int tau, double step,
                                double eta, double eps_stop) {
  const std::size_t b = y.size(), d = x.shape[1];
  Tensor<Real> delta({b, d});
  if (tau <= 0) return delta;
  const Real shrink = static_cast<Real>(1.0 / (1.0 + 2.0 * step * eta));
  std::vector<char> active(b, 1);
  for (int t = 0; t < tau; ++t) {
    Tape<Real> tape;
    const int dv = tape.leaf(delta, /*requires_grad=*/true);
    const int xv = tape.leaf(x);
    const int xt = tape.add(xv, dv);
    auto pb = bind_params(tape, model.params(), /*trainable=*/false);
    const int logits = model.forward(tape, xt, pb, ForwardCtx{});
    const int ce = tape.cross_entropy(logits, y);
    // per-example objective: scale the mean back to a sum so rows stay independent
    const int obj = tape.scale(ce, static_cast<Real>(b));
    const Tensor<Real>& per = tape.per_example(ce);
    bool any = false;
    for (std::size_t i = 0; i < b; ++i) {
      if (active[i] && static_cast<double>(per[i]) < eps_stop) active[i] = 0;
      any = any || active[i];
    }
    if (!any) break;
    tape.backward(obj);
    const Tensor<Real> g = tape.grad(dv);
    for (std::size_t i = 0; i < b; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = 0; j < d; ++j)
        delta.at2(i, j) = (delta.at2(i, j) - static_cast<Real>(step) * g.at2(i, j)) * shrink;
    }
  }
  return delta;
}

/// Single-example convenience wrapper.
template <class Real>
Tensor<Real> ft_estimate_delta(Classifier<Real>& model, const Tensor<Real>& x_row,
                               int y, int tau, double step, double eta,
                               double eps_stop = 0.01) {
  return ft_estimate_deltas(model, x_row, std::vector<int>{y}, tau, step, eta, eps_stop);
}

/// Friendly Training: per-epoch, per-example delta estimation (Phase 1)
/// followed by classifier updates on x + delta (Phase 2). tau decays along
/// the same developmental plan; after gamma_max_simp deltas are identically
/// zero and batches are raw data.
template <class Real>
TrainResult<Real> train_ft(const Dataset<Real>& ds, Classifier<Real>& model,
                           const RunConfig& cfg, const TrainHooks<Real>* hooks = nullptr) {
  cfg.validate();
  if (cfg.regime != Regime::ft) throw Error("train_ft: config regime is not ft");
  detail::RunState<Real> st(ds);
  Adam<Real> adam_w(model.params());
  const std::size_t n = ds.size(), d = ds.dim();
  for (int gamma = 1; gamma <= cfg.plan.gamma_max; ++gamma) {
    const auto t0 = std::chrono::steady_clock::now();
    const double eta = eta_at(cfg.plan, gamma);
    const Phase phase = phase_of(cfg.plan, gamma);
    const int tau_eff =
        phase == Phase::dropped
            ? 0
            : static_cast<int>(std::lround(cfg.ft_tau_max * (1.0 - eta / cfg.plan.eta_max)));
    Tensor<Real> deltas({n, d});
    bool any_delta = false;
    if (tau_eff > 0) {
      const auto plan1 = make_batch_plan(st.train_idx, cfg.batch_size, cfg.seed,
                                         static_cast<std::uint64_t>(gamma), /*phase=*/1);
      for (std::size_t b = 0; b < plan1.n_batches(); ++b) {
        const auto idx = plan1.batch(b);
        const Tensor<Real> db =
            ft_estimate_deltas(model, ds.gather(idx), ds.labels(idx), tau_eff,
                               cfg.ft_step, eta, cfg.ft_eps_stop);
        for (std::size_t r = 0; r < idx.size(); ++r)
          for (std::size_t j = 0; j < d; ++j) {
            deltas.at2(idx[r], j) = db.at2(r, j);
            any_delta = any_delta || db.at2(r, j) != Real(0);
          }
      }
      if (hooks && hooks->on_phase_end) hooks->on_phase_end(gamma, 1);
    }
    detail::EpochStats<Real> stats;
    const auto plan2 = make_batch_plan(st.train_idx, cfg.batch_size, cfg.seed,
                                       static_cast<std::uint64_t>(gamma), /*phase=*/2);
    detail::main_update_pass(ds, model, static_cast<Auxiliary<Real>*>(nullptr),
                             any_delta ? &deltas : nullptr, plan2, eta, cfg.alpha,
                             adam_w, cfg, gamma, stats, hooks);
    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    st.finish_epoch(gamma, eta, stats, model, nullptr, nullptr, cfg, ms, hooks);
  }
  return std::move(st.result);
}

/// Easy-Examples First: each epoch trains only on the p(gamma) fraction of
/// lowest-loss examples, ramping to the full set at gamma_max_simp. This is
/// an approximation of the baseline named in the original comparison; the
/// exact procedure was never published alongside it.
template <class Real>
TrainResult<Real> train_eef(const Dataset<Real>& ds, Classifier<Real>& model,
                            const RunConfig& cfg, const TrainHooks<Real>* hooks = nullptr) {
  cfg.validate();
  if (cfg.regime != Regime::eef) throw Error("train_eef: config regime is not eef");
  detail::RunState<Real> st(ds);
  Adam<Real> adam_w(model.params());
  for (int gamma = 1; gamma <= cfg.plan.gamma_max; ++gamma) {
    const auto t0 = std::chrono::steady_clock::now();
    double ramp = static_cast<double>(gamma - 1) / static_cast<double>(cfg.plan.gamma_max_simp - 1);
    ramp = std::min(1.0, std::max(0.0, ramp));
    const double p = cfg.eef_p0 + ramp * (1.0 - cfg.eef_p0);
    std::vector<std::size_t> pool;
    if (p >= 1.0) {
      pool = st.train_idx;
    } else {
      const auto losses = per_example_losses(model, ds, st.train_idx);
      std::vector<std::size_t> order(st.train_idx.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (losses[a] != losses[b]) return losses[a] < losses[b];
        return st.train_idx[a] < st.train_idx[b];  // ties broken by index
      });
      const std::size_t k = std::max<std::size_t>(
          1, static_cast<std::size_t>(
                 std::lround(p * static_cast<double>(st.train_idx.size()))));
      pool.reserve(k);
      for (std::size_t i = 0; i < k && i < order.size(); ++i)
        pool.push_back(st.train_idx[order[i]]);
      std::sort(pool.begin(), pool.end());
    }
    detail::EpochStats<Real> stats;
    const auto plan = make_batch_plan(pool, cfg.batch_size, cfg.seed,
                                      static_cast<std::uint64_t>(gamma), /*phase=*/2);
    // error/loss metrics reflect the participating subset
    detail::main_update_pass(ds, model, static_cast<Auxiliary<Real>*>(nullptr),
                             static_cast<const Tensor<Real>*>(nullptr),
                             plan, 0.0, cfg.alpha, adam_w, cfg, gamma, stats, hooks);
    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    st.finish_epoch(gamma, eta_at(cfg.plan, gamma), stats, model, nullptr, nullptr, cfg,
                    ms, hooks);
  }
  return std::move(st.result);
}

}  // namespace friendly
