#pragma once

// The learning-compression loop: alternate
//
//   L-step   w <- argmin  L(w) + mu/2 || w - sum_i Delta_i - lambda/mu ||^2
//   C-step   theta <- argmin || (w - lambda/mu) - sum_i Delta_i(theta_i) ||^2
//
// over an increasing penalty schedule mu_j = mu0 * growth^j. With the
// multiplier step
//
//   lambda <- lambda - mu (w - sum_i Delta_i)
//
// applied after each C-step this is the augmented-Lagrangian variant; with
// lambda frozen at zero the very same code path is the quadratic-penalty
// variant. The penalty and the multipliers only touch the compressed
// coordinates; uncompressed segments (excluded biases) train freely.
//
// Each step records the train loss of the *feasible* model (the combo's
// decompression dropped into the weight store), the test error when an
// evaluator is supplied, and the constraint gap; both the final and the
// best-by-loss iterate are kept.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "addlc/combo.hpp"
#include "addlc/core.hpp"
#include "addlc/sgd.hpp"
#include "addlc/weight_store.hpp"

namespace addlc {

struct PenaltySchedule {
  double mu0 = 5e-4;
  double growth = 1.1;
  std::size_t max_steps = 50;

  double mu_at(std::size_t j) const { return mu0 * std::pow(growth, static_cast<double>(j)); }
};

inline void validate_schedule(const PenaltySchedule& s) {
  if (!(s.mu0 > 0.0)) throw ConfigError("schedule: mu0 must be positive");
  if (!(s.growth > 1.0)) throw ConfigError("schedule: growth must exceed 1");
  if (s.max_steps == 0) throw ConfigError("schedule: need at least one step");
}

enum class LcVariant : std::uint8_t { quadratic_penalty = 0, augmented_lagrangian = 1 };

struct LcRecord {
  std::size_t step = 0;
  double mu = 0.0;
  double loss = 0.0;        // train loss of the feasible model
  double test_error = std::numeric_limits<double>::quiet_NaN();
  double residual = 0.0;    // || w - sum Delta ||_2 over compressed coords
};

struct LcConfig {
  PenaltySchedule schedule;
  LcVariant variant = LcVariant::augmented_lagrangian;
  double stop_rel_tol = 1e-4;     // stop when residual < tol * ||w||
  std::size_t alternations = 30;  // backfit sweeps per C-step
  SgdConfig lstep_opt;
  // Divide the L-step learning rate by (1 + mu). The penalized objective's
  // curvature grows with mu; this keeps plain SGD stable when a schedule is
  // driven far beyond the usual mu << 1 regime (synthetic convergence
  // studies). Off by default: real-data protocols use the raw rate.
  bool scale_lr_with_penalty = false;
};

struct LcState {
  WeightStore w;
  AdditiveCombo combo;
  Vec multipliers;  // lambda; all-zero under the quadratic-penalty variant
  double mu = 0.0;
  std::size_t step = 0;  // steps actually executed
  std::vector<LcRecord> history;
  std::vector<std::string> warnings;

  std::size_t best_step = 0;  // best-by-train-loss iterate
  WeightStore best_w;
  AdditiveCombo best_combo;
};

// ---------------------------------------------------------------- L-step ----

namespace detail {

// Deterministic per-step seed derivation for the L-step optimizer.
inline std::uint64_t lstep_seed(std::uint64_t base, std::size_t step) {
  return base ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(step + 1));
}

}  // namespace detail

// One L-step: approximately minimize the penalized loss around the current
// parts. `multipliers` must be zero (QP) or the running lambda (AL).
template <class Problem>
  requires TrainableProblem<Problem>
double lstep(const Problem& problem, Vec& w, const AdditiveCombo& combo, double mu,
             std::span<const double> multipliers, const SgdConfig& opt,
             bool scale_lr_with_penalty = false) {
  if (w.size() != combo.weight_dim) throw ConfigError("l-step: weight length mismatch");
  // shift = Delta + lambda/mu on the compressed coordinates
  Vec shift = combo.decompress_sum();
  const double inv_mu = 1.0 / mu;
  for (const SegmentRef& s : combo.segments)
    for (std::size_t i = 0; i < s.count(); ++i) {
      const std::size_t c = s.offset + i;
      shift[c] += multipliers[c] * inv_mu;
    }

  auto penalty = [&](const Vec& wv, Vec& grad) {
    double sq = 0.0;
    for (const SegmentRef& s : combo.segments)
      for (std::size_t i = 0; i < s.count(); ++i) {
        const std::size_t c = s.offset + i;
        const double d = wv[c] - shift[c];
        sq += d * d;
        grad[c] += mu * d;
      }
    return 0.5 * mu * sq;
  };

  SgdConfig cfg = opt;
  if (scale_lr_with_penalty) cfg.lr = opt.lr / (1.0 + mu);
  return sgd_nesterov(problem, w, cfg, penalty);
}

// ------------------------------------------------------- multiplier update --

// lambda <- lambda - mu * (w - sum Delta), on the compressed coordinates.
inline void multiplier_step(Vec& multipliers, double mu, std::span<const double> w,
                            const AdditiveCombo& combo) {
  if (multipliers.size() != combo.weight_dim || w.size() != combo.weight_dim)
    throw ConfigError("multiplier step: length mismatch");
  const Vec sum = combo.decompress_sum();
  for (const SegmentRef& s : combo.segments)
    for (std::size_t i = 0; i < s.count(); ++i) {
      const std::size_t c = s.offset + i;
      multipliers[c] -= mu * (w[c] - sum[c]);
    }
}

// ------------------------------------------------------------------- init ---

// Direct compression: fit the combo to the reference weights (the classic
// compress-after-training baseline, and the starting point of the loop).
inline AdditiveCombo init_direct_compress(const WeightStore& w, std::vector<SchemeSpec> specs,
                                          std::size_t alternations = 30) {
  AdditiveCombo combo = make_combo(w, std::move(specs));
  BackfitOptions opt;
  opt.max_alternations = alternations;
  cstep_backfit(w.values, combo, opt);
  return combo;
}

// ------------------------------------------------------------------- loop ---

template <class Problem>
  requires TrainableProblem<Problem>
LcState run_lc(const Problem& problem, const WeightStore& reference,
               std::vector<SchemeSpec> specs, const LcConfig& cfg,
               const std::function<double(const WeightStore&)>& test_eval = {}) {
  validate_schedule(cfg.schedule);
  if (reference.size() != problem.dim()) throw ConfigError("lc: reference/problem mismatch");

  LcState st;
  st.w = reference;
  st.combo = init_direct_compress(st.w, std::move(specs), cfg.alternations);
  st.multipliers.assign(st.w.size(), 0.0);

  std::vector<std::size_t> all(problem.sample_count());
  std::iota(all.begin(), all.end(), std::size_t{0});
  Vec grad_sink;

  double best_loss = std::numeric_limits<double>::infinity();
  double prev_residual = std::numeric_limits<double>::infinity();
  std::size_t stalled = 0;

  BackfitOptions cstep_opt;
  cstep_opt.max_alternations = cfg.alternations;

  for (std::size_t j = 0; j < cfg.schedule.max_steps; ++j) {
    const double mu = cfg.schedule.mu_at(j);
    st.mu = mu;
    st.step = j + 1;

    SgdConfig opt = cfg.lstep_opt;
    opt.seed = detail::lstep_seed(cfg.lstep_opt.seed, j);
    lstep(problem, st.w.values, st.combo, mu, st.multipliers, opt, cfg.scale_lr_with_penalty);

    // C-step target is w shifted by the multiplier estimate
    Vec target = st.w.values;
    const double inv_mu = 1.0 / mu;
    for (const SegmentRef& s : st.combo.segments)
      for (std::size_t i = 0; i < s.count(); ++i) {
        const std::size_t c = s.offset + i;
        target[c] -= st.multipliers[c] * inv_mu;
      }
    cstep_backfit(target, st.combo, cstep_opt);

    if (cfg.variant == LcVariant::augmented_lagrangian)
      multiplier_step(st.multipliers, mu, st.w.values, st.combo);

    LcRecord rec;
    rec.step = j;
    rec.mu = mu;
    rec.residual = residual_norm(st.w.values, st.combo);
    const WeightStore feasible = feasible_weights(st.w, st.combo);
    rec.loss = problem.loss_and_grad(feasible.values, all, grad_sink);
    if (test_eval) rec.test_error = test_eval(feasible);
    st.history.push_back(rec);

    if (rec.loss < best_loss) {
      best_loss = rec.loss;
      st.best_step = j;
      st.best_w = st.w;
      st.best_combo = st.combo;
    }

    // a long non-decreasing residual streak usually means the penalty is
    // growing too fast for the L-step budget; flag it, do not abort
    if (rec.residual >= prev_residual) {
      if (++stalled == 5)
        st.warnings.push_back("residual non-decreasing for 5 consecutive steps (step " +
                              std::to_string(j) + ", mu " + std::to_string(mu) + ")");
    } else {
      stalled = 0;
    }
    prev_residual = rec.residual;

    if (rec.residual < cfg.stop_rel_tol * norm2(st.w.values)) break;
  }

  if (st.history.empty() || !std::isfinite(best_loss)) {
    st.best_w = st.w;
    st.best_combo = st.combo;
  }
  return st;
}

}  // namespace addlc
