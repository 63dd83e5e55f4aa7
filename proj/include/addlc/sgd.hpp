#pragma once

// Minibatch SGD with Nesterov momentum and a geometric per-epoch learning
// rate schedule. Single-threaded and driven entirely by the seeded RNG in
// core.hpp, so a (seed, config, data) triple pins the trajectory bit for bit.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "addlc/core.hpp"

namespace addlc {

// Anything that exposes a batched loss/gradient can be trained: the
// supervised models, and the synthetic quadratic problems used in tests.
template <class P>
concept TrainableProblem = requires(const P& p, const Vec& w, std::span<const std::size_t> idx,
                                    Vec& grad) {
  { p.dim() } -> std::convertible_to<std::size_t>;
  { p.sample_count() } -> std::convertible_to<std::size_t>;
  { p.loss_and_grad(w, idx, grad) } -> std::convertible_to<double>;
};

struct SgdConfig {
  double lr = 0.01;          // eta_0
  double lr_decay = 1.0;     // eta at epoch m is lr * lr_decay^m
  double momentum = 0.9;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  std::uint64_t seed = 1;
  double divergence_limit = 1e10;  // batch loss above this aborts
};

namespace detail {
struct NoExtraTerm {
  double operator()(const Vec&, Vec&) const { return 0.0; }
};
}  // namespace detail

// Minimizes problem loss + extra(w). `extra(w, grad)` must add its own
// gradient into `grad` and return its loss contribution; the LC L-step
// injects the penalty term this way. Momentum uses the common
// gradient-plus-damped-buffer form of the Nesterov update,
//
//   v   <- momentum * v + g(w)
//   w   <- w - eta * (g(w) + momentum * v)
//
// which reduces to plain SGD at momentum = 0.
template <class Problem, class ExtraTerm = detail::NoExtraTerm>
  requires TrainableProblem<Problem>
double sgd_nesterov(const Problem& problem, Vec& w, const SgdConfig& cfg,
                    ExtraTerm&& extra = {}) {
  if (cfg.batch_size == 0) throw ConfigError("sgd: batch size must be >= 1");
  if (w.size() != problem.dim()) throw ConfigError("sgd: weight vector length mismatch");

  Rng rng(cfg.seed);
  const std::size_t n = problem.sample_count();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  Vec velocity(w.size(), 0.0);
  Vec grad(w.size());
  double last_loss = 0.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double eta = cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch));
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      const std::span<const std::size_t> batch(order.data() + start, len);

      double loss = problem.loss_and_grad(w, batch, grad);
      loss += extra(w, grad);
      if (!std::isfinite(loss) || loss > cfg.divergence_limit)
        throw NumericalError("sgd: loss diverged (" + std::to_string(loss) + ")");
      last_loss = loss;

      for (std::size_t i = 0; i < w.size(); ++i) {
        velocity[i] = cfg.momentum * velocity[i] + grad[i];
        w[i] -= eta * (grad[i] + cfg.momentum * velocity[i]);
      }
    }
  }
  return last_loss;
}

}  // namespace addlc
