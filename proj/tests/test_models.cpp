#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "addlc/addlc.hpp"
#include "oracles.hpp"

using namespace addlc;
using Catch::Approx;

namespace {

SchemeSpec quant_spec(std::size_t k, bool shared = true) {
  SchemeSpec s;
  s.kind = SchemeKind::quant_adaptive;
  s.codebook_size = k;
  s.shared_codebook = shared;
  return s;
}

SchemeSpec fixed_spec(Vec codebook) {
  SchemeSpec s;
  s.kind = SchemeKind::quant_fixed;
  s.fixed_codebook = std::move(codebook);
  return s;
}

SchemeSpec prune_spec(std::size_t kappa) {
  SchemeSpec s;
  s.kind = SchemeKind::prune;
  s.budget = kappa;
  return s;
}

SchemeSpec lowrank_spec(std::size_t r) {
  SchemeSpec s;
  s.kind = SchemeKind::low_rank;
  s.rank = r;
  return s;
}

ModelSpec logreg(std::size_t d, std::size_t k) {
  ModelSpec spec;
  spec.layers.push_back({d, k, Activation::softmax});
  spec.loss = LossKind::cross_entropy;
  return spec;
}

ModelSpec linreg(std::size_t d, std::size_t k) {
  ModelSpec spec;
  spec.layers.push_back({d, k, Activation::identity});
  spec.loss = LossKind::squared_error;
  return spec;
}

ModelSpec mlp(std::vector<std::size_t> dims, LossKind loss) {
  ModelSpec spec;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    const Activation act = last ? (loss == LossKind::cross_entropy ? Activation::softmax
                                                                   : Activation::identity)
                                : Activation::relu;
    spec.layers.push_back({dims[i], dims[i + 1], act});
  }
  spec.loss = loss;
  return spec;
}

// Random weights everywhere, biases included, so finite differences probe
// every coordinate of the store.
WeightStore random_store(const ModelSpec& spec, std::uint64_t seed, bool compress_biases = false) {
  WeightStore w = make_weight_store(spec, compress_biases);
  init_weights(w, spec, seed);
  Rng rng(seed ^ 0x5bd1e995);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    auto bias = w.segment(w.layers[2 * i + 1]);
    for (double& b : bias) b = 0.1 * rng.normal();
  }
  return w;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

double rel_err(const Vec& got, const Vec& want) {
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double d = got[i] - want[i];
    diff += d * d;
    ref += want[i] * want[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

// The simplest strongly convex objective: loss = 1/2 ||w||^2, grad = w.
struct BowlProblem {
  std::size_t d = 1;
  std::size_t dim() const { return d; }
  std::size_t sample_count() const { return 1; }
  double loss_and_grad(const Vec& w, std::span<const std::size_t>, Vec& grad) const {
    grad = w;
    return 0.5 * squared_norm(w);
  }
};

void check_gradient(const ModelSpec& spec, std::uint64_t seed, std::size_t examples) {
  const WeightStore w = random_store(spec, seed);
  Rng rng(seed + 17);
  std::vector<Vec> centers;
  const Dataset data =
      make_blobs(spec.output_dim(), spec.input_dim(), examples, rng, centers, 0.7);
  const auto batch = all_indices(examples);

  Vec analytic;
  loss_and_grad(spec, w, data, batch, analytic);
  const Vec numeric = oracle::finite_diff_grad(spec, w, data, batch);
  REQUIRE(rel_err(analytic, numeric) < 1e-5);
}

}  // namespace

// ------------------------------------------------------------- loss & grad ---

TEST_CASE("cross-entropy at zero weights on a balanced batch is ln k") {
  SECTION("two classes") {
    const ModelSpec spec = logreg(4, 2);
    const WeightStore w = make_weight_store(spec, false);  // all zeros
    Rng rng(3);
    std::vector<Vec> centers;
    const Dataset data = make_blobs(2, 4, 8, rng, centers);
    REQUIRE(loss_only(spec, w, data, all_indices(8)) == Approx(std::log(2.0)).margin(1e-15));
  }
  SECTION("five classes") {
    const ModelSpec spec = logreg(3, 5);
    const WeightStore w = make_weight_store(spec, false);
    Rng rng(4);
    std::vector<Vec> centers;
    const Dataset data = make_blobs(5, 3, 10, rng, centers);
    REQUIRE(loss_only(spec, w, data, all_indices(10)) == Approx(std::log(5.0)).margin(1e-14));
  }
}

TEST_CASE("squared-error gradient on one example is the residual outer product") {
  const ModelSpec spec = linreg(3, 2);
  const WeightStore w = random_store(spec, 21);
  Rng rng(22);
  std::vector<Vec> centers;
  const Dataset data = make_blobs(2, 3, 1, rng, centers);

  Vec grad;
  const double loss = loss_and_grad(spec, w, data, std::vector<std::size_t>{0}, grad);

  const auto x = data.input(0);
  const Vec out = forward(spec, w, x);
  Vec r(2);
  double half_sq = 0.0;
  for (std::size_t c = 0; c < 2; ++c) {
    r[c] = out[c] - data.targets(0, c);
    half_sq += 0.5 * r[c] * r[c];
  }
  REQUIRE(loss == Approx(half_sq).margin(1e-14));
  for (std::size_t row = 0; row < 2; ++row) {
    for (std::size_t col = 0; col < 3; ++col)
      REQUIRE(grad[row * 3 + col] == Approx(r[row] * x[col]).margin(1e-12));
    REQUIRE(grad[6 + row] == Approx(r[row]).margin(1e-12));  // bias block
  }
}

TEST_CASE("analytic gradients match central differences on every architecture") {
  SECTION("linear regression") { check_gradient(linreg(4, 2), 31, 5); }
  SECTION("logistic regression") { check_gradient(logreg(4, 3), 32, 5); }
  SECTION("two-layer relu classifier") {
    check_gradient(mlp({5, 4, 3}, LossKind::cross_entropy), 33, 5);
  }
  SECTION("three-layer relu classifier") {
    check_gradient(mlp({6, 5, 4, 3}, LossKind::cross_entropy), 34, 5);
  }
  SECTION("three-layer relu regressor") {
    check_gradient(mlp({6, 5, 4, 3}, LossKind::squared_error), 35, 5);
  }
  SECTION("with weight decay") {
    ModelSpec spec = mlp({4, 4, 2}, LossKind::cross_entropy);
    spec.weight_decay = 0.01;
    check_gradient(spec, 36, 5);
  }
}

TEST_CASE("empty batches are rejected") {
  const ModelSpec spec = logreg(2, 2);
  const WeightStore w = make_weight_store(spec, false);
  Rng rng(5);
  std::vector<Vec> centers;
  const Dataset data = make_blobs(2, 2, 4, rng, centers);
  Vec grad;
  REQUIRE_THROWS_AS(loss_and_grad(spec, w, data, std::vector<std::size_t>{}, grad), ConfigError);
}

// -------------------------------------------------------------- optimizer ---

TEST_CASE("the iterate shrinks monotonically on a quadratic bowl") {
  const BowlProblem bowl{5};
  SgdConfig cfg;
  cfg.momentum = 0.0;
  cfg.epochs = 1;
  cfg.batch_size = 1;

  for (double lr : {0.3, 0.9}) {
    cfg.lr = lr;
    Rng rng(41);
    Vec w(5);
    for (double& x : w) x = rng.normal();
    double prev = std::sqrt(squared_norm(w));
    for (int step = 0; step < 30; ++step) {
      sgd_nesterov(bowl, w, cfg);
      const double cur = std::sqrt(squared_norm(w));
      REQUIRE(cur < prev);
      prev = cur;
    }
  }

  SECTION("momentum converges too, after its oscillation settles") {
    cfg.lr = 0.3;
    cfg.momentum = 0.9;
    cfg.epochs = 60;
    Vec w(5, 1.0);
    sgd_nesterov(bowl, w, cfg);
    REQUIRE(std::sqrt(squared_norm(w)) < 0.05);
  }
}

TEST_CASE("momentum zero reduces to plain SGD, trajectory and all") {
  const ModelSpec spec = logreg(4, 3);
  const DataSplit split = make_blobs_split(3, 4, 60, 0, 91);
  WeightStore w = random_store(spec, 92);
  const SupervisedProblem problem(spec, w, split.train);

  SgdConfig cfg;
  cfg.lr = 0.05;
  cfg.lr_decay = 0.9;
  cfg.momentum = 0.0;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 77;

  Vec ours = w.values;
  sgd_nesterov(problem, ours, cfg);
  const Vec oracle_w =
      oracle::plain_sgd(problem, w.values, cfg.lr, cfg.lr_decay, cfg.epochs, cfg.batch_size, 77);

  REQUIRE(ours.size() == oracle_w.size());
  for (std::size_t i = 0; i < ours.size(); ++i) REQUIRE(ours[i] == oracle_w[i]);  // bit-exact
}

TEST_CASE("the learning rate decays geometrically per epoch") {
  // One parameter, one sample, momentum off: epoch m applies
  // w <- w - lr * decay^m * w. Replay the same arithmetic by hand.
  const BowlProblem bowl{1};
  SgdConfig cfg;
  cfg.lr = 0.1;
  cfg.lr_decay = 0.5;
  cfg.momentum = 0.0;
  cfg.epochs = 3;
  cfg.batch_size = 1;

  Vec w{1.0};
  sgd_nesterov(bowl, w, cfg);

  double x = 1.0;
  for (int m = 0; m < 3; ++m) {
    const double eta = cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(m));
    x -= eta * x;
  }
  REQUIRE(w[0] == x);                                // same arithmetic, bit for bit
  REQUIRE(x == Approx(0.9 * 0.95 * 0.975).margin(1e-15));  // 0.1, 0.05, 0.025
}

TEST_CASE("identical seeds give bit-identical trajectories") {
  const ModelSpec spec = logreg(3, 2);
  const DataSplit split = make_blobs_split(2, 3, 40, 0, 51);
  const WeightStore w = random_store(spec, 52);
  const SupervisedProblem problem(spec, w, split.train);

  SgdConfig cfg;
  cfg.lr = 0.1;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  cfg.seed = 5;

  Vec a = w.values, b = w.values;
  sgd_nesterov(problem, a, cfg);
  sgd_nesterov(problem, b, cfg);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);

  Vec c = w.values;
  cfg.seed = 6;
  sgd_nesterov(problem, c, cfg);
  bool any_difference = false;
  for (std::size_t i = 0; i < a.size(); ++i) any_difference |= (a[i] != c[i]);
  REQUIRE(any_difference);
}

TEST_CASE("optimizer misuse and divergence are rejected") {
  const BowlProblem bowl{3};
  SgdConfig cfg;

  SECTION("divergent step size aborts") {
    cfg.lr = 10.0;  // |1 - lr| > 1: the iterate grows 9x per step
    cfg.momentum = 0.0;
    cfg.epochs = 30;
    cfg.batch_size = 1;
    Vec w(3, 1e4);
    REQUIRE_THROWS_AS(sgd_nesterov(bowl, w, cfg), NumericalError);
  }
  SECTION("zero batch size") {
    cfg.batch_size = 0;
    Vec w(3, 1.0);
    REQUIRE_THROWS_AS(sgd_nesterov(bowl, w, cfg), ConfigError);
  }
  SECTION("weight length mismatch") {
    Vec w(2, 1.0);
    REQUIRE_THROWS_AS(sgd_nesterov(bowl, w, cfg), ConfigError);
  }
}

TEST_CASE("training separable blobs reaches near-zero error") {
  const ModelSpec spec = logreg(4, 3);
  const DataSplit split = make_blobs_split(3, 4, 120, 60, 11, 0.5);
  WeightStore w = random_store(spec, 12);
  const SupervisedProblem problem(spec, w, split.train);

  const double loss_before = full_loss(spec, w, split.train);

  SgdConfig cfg;
  cfg.lr = 0.1;
  cfg.lr_decay = 0.95;
  cfg.momentum = 0.9;
  cfg.epochs = 40;
  cfg.batch_size = 16;
  cfg.seed = 13;
  sgd_nesterov(problem, w.values, cfg);

  REQUIRE(full_loss(spec, w, split.train) < loss_before);
  REQUIRE(evaluate_error(spec, w, split.train) <= 0.05);
  REQUIRE(evaluate_error(spec, w, split.test) <= 0.15);
}

TEST_CASE("evaluation reports mean squared error for regression") {
  const ModelSpec spec = linreg(2, 1);
  WeightStore w = make_weight_store(spec, false);
  w.values = {1.0, 0.0, 0.0};  // y = x_0

  Dataset data;
  data.inputs = Matrix(2, 2);
  data.inputs(0, 0) = 1.0;
  data.inputs(1, 0) = 2.0;
  data.targets = Matrix(2, 1);
  data.targets(0, 0) = 1.0;  // exact
  data.targets(1, 0) = 0.0;  // off by 2
  REQUIRE(evaluate_error(spec, w, data) == Approx(2.0));  // (0 + 4) / 2
}

// ----------------------------------------------------- compressed forward ---

TEST_CASE("compressed forward equals dense forward when parts reconstruct exactly") {
  const ModelSpec spec = logreg(4, 3);
  const WeightStore w = random_store(spec, 61);
  const std::size_t total = make_combo(w, {}).compressed_count();
  AdditiveCombo combo = make_combo(w, {prune_spec(total)});
  cstep_backfit(w.values, combo);

  Rng rng(62);
  for (int trial = 0; trial < 10; ++trial) {
    Vec x(4);
    for (double& v : x) v = rng.normal();
    const Vec dense = forward(spec, w, x);
    const Vec packed = compressed_forward(spec, w, combo, x);
    REQUIRE(packed.size() == dense.size());
    for (std::size_t i = 0; i < dense.size(); ++i)
      REQUIRE(packed[i] == Approx(dense[i]).margin(1e-12));
  }
}

TEST_CASE("a two-entry codebook accumulates inputs per codebook entry") {
  ModelSpec spec = linreg(3, 2);
  WeightStore w = make_weight_store(spec, false);
  // weight rows: [1, -1, 1] and [-1, -1, 1]; biases zero
  w.values = {1.0, -1.0, 1.0, -1.0, -1.0, 1.0, 0.0, 0.0};

  AdditiveCombo combo = make_combo(w, {fixed_spec({-1.0, 1.0})});
  cstep_backfit(w.values, combo);

  const Vec x{0.3, -1.7, 2.2};
  OpCounter ops;
  const Vec y = compressed_forward(spec, w, combo, x, &ops);

  // c_1 * (sum of x over -1 weights) + c_2 * (sum over +1 weights)
  REQUIRE(y[0] == Approx(-1.0 * x[1] + 1.0 * (x[0] + x[2])).margin(1e-15));
  REQUIRE(y[1] == Approx(-1.0 * (x[0] + x[1]) + 1.0 * x[2]).margin(1e-15));

  const Vec dense = forward(spec, w, x);
  for (std::size_t i = 0; i < 2; ++i) REQUIRE(y[i] == Approx(dense[i]).margin(1e-12));

  REQUIRE(ops.adds == 6);   // one add per weight
  REQUIRE(ops.mults == 4);  // K per neuron
}

TEST_CASE("rank-one plus a single spike, by hand") {
  const ModelSpec spec = linreg(2, 2);
  const WeightStore w = make_weight_store(spec, false);

  AdditiveCombo combo = make_combo(w, {lowrank_spec(1), prune_spec(1)});
  REQUIRE(combo.segments.size() == 1);  // weights only, biases stay dense

  // W1 = [1,2]^T [3,4] = [[3,4],[6,8]] plus a correction of +1 at (0,0)
  PartState& lr = combo.parts[0];
  lr.factors.resize(1);
  lr.factors[0].u = Matrix(2, 1);
  lr.factors[0].u(0, 0) = 1.0;
  lr.factors[0].u(1, 0) = 2.0;
  lr.factors[0].v = Matrix(2, 1);
  lr.factors[0].v(0, 0) = 3.0;
  lr.factors[0].v(1, 0) = 4.0;
  lr.factors[0].rank = 1;
  lr.initialized = true;

  PartState& sp = combo.parts[1];
  sp.sparse.entries = {{0, 1.0}};
  sp.sparse.budget = 1;
  sp.initialized = true;

  const Vec sum = combo.decompress_sum();
  REQUIRE(sum == Vec{4.0, 4.0, 6.0, 8.0, 0.0, 0.0});

  OpCounter ops;
  const Vec y = compressed_forward(spec, w, combo, Vec{1.0, 1.0}, &ops);
  REQUIRE(y[0] == Approx(8.0).margin(1e-12));
  REQUIRE(y[1] == Approx(14.0).margin(1e-12));
  REQUIRE(ops.mults == 5);  // rank * (out + in) + one spike
  REQUIRE(ops.adds == 4);   // rank * (out + in) + (1 - 1)
}

TEST_CASE("compressed forward matches the dense reconstruction for every combination") {
  Rng rng(71);
  for (int trial = 0; trial < 40; ++trial) {
    // architecture
    const std::size_t depth = 1 + rng.below(2);
    std::vector<std::size_t> dims;
    for (std::size_t i = 0; i <= depth; ++i) dims.push_back(2 + rng.below(5));
    const LossKind loss = rng.below(2) == 0 ? LossKind::cross_entropy : LossKind::squared_error;
    const ModelSpec spec = mlp(dims, loss);
    const bool with_biases = rng.below(2) == 0;
    WeightStore w = make_weight_store(spec, with_biases);
    for (double& v : w.values) v = 0.5 * rng.normal();

    // parts
    std::vector<SchemeSpec> menu = {quant_spec(2, true), quant_spec(3, false),
                                    fixed_spec({-0.5, 0.0, 0.5}), prune_spec(0),
                                    lowrank_spec(1)};
    const std::size_t n_parts = 1 + rng.below(3);
    std::vector<SchemeSpec> specs;
    for (std::size_t i = 0; i < n_parts; ++i) specs.push_back(menu[rng.below(menu.size())]);

    AdditiveCombo probe = make_combo(w, {});
    const std::size_t total = probe.compressed_count();
    std::size_t smallest_segment = total;
    for (const SegmentRef& s : probe.segments)
      smallest_segment = std::min(smallest_segment, s.count());
    for (SchemeSpec& s : specs) {
      if (s.kind == SchemeKind::prune) s.budget = std::min<std::size_t>(3, total);
      if (s.kind == SchemeKind::quant_adaptive)
        s.codebook_size =
            std::min(s.codebook_size, s.shared_codebook ? total : smallest_segment);
    }

    AdditiveCombo combo = make_combo(w, specs);
    cstep_backfit(w.values, combo);

    // dense reconstruction: compressed coordinates from the parts,
    // everything else from the store
    WeightStore dense = w;
    const Vec sum = combo.decompress_sum();
    for (const SegmentRef& s : combo.segments)
      for (std::size_t i = 0; i < s.count(); ++i) dense.values[s.offset + i] = sum[s.offset + i];

    for (int probe_i = 0; probe_i < 3; ++probe_i) {
      Vec x(spec.input_dim());
      for (double& v : x) v = rng.normal();
      const Vec want = forward(spec, dense, x);
      const Vec got = compressed_forward(spec, w, combo, x);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < want.size(); ++i)
        REQUIRE(got[i] == Approx(want[i]).margin(1e-10));
    }
  }
}

TEST_CASE("compressed forward rejects bad inputs") {
  const ModelSpec spec = logreg(3, 2);
  const WeightStore w = random_store(spec, 81);

  SECTION("uninitialized parts") {
    AdditiveCombo combo = make_combo(w, {prune_spec(1)});  // no C-step yet
    REQUIRE_THROWS_AS(compressed_forward(spec, w, combo, Vec{1.0, 2.0, 3.0}), ConfigError);
  }
  SECTION("input length mismatch") {
    AdditiveCombo combo = make_combo(w, {prune_spec(1)});
    cstep_backfit(w.values, combo);
    REQUIRE_THROWS_AS(compressed_forward(spec, w, combo, Vec{1.0, 2.0}), ConfigError);
    REQUIRE_THROWS_AS(forward(spec, w, Vec{1.0, 2.0, 3.0, 4.0}), ConfigError);
  }
}
