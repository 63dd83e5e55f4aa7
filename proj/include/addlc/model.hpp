#pragma once

// Desk-scale trainable models: chains of dense layers with identity/relu
// activations and a softmax output head, trained with averaged cross-entropy
// or squared error plus optional weight decay on the weight matrices.
//
// Also home of the accumulating compressed forward pass: W x evaluated as the
// sum of per-part kernels (codebook accumulators for quantization, nonzero
// iteration for sparse corrections, two thin matvecs for low-rank factors)
// without ever materializing the dense matrix. An optional OpCounter tallies
// additions/multiplications at the kernel loop sites; the counting convention
// is pinned in the comment above compressed_forward and matches the formulas
// in metrics.hpp, so the two can be cross-checked exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "addlc/combo.hpp"
#include "addlc/core.hpp"
#include "addlc/weight_store.hpp"

namespace addlc {

// ------------------------------------------------------------------ specs ---

enum class Activation : std::uint8_t { identity = 0, relu = 1, softmax = 2 };
enum class LossKind : std::uint8_t { cross_entropy = 0, squared_error = 1 };

struct DenseLayerSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation act = Activation::identity;
};

struct ModelSpec {
  std::vector<DenseLayerSpec> layers;
  LossKind loss = LossKind::cross_entropy;
  double weight_decay = 0.0;

  std::size_t input_dim() const { return layers.front().in; }
  std::size_t output_dim() const { return layers.back().out; }
};

inline void validate_model(const ModelSpec& spec) {
  if (spec.layers.empty()) throw ConfigError("model: no layers");
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const DenseLayerSpec& l = spec.layers[i];
    if (l.in == 0 || l.out == 0) throw ConfigError("model: zero-sized layer");
    if (i > 0 && l.in != spec.layers[i - 1].out)
      throw ConfigError("model: layer dimensions do not chain");
    if (l.act == Activation::softmax && i + 1 != spec.layers.size())
      throw ConfigError("model: softmax is only valid on the output layer");
  }
  if (spec.loss == LossKind::cross_entropy && spec.layers.back().act != Activation::softmax)
    throw ConfigError("model: cross-entropy requires a softmax output layer");
  if (spec.loss == LossKind::squared_error && spec.layers.back().act == Activation::softmax)
    throw ConfigError("model: squared error does not take a softmax output");
}

// Layer map: for dense layer i, store layer 2i is the weight matrix
// (rows = out, cols = in, row-major) and store layer 2i+1 its bias.
inline WeightStore make_weight_store(const ModelSpec& spec, bool compress_biases) {
  validate_model(spec);
  WeightStore w;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const DenseLayerSpec& l = spec.layers[i];
    const std::string base = "layer" + std::to_string(i);
    w.layers.push_back({base + ".weight", offset, l.out, l.in, false, true});
    offset += l.out * l.in;
    w.layers.push_back({base + ".bias", offset, l.out, 1, true, compress_biases});
    offset += l.out;
  }
  w.values.assign(offset, 0.0);
  validate_store(w);
  return w;
}

// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases. The draw
// order is fixed (layer by layer, row-major), so a seed pins every value.
inline void init_weights(WeightStore& w, const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const DenseLayerSpec& l = spec.layers[i];
    const double bound = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    auto weights = w.segment(w.layers[2 * i]);
    for (double& v : weights) v = rng.uniform(-bound, bound);
    auto bias = w.segment(w.layers[2 * i + 1]);
    std::fill(bias.begin(), bias.end(), 0.0);
  }
}

// ---------------------------------------------------------------- dataset ---

struct Dataset {
  Matrix inputs;            // N x d
  std::vector<int> labels;  // classification targets (empty for regression)
  Matrix targets;           // regression targets, N x k (empty for classification)

  std::size_t count() const { return inputs.rows; }
  std::span<const double> input(std::size_t i) const {
    return {inputs.data.data() + i * inputs.cols, inputs.cols};
  }
};

struct DataSplit {
  Dataset train;
  Dataset test;
};

// ---------------------------------------------------------------- forward ---

namespace detail {

inline void affine(std::span<const double> weights, std::span<const double> bias,
                   std::size_t rows, std::size_t cols, std::span<const double> x,
                   std::span<double> y) {
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = bias[i];
    const double* wrow = weights.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) acc += wrow[j] * x[j];
    y[i] = acc;
  }
}

inline void apply_activation(Activation act, std::span<double> y) {
  if (act == Activation::relu)
    for (double& v : y) v = v > 0.0 ? v : 0.0;
  // identity and softmax leave the pre-activation in place; softmax is folded
  // into the loss / prediction (argmax is invariant under it).
}

inline double log_sum_exp(std::span<const double> z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace detail

// Output of the network (logits when the output layer is softmax).
inline Vec forward(const ModelSpec& spec, const WeightStore& w, std::span<const double> x) {
  if (x.size() != spec.input_dim())
    throw ConfigError("forward: input length " + std::to_string(x.size()) +
                      " does not match the model input " + std::to_string(spec.input_dim()));
  Vec a(x.begin(), x.end());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const DenseLayerSpec& l = spec.layers[i];
    Vec y(l.out);
    detail::affine(w.segment(w.layers[2 * i]), w.segment(w.layers[2 * i + 1]), l.out, l.in, a,
                   y);
    detail::apply_activation(l.act, y);
    a = std::move(y);
  }
  return a;
}

// --------------------------------------------------------------- loss/grad ---

// Average loss over the batch plus the weight-decay term; accumulates the
// gradient of the same quantity into `grad` (resized and zeroed here).
// Backpropagation caches per-layer activations example by example.
inline double loss_and_grad(const ModelSpec& spec, const WeightStore& w, const Dataset& data,
                            std::span<const std::size_t> batch, Vec& grad) {
  grad.assign(w.size(), 0.0);
  if (batch.empty()) throw ConfigError("loss: empty batch");
  const std::size_t depth = spec.layers.size();
  double total_loss = 0.0;

  std::vector<Vec> act(depth + 1);  // act[0] = input, act[i] = output of layer i-1
  std::vector<Vec> pre(depth);      // pre-activation of layer i

  for (std::size_t bi : batch) {
    const auto x = data.input(bi);
    act[0].assign(x.begin(), x.end());
    for (std::size_t i = 0; i < depth; ++i) {
      const DenseLayerSpec& l = spec.layers[i];
      pre[i].assign(l.out, 0.0);
      detail::affine(w.segment(w.layers[2 * i]), w.segment(w.layers[2 * i + 1]), l.out, l.in,
                     act[i], pre[i]);
      act[i + 1] = pre[i];
      detail::apply_activation(l.act, act[i + 1]);
    }

    // delta = dLoss/d(pre-activation of the output layer)
    const Vec& out = act[depth];
    Vec delta(out.size());
    if (spec.loss == LossKind::cross_entropy) {
      const int label = data.labels[bi];
      const double lse = detail::log_sum_exp(pre[depth - 1]);
      total_loss += lse - pre[depth - 1][static_cast<std::size_t>(label)];
      for (std::size_t c = 0; c < out.size(); ++c)
        delta[c] = std::exp(pre[depth - 1][c] - lse);
      delta[static_cast<std::size_t>(label)] -= 1.0;
    } else {
      const double* target = data.targets.data.data() + bi * data.targets.cols;
      double sq = 0.0;
      for (std::size_t c = 0; c < out.size(); ++c) {
        const double d = out[c] - target[c];
        sq += d * d;
        delta[c] = d;
      }
      total_loss += 0.5 * sq;
      if (spec.layers.back().act == Activation::relu)
        for (std::size_t c = 0; c < out.size(); ++c)
          if (pre[depth - 1][c] <= 0.0) delta[c] = 0.0;
    }

    for (std::size_t i = depth; i-- > 0;) {
      const DenseLayerSpec& l = spec.layers[i];
      double* gw = grad.data() + w.layers[2 * i].offset;
      double* gb = grad.data() + w.layers[2 * i + 1].offset;
      for (std::size_t r = 0; r < l.out; ++r) {
        gb[r] += delta[r];
        double* grow = gw + r * l.in;
        const double d = delta[r];
        for (std::size_t c = 0; c < l.in; ++c) grow[c] += d * act[i][c];
      }
      if (i == 0) break;
      const auto weights = w.segment(w.layers[2 * i]);
      Vec prev_delta(l.in, 0.0);
      for (std::size_t r = 0; r < l.out; ++r) {
        const double d = delta[r];
        for (std::size_t c = 0; c < l.in; ++c) prev_delta[c] += weights[r * l.in + c] * d;
      }
      if (spec.layers[i - 1].act == Activation::relu)
        for (std::size_t c = 0; c < l.in; ++c)
          if (pre[i - 1][c] <= 0.0) prev_delta[c] = 0.0;
      delta = std::move(prev_delta);
    }
  }

  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (double& g : grad) g *= inv_batch;
  double loss = total_loss * inv_batch;

  if (spec.weight_decay != 0.0) {  // decay applies to weight matrices only
    double sq = 0.0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      const LayerInfo& l = w.layers[2 * i];
      const auto weights = w.segment(l);
      sq += squared_norm(weights);
      double* g = grad.data() + l.offset;
      for (std::size_t j = 0; j < l.count(); ++j) g[j] += spec.weight_decay * weights[j];
    }
    loss += 0.5 * spec.weight_decay * sq;
  }
  return loss;
}

inline double loss_only(const ModelSpec& spec, const WeightStore& w, const Dataset& data,
                        std::span<const std::size_t> batch) {
  Vec grad;  // desk scale: reuse the gradient path, discard the gradient
  return loss_and_grad(spec, w, data, batch, grad);
}

inline double full_loss(const ModelSpec& spec, const WeightStore& w, const Dataset& data) {
  std::vector<std::size_t> all(data.count());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return loss_only(spec, w, data, all);
}

// Classification: misclassification rate in [0, 1]. Regression: mean squared
// error per example.
inline double evaluate_error(const ModelSpec& spec, const WeightStore& w, const Dataset& data) {
  double bad = 0.0;
  for (std::size_t i = 0; i < data.count(); ++i) {
    const Vec out = forward(spec, w, data.input(i));
    if (spec.loss == LossKind::cross_entropy) {
      const std::size_t pred =
          static_cast<std::size_t>(std::max_element(out.begin(), out.end()) - out.begin());
      if (pred != static_cast<std::size_t>(data.labels[i])) bad += 1.0;
    } else {
      const double* target = data.targets.data.data() + i * data.targets.cols;
      double sq = 0.0;
      for (std::size_t c = 0; c < out.size(); ++c) {
        const double d = out[c] - target[c];
        sq += d * d;
      }
      bad += sq;
    }
  }
  return bad / static_cast<double>(data.count());
}

// Binds a model + dataset to the flat-vector interface the optimizer and the
// LC loop train against. The layout store supplies the layer map; values are
// swapped in per call.
class SupervisedProblem {
 public:
  SupervisedProblem(const ModelSpec& spec, const WeightStore& layout, const Dataset& data)
      : spec_(&spec), data_(&data), scratch_(layout) {}

  std::size_t dim() const { return scratch_.size(); }
  std::size_t sample_count() const { return data_->count(); }
  double loss_and_grad(const Vec& w, std::span<const std::size_t> batch, Vec& grad) const {
    scratch_.values = w;
    return addlc::loss_and_grad(*spec_, scratch_, *data_, batch, grad);
  }

 private:
  const ModelSpec* spec_;
  const Dataset* data_;
  mutable WeightStore scratch_;
};

// ----------------------------------------------- accumulating compressed ---

struct OpCounter {
  std::uint64_t adds = 0;
  std::uint64_t mults = 0;
};

// Forward pass evaluated directly on the compressed parts, layer by layer:
//
//   quantized weights  K per-neuron accumulators, then one multiply per
//                      codebook entry: y_i = sum_k c_k * (sum_{j in k} x_j)
//   sparse correction  iterate the stored nonzeros
//   low-rank factors   y += U (V^T x), two thin matvecs
//
// Counting convention (matches the accounting formulas in metrics.hpp):
// every multiply-accumulate in a dense or thin matvec counts one add and one
// mult (the per-neuron bias add stands in for the chain's first assignment);
// a quantized layer counts one add per weight and K mults per neuron, with
// the K-1 combine adds treated as per-neuron register overhead; a sparse part
// with p nonzeros in a layer counts p mults and p-1 adds; activations and
// codebook lookups are free.
inline Vec compressed_forward(const ModelSpec& spec, const WeightStore& w,
                              const AdditiveCombo& combo, std::span<const double> x,
                              OpCounter* ops = nullptr) {
  if (x.size() != spec.input_dim())
    throw ConfigError("compressed forward: input length " + std::to_string(x.size()) +
                      " does not match the model input " + std::to_string(spec.input_dim()));
  // store-layer index -> combo segment index (or npos)
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<std::size_t> seg_of(w.layers.size(), npos);
  for (std::size_t si = 0; si < combo.segments.size(); ++si)
    seg_of[combo.segments[si].layer] = si;

  // per-quant-part, per-segment: start offset of the segment inside its
  // codebook group's assignment array
  struct QuantLookup {
    const Quantization* q = nullptr;
    std::size_t start = 0;
  };
  std::vector<std::vector<QuantLookup>> quant_at(combo.parts.size());
  for (std::size_t pi = 0; pi < combo.parts.size(); ++pi) {
    const PartState& part = combo.parts[pi];
    if (part.spec.kind != SchemeKind::quant_adaptive && part.spec.kind != SchemeKind::quant_fixed)
      continue;
    if (!part.initialized) throw ConfigError("compressed forward: uninitialized part");
    quant_at[pi].resize(combo.segments.size());
    const auto groups = combo.quant_groups(part.spec.shared_codebook);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      std::size_t pos = 0;
      for (std::size_t si : groups[g]) {
        quant_at[pi][si] = {&part.quant[g], pos};
        pos += combo.segments[si].count();
      }
    }
  }

  Vec a(x.begin(), x.end());
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const DenseLayerSpec& l = spec.layers[li];
    Vec y(l.out, 0.0);
    const std::size_t wseg = seg_of[2 * li];
    const std::size_t bseg = seg_of[2 * li + 1];

    if (wseg == npos || combo.parts.empty()) {  // dense reference path
      const auto weights = w.segment(w.layers[2 * li]);
      for (std::size_t r = 0; r < l.out; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < l.in; ++c) acc += weights[r * l.in + c] * a[c];
        y[r] = acc;
      }
      if (ops) {
        ops->mults += l.out * l.in;
        ops->adds += l.out * l.in;
      }
    } else {
      for (std::size_t pi = 0; pi < combo.parts.size(); ++pi) {
        const PartState& part = combo.parts[pi];
        if (!part.initialized) throw ConfigError("compressed forward: uninitialized part");
        switch (part.spec.kind) {
          case SchemeKind::quant_adaptive:
          case SchemeKind::quant_fixed: {
            const QuantLookup& look = quant_at[pi][wseg];
            const Quantization& q = *look.q;
            const std::size_t k = q.codebook.size();
            Vec acc(k);
            for (std::size_t r = 0; r < l.out; ++r) {
              std::fill(acc.begin(), acc.end(), 0.0);
              const std::size_t base = look.start + r * l.in;
              for (std::size_t c = 0; c < l.in; ++c) acc[q.assignments[base + c]] += a[c];
              double sum = 0.0;
              for (std::size_t e = 0; e < k; ++e) sum += q.codebook[e] * acc[e];
              y[r] += sum;
            }
            if (ops) {
              ops->adds += l.out * l.in;
              ops->mults += k * l.out;
            }
            break;
          }
          case SchemeKind::prune: {
            const SegmentRef& s = combo.segments[wseg];
            std::uint64_t p = 0;
            for (const auto& [gi, v] : part.sparse.entries) {
              if (gi < s.offset || gi >= s.offset + s.count()) continue;
              const std::size_t local = gi - s.offset;
              y[local / l.in] += v * a[local % l.in];
              ++p;
            }
            // bias-coordinate corrections of this layer count toward the same
            // per-layer nonzero total
            if (bseg != npos) {
              const SegmentRef& b = combo.segments[bseg];
              for (const auto& [gi, v] : part.sparse.entries)
                if (gi >= b.offset && gi < b.offset + b.count()) ++p;
            }
            if (ops && p > 0) {
              ops->mults += p;
              ops->adds += p - 1;
            }
            break;
          }
          case SchemeKind::low_rank: {
            const LowRankFactors& f = part.factors[wseg];
            if (f.rank == 0) break;
            Vec t(f.rank, 0.0);
            for (std::size_t k2 = 0; k2 < f.rank; ++k2)
              for (std::size_t c = 0; c < l.in; ++c) t[k2] += f.v(c, k2) * a[c];
            for (std::size_t r = 0; r < l.out; ++r) {
              double acc = 0.0;
              for (std::size_t k2 = 0; k2 < f.rank; ++k2) acc += f.u(r, k2) * t[k2];
              y[r] += acc;
            }
            if (ops) {
              ops->mults += f.rank * (l.out + l.in);
              ops->adds += f.rank * (l.out + l.in);
            }
            break;
          }
        }
      }
    }

    // bias: from the combo when compressed, from the store otherwise
    if (bseg == npos || combo.parts.empty()) {
      const auto bias = w.segment(w.layers[2 * li + 1]);
      for (std::size_t r = 0; r < l.out; ++r) y[r] += bias[r];
    } else {
      const SegmentRef& b = combo.segments[bseg];
      for (std::size_t pi = 0; pi < combo.parts.size(); ++pi) {
        const PartState& part = combo.parts[pi];
        switch (part.spec.kind) {
          case SchemeKind::quant_adaptive:
          case SchemeKind::quant_fixed: {
            const QuantLookup& look = quant_at[pi][bseg];
            for (std::size_t r = 0; r < l.out; ++r)
              y[r] += look.q->codebook[look.q->assignments[look.start + r]];
            break;
          }
          case SchemeKind::prune:  // ops already counted with the weight segment
            for (const auto& [gi, v] : part.sparse.entries)
              if (gi >= b.offset && gi < b.offset + b.count()) y[gi - b.offset] += v;
            break;
          case SchemeKind::low_rank: {
            const LowRankFactors& f = part.factors[bseg];
            if (f.rank == 0) break;
            // bias as an (out x 1) matrix against the constant input 1
            Vec t(f.rank);
            for (std::size_t k2 = 0; k2 < f.rank; ++k2) t[k2] = f.v(0, k2);
            for (std::size_t r = 0; r < l.out; ++r) {
              double acc = 0.0;
              for (std::size_t k2 = 0; k2 < f.rank; ++k2) acc += f.u(r, k2) * t[k2];
              y[r] += acc;
            }
            if (ops) {
              ops->mults += f.rank * (l.out + 1);
              ops->adds += f.rank * (l.out + 1);
            }
            break;
          }
        }
      }
    }

    detail::apply_activation(l.act, std::span<double>(y));
    a = std::move(y);
  }
  return a;
}

}  // namespace addlc
