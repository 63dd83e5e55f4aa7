#pragma once

// Additive combinations of compressed parts and the C-step that fits them.
//
// A combo is an ordered list of parts; its decompression is the SUM of the
// parts' decompressions over the compressed coordinates of the weight vector
// (uncompressed segments, e.g. excluded biases, are simply outside its
// domain). The C-step solves
//
//     min_theta || target - sum_i decompress(theta_i) ||^2
//
// by backfitting: cyclically re-project each part onto the residual left by
// all the others. Every half-step is an exact (or monotone local) projection,
// so the residual never increases; parts are warm-started from their previous
// state between C-steps.
//
// For the fixed-codebook + pruning pair the problem has a closed-form global
// optimum (quantize each weight to its nearest entry, then correct the kappa
// largest residuals exactly); cstep_exact_qfixed_prune implements it and
// doubles as the reference the backfit solver is tested against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "addlc/core.hpp"
#include "addlc/schemes.hpp"
#include "addlc/weight_store.hpp"

namespace addlc {

// ------------------------------------------------------------ combo types ---

enum class SchemeKind : std::uint8_t {
  quant_adaptive = 0,
  quant_fixed = 1,
  prune = 2,
  low_rank = 3,
};

inline const char* scheme_name(SchemeKind k) {
  switch (k) {
    case SchemeKind::quant_adaptive: return "quant";
    case SchemeKind::quant_fixed: return "quant-fixed";
    case SchemeKind::prune: return "prune";
    case SchemeKind::low_rank: return "lowrank";
  }
  return "?";
}

struct SchemeSpec {
  SchemeKind kind = SchemeKind::quant_adaptive;
  std::size_t codebook_size = 2;       // K, adaptive quantization
  std::vector<double> fixed_codebook;  // fixed quantization entries
  std::size_t rank = 1;                // r per layer; 0 is a legal zero part
  std::size_t budget = 0;              // kappa, global across compressed coords
  bool shared_codebook = false;        // one codebook across all segments
};

// A compressed slice of the weight store (weight matrix, or bias vector when
// biases are in scope).
struct SegmentRef {
  std::size_t layer = 0;  // index into WeightStore::layers
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 1;
  bool is_bias = false;

  std::size_t count() const { return rows * cols; }
};

struct PartState {
  SchemeSpec spec;
  bool initialized = false;                // false decompresses to zero
  std::vector<Quantization> quant;         // per codebook group
  std::vector<LowRankFactors> factors;     // per segment
  SparseCorrection sparse;                 // indices are global (flat vector)
};

struct AdditiveCombo {
  std::size_t weight_dim = 0;
  std::vector<SegmentRef> segments;
  std::vector<PartState> parts;

  std::size_t compressed_count() const {
    std::size_t n = 0;
    for (const SegmentRef& s : segments) n += s.count();
    return n;
  }

  // Codebook groups of a quantization part: one per segment, or a single
  // group spanning every segment when the codebook is shared.
  std::vector<std::vector<std::size_t>> quant_groups(bool shared) const {
    std::vector<std::vector<std::size_t>> g;
    if (shared) {
      g.emplace_back(segments.size());
      std::iota(g[0].begin(), g[0].end(), std::size_t{0});
    } else {
      for (std::size_t i = 0; i < segments.size(); ++i) g.push_back({i});
    }
    return g;
  }

  Vec decompress_sum() const;
};

namespace detail {

inline Vec gather_segments(const AdditiveCombo& combo, std::span<const double> full,
                           std::span<const std::size_t> segment_ids) {
  Vec out;
  for (std::size_t si : segment_ids) {
    const SegmentRef& s = combo.segments[si];
    out.insert(out.end(), full.begin() + s.offset, full.begin() + s.offset + s.count());
  }
  return out;
}

inline void add_part(const AdditiveCombo& combo, const PartState& part, Vec& out) {
  if (!part.initialized) return;
  switch (part.spec.kind) {
    case SchemeKind::quant_adaptive:
    case SchemeKind::quant_fixed: {
      const auto groups = combo.quant_groups(part.spec.shared_codebook);
      for (std::size_t g = 0; g < groups.size(); ++g) {
        const Quantization& q = part.quant[g];
        std::size_t pos = 0;
        for (std::size_t si : groups[g]) {
          const SegmentRef& s = combo.segments[si];
          for (std::size_t i = 0; i < s.count(); ++i, ++pos)
            out[s.offset + i] += q.codebook[q.assignments[pos]];
        }
      }
      break;
    }
    case SchemeKind::prune:
      for (const auto& [i, v] : part.sparse.entries) out[i] += v;
      break;
    case SchemeKind::low_rank:
      for (std::size_t si = 0; si < combo.segments.size(); ++si) {
        const SegmentRef& s = combo.segments[si];
        const LowRankFactors& f = part.factors[si];
        if (f.rank == 0) continue;
        for (std::size_t i = 0; i < s.rows; ++i)
          for (std::size_t j = 0; j < s.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < f.rank; ++k) acc += f.u(i, k) * f.v(j, k);
            out[s.offset + i * s.cols + j] += acc;
          }
      }
      break;
  }
}

// Adaptive quantization inside the C-step: Lloyd from the part's previous
// codebook (guarantees the half-step cannot regress) and from the fresh
// quantile seed, keeping whichever lands lower. Ties keep the warm result.
inline Quantization project_quant_adaptive_warm(std::span<const double> values, std::size_t k,
                                                const Quantization* prev) {
  Quantization fresh = quant_adaptive_project(values, k);
  if (prev == nullptr || prev->codebook.size() != k) return fresh;
  LloydResult warm = lloyd_1d(values, prev->codebook);
  if (quant_error(values, fresh) < warm.squared_error) return fresh;
  Quantization out;
  out.adaptive = true;
  out.codebook = std::move(warm.codebook);
  out.assignments = std::move(warm.assignments);
  return out;
}

// Re-project one part onto `residual` (full-length; only compressed
// coordinates are read).
inline void project_part(const AdditiveCombo& combo, PartState& part,
                         std::span<const double> residual) {
  switch (part.spec.kind) {
    case SchemeKind::quant_adaptive: {
      const auto groups = combo.quant_groups(part.spec.shared_codebook);
      std::vector<Quantization> next(groups.size());
      for (std::size_t g = 0; g < groups.size(); ++g) {
        const Vec values = gather_segments(combo, residual, groups[g]);
        const Quantization* prev = part.initialized ? &part.quant[g] : nullptr;
        next[g] = project_quant_adaptive_warm(values, part.spec.codebook_size, prev);
      }
      part.quant = std::move(next);
      break;
    }
    case SchemeKind::quant_fixed: {
      const auto groups = combo.quant_groups(part.spec.shared_codebook);
      std::vector<Quantization> next(groups.size());
      for (std::size_t g = 0; g < groups.size(); ++g) {
        const Vec values = gather_segments(combo, residual, groups[g]);
        next[g] = quant_fixed_project(values, part.spec.fixed_codebook);
      }
      part.quant = std::move(next);
      break;
    }
    case SchemeKind::prune: {
      Vec values;
      std::vector<std::size_t> global;  // gather position -> flat index
      for (const SegmentRef& s : combo.segments)
        for (std::size_t i = 0; i < s.count(); ++i) {
          values.push_back(residual[s.offset + i]);
          global.push_back(s.offset + i);
        }
      SparseCorrection local = prune_project(values, part.spec.budget);
      part.sparse.budget = local.budget;
      part.sparse.entries.clear();
      for (const auto& [i, v] : local.entries) part.sparse.entries.emplace_back(global[i], v);
      break;
    }
    case SchemeKind::low_rank: {
      std::vector<LowRankFactors> next(combo.segments.size());
      for (std::size_t si = 0; si < combo.segments.size(); ++si) {
        const SegmentRef& s = combo.segments[si];
        const std::size_t r = std::min(part.spec.rank, std::min(s.rows, s.cols));
        if (r == 0) continue;  // zero part
        Matrix m(s.rows, s.cols);
        std::copy_n(residual.begin() + s.offset, s.count(), m.data.begin());
        next[si] = lowrank_project(m, r);
      }
      part.factors = std::move(next);
      break;
    }
  }
  part.initialized = true;
}

}  // namespace detail

inline Vec AdditiveCombo::decompress_sum() const {
  Vec out(weight_dim, 0.0);
  for (const PartState& p : parts) detail::add_part(*this, p, out);
  return out;
}

// ------------------------------------------------------------ construction --

inline AdditiveCombo make_combo(const WeightStore& w, std::vector<SchemeSpec> specs) {
  AdditiveCombo combo;
  combo.weight_dim = w.size();
  for (std::size_t li = 0; li < w.layers.size(); ++li) {
    const LayerInfo& l = w.layers[li];
    if (!l.compress) continue;
    combo.segments.push_back({li, l.offset, l.rows, l.cols, l.is_bias});
  }
  if (combo.segments.empty() && !specs.empty())
    throw ConfigError("combo: no compressed segments in the weight store");

  const std::size_t total = combo.compressed_count();
  for (SchemeSpec& spec : specs) {
    switch (spec.kind) {
      case SchemeKind::quant_adaptive:
        if (spec.codebook_size == 0) throw ConfigError("combo: codebook size must be >= 1");
        for (const auto& group : combo.quant_groups(spec.shared_codebook)) {
          std::size_t n = 0;
          for (std::size_t si : group) n += combo.segments[si].count();
          if (n < spec.codebook_size)
            throw ConfigError("combo: codebook size exceeds group dimension");
        }
        break;
      case SchemeKind::quant_fixed:
        if (spec.fixed_codebook.empty()) throw ConfigError("combo: empty fixed codebook");
        break;
      case SchemeKind::prune:
        if (spec.budget > total)
          throw ConfigError("combo: budget exceeds dimension (" + std::to_string(spec.budget) +
                            " > " + std::to_string(total) + ")");
        break;
      case SchemeKind::low_rank:
        break;  // rank is clamped per segment; 0 is a legal zero part
    }
    PartState part;
    part.spec = std::move(spec);
    combo.parts.push_back(std::move(part));
  }
  return combo;
}

// ---------------------------------------------------------------- residual --

// || (w - decompress_sum)|_compressed ||_2
inline double residual_norm(std::span<const double> w, const AdditiveCombo& combo) {
  if (w.size() != combo.weight_dim)
    throw ConfigError("residual: weight vector length mismatch");
  const Vec sum = combo.decompress_sum();
  double sq = 0.0;
  for (const SegmentRef& s : combo.segments)
    for (std::size_t i = 0; i < s.count(); ++i) {
      const double d = w[s.offset + i] - sum[s.offset + i];
      sq += d * d;
    }
  return std::sqrt(sq);
}

inline double residual_norm(const WeightStore& w, const AdditiveCombo& combo) {
  return residual_norm(std::span<const double>(w.values), combo);
}

// Copy of `w` with the compressed coordinates replaced by the combo's
// decompression: the deliverable (feasible) model.
inline WeightStore feasible_weights(const WeightStore& w, const AdditiveCombo& combo) {
  WeightStore out = w;
  const Vec sum = combo.decompress_sum();
  for (const SegmentRef& s : combo.segments)
    for (std::size_t i = 0; i < s.count(); ++i) out.values[s.offset + i] = sum[s.offset + i];
  return out;
}

// ------------------------------------------------------------------ C-step --

struct BackfitOptions {
  std::size_t max_alternations = 30;
  // Stop once the residual-norm decrease over a full sweep is <= tol. The
  // default 0 still stops at an exact stall (a fixed point of all parts).
  double tol = 0.0;
  // When set, receives the squared residual after every half-step.
  std::vector<double>* half_step_trace = nullptr;
};

// Backfit all parts of `combo` to `target` (full-length vector). Returns the
// final residual norm over the compressed coordinates.
inline double cstep_backfit(std::span<const double> target, AdditiveCombo& combo,
                            const BackfitOptions& opt = {}) {
  if (target.size() != combo.weight_dim)
    throw ConfigError("c-step: target length mismatch");
  if (combo.parts.empty()) return residual_norm(target, combo);

  Vec total = combo.decompress_sum();
  Vec residual(combo.weight_dim, 0.0);

  auto squared_residual = [&] {
    double sq = 0.0;
    for (const SegmentRef& s : combo.segments)
      for (std::size_t i = 0; i < s.count(); ++i) {
        const double d = target[s.offset + i] - total[s.offset + i];
        sq += d * d;
      }
    return sq;
  };

  double prev_sweep = std::sqrt(squared_residual());
  for (std::size_t sweep = 0; sweep < opt.max_alternations; ++sweep) {
    for (PartState& part : combo.parts) {
      // residual left for this part = target - (total - own contribution)
      Vec contrib(combo.weight_dim, 0.0);
      detail::add_part(combo, part, contrib);
      for (const SegmentRef& s : combo.segments)
        for (std::size_t i = 0; i < s.count(); ++i) {
          const std::size_t c = s.offset + i;
          residual[c] = target[c] - (total[c] - contrib[c]);
        }
      detail::project_part(combo, part, residual);

      Vec fresh(combo.weight_dim, 0.0);
      detail::add_part(combo, part, fresh);
      for (const SegmentRef& s : combo.segments)
        for (std::size_t i = 0; i < s.count(); ++i) {
          const std::size_t c = s.offset + i;
          total[c] += fresh[c] - contrib[c];
        }
      if (opt.half_step_trace) opt.half_step_trace->push_back(squared_residual());
    }
    const double now = std::sqrt(squared_residual());
    if (prev_sweep - now <= opt.tol) break;
    prev_sweep = now;
  }
  return std::sqrt(squared_residual());
}

// --------------------------------------------- exact Q(fixed) + P solution --

struct ExactQuantPrune {
  Quantization quant;
  SparseCorrection sparse;
  double objective = 0.0;  // squared residual at the optimum
};

// Global optimum of min_{q, s} ||w - (q + s)||^2 with q drawn per-coordinate
// from a fixed codebook and ||s||_0 <= kappa: quantize every coordinate to
// its nearest entry, then spend the budget on the kappa largest quantization
// residuals, cancelling them exactly.
inline ExactQuantPrune cstep_exact_qfixed_prune(std::span<const double> w,
                                                std::span<const double> codebook,
                                                std::size_t kappa) {
  if (kappa > w.size()) throw ConfigError("c-step: budget exceeds dimension");
  ExactQuantPrune out;
  out.quant = quant_fixed_project(w, codebook);
  Vec residual(w.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    residual[i] = w[i] - out.quant.codebook[out.quant.assignments[i]];
  out.sparse = prune_project(residual, kappa);

  std::vector<bool> corrected(w.size(), false);
  for (const auto& [i, v] : out.sparse.entries) corrected[i] = true;
  double sq = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (!corrected[i]) sq += residual[i] * residual[i];
  out.objective = sq;
  return out;
}

}  // namespace addlc
