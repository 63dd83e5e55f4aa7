#pragma once

// Storage and FLOP accounting for compressed models.
//
// Storage accounting (bits):
//   reference           32 per parameter
//   quantization        L codebooks of K entries at 32 bits, plus
//                       ceil(log2 K) bits per covered parameter
//   sparse correction   per-segment delta streams of (delta, value) pairs at
//                       p + 16 bits; deltas start from position 0; a delta
//                       that does not fit in p bits is bridged by all-zero
//                       dummy pairs, each advancing the position by 2^p - 1
//   low-rank            16 bits per factor entry: 16 r (m + n)
//   uncompressed        32 per parameter (excluded biases etc.)
//
// FLOP accounting per dense layer (out x in, bias folded into the adds):
//   reference           out*in adds, out*in mults
//   quantized part      out*in adds, K*out mults
//   sparse part         p mults, p-1 adds for p nonzeros in the layer
//   low-rank part       r(out+in) adds and mults (r(out+1) on a bias vector)
//
// Compression ratios are reference/compressed; an empty combo therefore
// reports rho = 1 exactly.

#include <bit>
#include <cstdint>
#include <span>
#include <vector>

#include "addlc/combo.hpp"
#include "addlc/core.hpp"
#include "addlc/model.hpp"
#include "addlc/weight_store.hpp"

namespace addlc {

struct StorageConfig {
  std::uint32_t ref_bits = 32;         // reference / uncompressed parameters
  std::uint32_t codebook_bits = 32;
  std::uint32_t value_bits = 16;       // sparse values, factor entries
  std::uint32_t index_delta_bits = 8;  // p
};

inline std::uint32_t index_bits_for(std::size_t codebook_size) {
  if (codebook_size <= 1) return 0;
  return static_cast<std::uint32_t>(std::bit_width(codebook_size - 1));
}

inline std::uint64_t bits_reference(std::uint64_t params, const StorageConfig& cfg = {}) {
  return params * cfg.ref_bits;
}

inline std::uint64_t bits_quantized(std::uint64_t codebooks, std::uint64_t codebook_size,
                                    std::uint64_t params, const StorageConfig& cfg = {}) {
  return codebooks * codebook_size * cfg.codebook_bits + params * index_bits_for(codebook_size);
}

inline std::uint64_t bits_lowrank(std::uint64_t m, std::uint64_t n, std::uint64_t r,
                                  const StorageConfig& cfg = {}) {
  return cfg.value_bits * r * (m + n);
}

// ------------------------------------------------------ sparse index pairs --

struct SparsePair {
  std::uint32_t delta = 0;
  bool dummy = false;  // all-zero bridge pair; advances the position by 2^p - 1
};

struct SparsePairStream {
  std::vector<SparsePair> pairs;
  std::uint32_t delta_bits = 8;

  std::uint64_t pair_count() const { return pairs.size(); }
  std::uint64_t dummy_count() const {
    std::uint64_t n = 0;
    for (const SparsePair& p : pairs) n += p.dummy ? 1 : 0;
    return n;
  }
  std::uint64_t bits(const StorageConfig& cfg) const {
    return pair_count() * (delta_bits + cfg.value_bits);
  }
};

// Delta-encode a strictly increasing index list. The running position starts
// at 0; each real pair stores index - position and moves the position to that
// index; oversized gaps are bridged with dummy pairs first.
inline SparsePairStream encode_sparse_indices(std::span<const std::size_t> indices,
                                              std::uint32_t delta_bits) {
  if (delta_bits == 0 || delta_bits > 32) throw ConfigError("sparse stream: bad delta width");
  SparsePairStream out;
  out.delta_bits = delta_bits;
  const std::size_t max_delta = (std::size_t{1} << delta_bits) - 1;
  std::size_t position = 0;
  bool first = true;
  for (std::size_t idx : indices) {
    if (!first && idx <= position)
      throw ConfigError("sparse stream: indices must be strictly increasing");
    while (idx - position > max_delta) {
      out.pairs.push_back({0, true});
      position += max_delta;
    }
    out.pairs.push_back({static_cast<std::uint32_t>(idx - position), false});
    position = idx;
    first = false;
  }
  return out;
}

inline std::vector<std::size_t> decode_sparse_indices(const SparsePairStream& stream) {
  const std::size_t max_delta = (std::size_t{1} << stream.delta_bits) - 1;
  std::vector<std::size_t> out;
  std::size_t position = 0;
  for (const SparsePair& p : stream.pairs) {
    if (p.dummy) {
      position += max_delta;
    } else {
      position += p.delta;
      out.push_back(position);
    }
  }
  return out;
}

// ----------------------------------------------------------- storage total --

struct StorageReport {
  std::uint64_t params = 0;
  std::uint64_t bits_ref = 0;
  std::uint64_t bits_compressed = 0;
  std::uint64_t quant_codebook_bits = 0;
  std::uint64_t quant_index_bits = 0;
  std::uint64_t sparse_bits = 0;
  std::uint64_t lowrank_bits = 0;
  std::uint64_t uncompressed_bits = 0;
  std::uint64_t sparse_pairs = 0;
  std::uint64_t sparse_dummy_pairs = 0;
  double rho_s = 1.0;
};

// Sparse entries of one part that fall inside one segment, as segment-local
// indices (the per-layer streams the container also writes).
inline std::vector<std::size_t> sparse_local_indices(const SparseCorrection& sc,
                                                     const SegmentRef& seg) {
  std::vector<std::size_t> local;
  for (const auto& [gi, v] : sc.entries)
    if (gi >= seg.offset && gi < seg.offset + seg.count()) local.push_back(gi - seg.offset);
  return local;
}

inline StorageReport storage_report(const WeightStore& w, const AdditiveCombo& combo,
                                    const StorageConfig& cfg = {}) {
  StorageReport rep;
  rep.params = w.size();
  rep.bits_ref = bits_reference(rep.params, cfg);

  // parameters outside the combo stay at full width; a part-less combo is the
  // reference model and stores everything that way
  const std::uint64_t uncompressed =
      combo.parts.empty() ? w.size() : w.size() - combo.compressed_count();
  rep.uncompressed_bits = uncompressed * cfg.ref_bits;

  for (const PartState& part : combo.parts) {
    switch (part.spec.kind) {
      case SchemeKind::quant_adaptive:
      case SchemeKind::quant_fixed: {
        const auto groups = combo.quant_groups(part.spec.shared_codebook);
        const std::size_t k = part.spec.kind == SchemeKind::quant_adaptive
                                  ? part.spec.codebook_size
                                  : part.spec.fixed_codebook.size();
        rep.quant_codebook_bits += groups.size() * k * cfg.codebook_bits;
        rep.quant_index_bits += combo.compressed_count() * index_bits_for(k);
        break;
      }
      case SchemeKind::prune: {
        for (const SegmentRef& seg : combo.segments) {
          const auto local = sparse_local_indices(part.sparse, seg);
          if (local.empty()) continue;
          const SparsePairStream stream = encode_sparse_indices(local, cfg.index_delta_bits);
          rep.sparse_pairs += stream.pair_count();
          rep.sparse_dummy_pairs += stream.dummy_count();
          rep.sparse_bits += stream.bits(cfg);
        }
        break;
      }
      case SchemeKind::low_rank: {
        for (std::size_t si = 0; si < combo.segments.size(); ++si) {
          const SegmentRef& seg = combo.segments[si];
          const std::size_t r = part.initialized ? part.factors[si].rank
                                                 : std::min(part.spec.rank,
                                                            std::min(seg.rows, seg.cols));
          rep.lowrank_bits += bits_lowrank(seg.rows, seg.cols, r, cfg);
        }
        break;
      }
    }
  }

  rep.bits_compressed = rep.quant_codebook_bits + rep.quant_index_bits + rep.sparse_bits +
                        rep.lowrank_bits + rep.uncompressed_bits;
  rep.rho_s = rep.bits_compressed > 0
                  ? static_cast<double>(rep.bits_ref) / static_cast<double>(rep.bits_compressed)
                  : 0.0;
  return rep;
}

// ------------------------------------------------------------------- flops --

struct FlopCount {
  std::uint64_t adds = 0;
  std::uint64_t mults = 0;
};

inline FlopCount flops_reference(const ModelSpec& spec) {
  FlopCount f;
  for (const DenseLayerSpec& l : spec.layers) {
    f.adds += static_cast<std::uint64_t>(l.out) * l.in;
    f.mults += static_cast<std::uint64_t>(l.out) * l.in;
  }
  return f;
}

inline FlopCount flops_compressed(const ModelSpec& spec, const AdditiveCombo& combo) {
  FlopCount f;
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<std::size_t> seg_of(2 * spec.layers.size(), npos);
  for (std::size_t si = 0; si < combo.segments.size(); ++si)
    seg_of[combo.segments[si].layer] = si;

  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const DenseLayerSpec& l = spec.layers[li];
    const std::size_t wseg = seg_of[2 * li];
    const std::size_t bseg = seg_of[2 * li + 1];
    if (wseg == npos || combo.parts.empty()) {  // dense layer
      f.adds += static_cast<std::uint64_t>(l.out) * l.in;
      f.mults += static_cast<std::uint64_t>(l.out) * l.in;
      continue;
    }
    for (const PartState& part : combo.parts) {
      switch (part.spec.kind) {
        case SchemeKind::quant_adaptive:
        case SchemeKind::quant_fixed: {
          const std::size_t k = part.spec.kind == SchemeKind::quant_adaptive
                                    ? part.spec.codebook_size
                                    : part.spec.fixed_codebook.size();
          f.adds += static_cast<std::uint64_t>(l.out) * l.in;
          f.mults += static_cast<std::uint64_t>(k) * l.out;
          break;
        }
        case SchemeKind::prune: {
          std::uint64_t p = sparse_local_indices(part.sparse, combo.segments[wseg]).size();
          if (bseg != npos)
            p += sparse_local_indices(part.sparse, combo.segments[bseg]).size();
          if (p > 0) {
            f.mults += p;
            f.adds += p - 1;
          }
          break;
        }
        case SchemeKind::low_rank: {
          const auto rank_of = [&](std::size_t si) {
            return part.initialized ? part.factors[si].rank
                                    : std::min(part.spec.rank,
                                               std::min(combo.segments[si].rows,
                                                        combo.segments[si].cols));
          };
          const std::uint64_t r = rank_of(wseg);
          f.adds += r * (l.out + l.in);
          f.mults += r * (l.out + l.in);
          if (bseg != npos) {
            const std::uint64_t rb = rank_of(bseg);
            f.adds += rb * (l.out + 1);
            f.mults += rb * (l.out + 1);
          }
          break;
        }
      }
    }
  }
  return f;
}

// ------------------------------------------------------------------ report --

struct MetricsReport {
  StorageReport storage;
  FlopCount ref_flops;
  FlopCount comp_flops;
  double rho_add = 1.0;
  double rho_mul = 1.0;
  std::size_t bias_corrections = 0;  // distinct corrected bias coordinates
  std::size_t bias_count = 0;        // bias coordinates inside the combo
};

inline MetricsReport build_metrics_report(const WeightStore& w, const ModelSpec& spec,
                                          const AdditiveCombo& combo,
                                          const StorageConfig& cfg = {}) {
  MetricsReport rep;
  rep.storage = storage_report(w, combo, cfg);
  rep.ref_flops = flops_reference(spec);
  rep.comp_flops = flops_compressed(spec, combo);
  rep.rho_add = rep.comp_flops.adds > 0 ? static_cast<double>(rep.ref_flops.adds) /
                                              static_cast<double>(rep.comp_flops.adds)
                                        : 0.0;
  rep.rho_mul = rep.comp_flops.mults > 0 ? static_cast<double>(rep.ref_flops.mults) /
                                               static_cast<double>(rep.comp_flops.mults)
                                         : 0.0;

  for (const SegmentRef& seg : combo.segments) {
    if (!seg.is_bias) continue;
    rep.bias_count += seg.count();
    std::vector<bool> touched(seg.count(), false);
    for (const PartState& part : combo.parts) {
      if (part.spec.kind != SchemeKind::prune) continue;
      for (std::size_t local : sparse_local_indices(part.sparse, seg)) touched[local] = true;
    }
    for (bool t : touched) rep.bias_corrections += t ? 1 : 0;
  }
  return rep;
}

}  // namespace addlc
