#pragma once

// Serialized compressed-model container (magic "ALC1").
//
// A file is a structural header followed by ONE contiguous little-endian
// bitstream, the payload. The payload holds exactly the data the storage
// accounting in metrics.hpp counts, in this order:
//
//   1. every parameter outside the compression scope, 32-bit float,
//      in layer order;
//   2. per part, in combo order:
//        quantization   per codebook group: K 32-bit float entries, then
//                       ceil(log2 K) bits per covered weight (omitted for
//                       K = 1), gather order;
//        sparse         per segment: (delta, value) pairs, delta in p bits,
//                       value in 16-bit float; a dummy pair is all zeros and
//                       advances the decoder position by 2^p - 1;
//        low-rank       per segment: U then V, 16-bit floats, row-major.
//
// The header records the payload length in BITS; the payload is padded to a
// byte boundary only at the very end of the file. Consequently
//
//     header.payload_bits == bits_compressed(combo)     (asserted on save)
//     payload bytes on disk == ceil(payload_bits / 8)
//
// so the accounting is measurable from the file itself. Structural metadata
// (names, shapes, scheme descriptors, per-segment pair counts) lives in the
// header and is excluded from the accounting, which counts only model data.
//
// A sparse value that would round to +-0.0 in 16 bits is nudged to the
// smallest same-sign subnormal: corrections are nonzero by contract, and the
// all-zeros pattern must stay reserved for dummy pairs.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "addlc/combo.hpp"
#include "addlc/core.hpp"
#include "addlc/metrics.hpp"
#include "addlc/model.hpp"
#include "addlc/weight_store.hpp"

namespace addlc {

namespace detail {

// ---------------------------------------------------------------- bit i/o ---

class BitWriter {
 public:
  void write(std::uint64_t value, std::uint32_t nbits) {
    for (std::uint32_t b = 0; b < nbits; ++b) {
      const std::size_t byte = static_cast<std::size_t>(bit_count_ >> 3);
      if (byte >= bytes_.size()) bytes_.push_back(0);
      if ((value >> b) & 1u) bytes_[byte] |= static_cast<std::uint8_t>(1u << (bit_count_ & 7));
      ++bit_count_;
    }
  }
  std::uint64_t bit_count() const { return bit_count_; }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t bit_count_ = 0;
};

class BitReader {
 public:
  BitReader(const std::uint8_t* data, std::uint64_t bit_count)
      : data_(data), bit_count_(bit_count) {}

  std::uint64_t read(std::uint32_t nbits) {
    std::uint64_t value = 0;
    for (std::uint32_t b = 0; b < nbits; ++b) {
      if (pos_ >= bit_count_) throw ConfigError("container: payload truncated");
      const std::uint8_t byte = data_[pos_ >> 3];
      if ((byte >> (pos_ & 7)) & 1u) value |= (std::uint64_t{1} << b);
      ++pos_;
    }
    return value;
  }
  std::uint64_t position() const { return pos_; }

 private:
  const std::uint8_t* data_;
  std::uint64_t bit_count_;
  std::uint64_t pos_ = 0;
};

// ------------------------------------------------------------- header i/o ---

inline void put_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}
template <class T>
void put(std::vector<std::uint8_t>& out, T v) {  // little-endian on every target we build for
  put_bytes(out, &v, sizeof(T));
}
inline void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  put_bytes(out, s.data(), s.size());
}

struct ByteCursor {
  const std::uint8_t* p;
  std::size_t left;
  void need(std::size_t n) const {
    if (n > left) throw ConfigError("container: header truncated");
  }
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    left -= sizeof(T);
    return v;
  }
  std::string get_string() {
    const std::uint16_t n = get<std::uint16_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    left -= n;
    return s;
  }
};

inline std::uint16_t nudged_half(double v) {
  std::uint16_t h = half_from_double(v);
  if ((h & 0x7FFFu) == 0 && v != 0.0) h |= 1;  // keep nonzero values nonzero
  return h;
}

}  // namespace detail

struct LoadedModel {
  ModelSpec spec;
  WeightStore store;  // feasible deployment weights (combo decompression + uncompressed)
  AdditiveCombo combo;
  StorageConfig storage;
  std::uint64_t payload_bits = 0;
  std::uint64_t header_bytes = 0;
};

// ------------------------------------------------------------------- save ---

inline void save_compressed_model(const std::string& path, const ModelSpec& spec,
                                  const WeightStore& w, const AdditiveCombo& combo,
                                  const StorageConfig& cfg = {}) {
  if (combo.weight_dim != w.size()) throw ConfigError("container: combo/store mismatch");
  for (const PartState& part : combo.parts)
    if (!part.initialized) throw ConfigError("container: cannot save an unfitted part");

  // ---- payload -------------------------------------------------------------
  detail::BitWriter bits;
  const bool reference_only = combo.parts.empty();

  std::vector<bool> in_scope(w.layers.size(), false);
  if (!reference_only)
    for (const SegmentRef& s : combo.segments) in_scope[s.layer] = true;
  for (std::size_t li = 0; li < w.layers.size(); ++li) {
    if (in_scope[li]) continue;
    for (double v : w.segment(w.layers[li]))
      bits.write(std::bit_cast<std::uint32_t>(static_cast<float>(v)), 32);
  }

  std::vector<std::vector<std::uint32_t>> prune_pair_counts(combo.parts.size());
  for (std::size_t pi = 0; pi < combo.parts.size(); ++pi) {
    const PartState& part = combo.parts[pi];
    switch (part.spec.kind) {
      case SchemeKind::quant_adaptive:
      case SchemeKind::quant_fixed: {
        const std::uint32_t idx_bits = index_bits_for(part.quant[0].codebook.size());
        for (const Quantization& q : part.quant) {
          for (double c : q.codebook)
            bits.write(std::bit_cast<std::uint32_t>(static_cast<float>(c)), 32);
          if (idx_bits > 0)
            for (std::uint32_t a : q.assignments) bits.write(a, idx_bits);
        }
        break;
      }
      case SchemeKind::prune: {
        const std::uint32_t p = cfg.index_delta_bits;
        for (const SegmentRef& seg : combo.segments) {
          std::vector<std::size_t> local;
          std::vector<double> values;
          for (const auto& [gi, v] : part.sparse.entries)
            if (gi >= seg.offset && gi < seg.offset + seg.count()) {
              local.push_back(gi - seg.offset);
              values.push_back(v);
            }
          const SparsePairStream stream = encode_sparse_indices(local, p);
          std::size_t vi = 0;
          for (const SparsePair& pair : stream.pairs) {
            bits.write(pair.delta, p);
            bits.write(pair.dummy ? 0u : detail::nudged_half(values[vi]), 16);
            if (!pair.dummy) ++vi;
          }
          prune_pair_counts[pi].push_back(static_cast<std::uint32_t>(stream.pair_count()));
        }
        break;
      }
      case SchemeKind::low_rank: {
        for (std::size_t si = 0; si < combo.segments.size(); ++si) {
          const LowRankFactors& f = part.factors[si];
          for (double v : f.u.data) bits.write(half_from_double(v), 16);
          for (double v : f.v.data) bits.write(half_from_double(v), 16);
        }
        break;
      }
    }
  }

  const StorageReport accounted = storage_report(w, combo, cfg);
  if (bits.bit_count() != accounted.bits_compressed)
    throw NumericalError("container: payload is " + std::to_string(bits.bit_count()) +
                         " bits, accounting says " + std::to_string(accounted.bits_compressed));

  // ---- header ----------------------------------------------------------------
  std::vector<std::uint8_t> head;
  detail::put_bytes(head, "ALC1", 4);
  detail::put<std::uint32_t>(head, 1);  // version
  detail::put<std::uint8_t>(head, static_cast<std::uint8_t>(spec.loss));
  detail::put<std::uint32_t>(head, static_cast<std::uint32_t>(spec.layers.size()));
  for (const DenseLayerSpec& l : spec.layers) {
    detail::put<std::uint64_t>(head, l.in);
    detail::put<std::uint64_t>(head, l.out);
    detail::put<std::uint8_t>(head, static_cast<std::uint8_t>(l.act));
  }
  detail::put<std::uint32_t>(head, static_cast<std::uint32_t>(w.layers.size()));
  for (const LayerInfo& l : w.layers) {
    detail::put_string(head, l.name);
    detail::put<std::uint64_t>(head, l.offset);
    detail::put<std::uint64_t>(head, l.rows);
    detail::put<std::uint64_t>(head, l.cols);
    detail::put<std::uint8_t>(head,
                              static_cast<std::uint8_t>((l.is_bias ? 1 : 0) | (l.compress ? 2 : 0)));
  }
  detail::put<std::uint32_t>(head, cfg.ref_bits);
  detail::put<std::uint32_t>(head, cfg.codebook_bits);
  detail::put<std::uint32_t>(head, cfg.value_bits);
  detail::put<std::uint32_t>(head, cfg.index_delta_bits);
  detail::put<std::uint32_t>(head, static_cast<std::uint32_t>(combo.parts.size()));
  for (std::size_t pi = 0; pi < combo.parts.size(); ++pi) {
    const PartState& part = combo.parts[pi];
    detail::put<std::uint8_t>(head, static_cast<std::uint8_t>(part.spec.kind));
    detail::put<std::uint8_t>(head, part.spec.shared_codebook ? 1 : 0);
    detail::put<std::uint64_t>(head, part.spec.codebook_size);
    detail::put<std::uint64_t>(head, part.spec.rank);
    detail::put<std::uint64_t>(head, part.spec.budget);
    detail::put<std::uint32_t>(head, static_cast<std::uint32_t>(part.spec.fixed_codebook.size()));
    for (double v : part.spec.fixed_codebook) detail::put<double>(head, v);
    if (part.spec.kind == SchemeKind::prune)
      for (std::uint32_t n : prune_pair_counts[pi]) detail::put<std::uint32_t>(head, n);
    if (part.spec.kind == SchemeKind::low_rank)
      for (const LowRankFactors& f : part.factors) detail::put<std::uint64_t>(head, f.rank);
  }
  detail::put<std::uint64_t>(head, bits.bit_count());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("container: cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(head.data()), static_cast<std::streamsize>(head.size()));
  out.write(reinterpret_cast<const char*>(bits.bytes().data()),
            static_cast<std::streamsize>(bits.bytes().size()));
  if (!out) throw ConfigError("container: write failed for '" + path + "'");
}

// ------------------------------------------------------------------- load ---

inline LoadedModel load_compressed_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("container: cannot open '" + path + "'");
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  detail::ByteCursor cur{file.data(), file.size()};

  cur.need(4);
  if (std::memcmp(cur.p, "ALC1", 4) != 0) throw ConfigError("container: bad magic");
  cur.p += 4;
  cur.left -= 4;
  if (cur.get<std::uint32_t>() != 1) throw ConfigError("container: unsupported version");

  LoadedModel m;
  m.spec.loss = static_cast<LossKind>(cur.get<std::uint8_t>());
  const std::uint32_t n_dense = cur.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_dense; ++i) {
    DenseLayerSpec l;
    l.in = cur.get<std::uint64_t>();
    l.out = cur.get<std::uint64_t>();
    l.act = static_cast<Activation>(cur.get<std::uint8_t>());
    m.spec.layers.push_back(l);
  }
  const std::uint32_t n_layers = cur.get<std::uint32_t>();
  std::size_t total = 0;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerInfo l;
    l.name = cur.get_string();
    l.offset = cur.get<std::uint64_t>();
    l.rows = cur.get<std::uint64_t>();
    l.cols = cur.get<std::uint64_t>();
    const std::uint8_t flags = cur.get<std::uint8_t>();
    l.is_bias = flags & 1;
    l.compress = flags & 2;
    total += l.count();
    m.store.layers.push_back(l);
  }
  m.store.values.assign(total, 0.0);
  validate_store(m.store);

  m.storage.ref_bits = cur.get<std::uint32_t>();
  m.storage.codebook_bits = cur.get<std::uint32_t>();
  m.storage.value_bits = cur.get<std::uint32_t>();
  m.storage.index_delta_bits = cur.get<std::uint32_t>();

  m.combo.weight_dim = total;
  for (std::size_t li = 0; li < m.store.layers.size(); ++li) {
    const LayerInfo& l = m.store.layers[li];
    if (l.compress)
      m.combo.segments.push_back({li, l.offset, l.rows, l.cols, l.is_bias});
  }

  const std::uint32_t n_parts = cur.get<std::uint32_t>();
  std::vector<std::vector<std::uint32_t>> prune_pair_counts(n_parts);
  std::vector<std::vector<std::uint64_t>> lowrank_ranks(n_parts);
  for (std::uint32_t pi = 0; pi < n_parts; ++pi) {
    PartState part;
    part.spec.kind = static_cast<SchemeKind>(cur.get<std::uint8_t>());
    part.spec.shared_codebook = cur.get<std::uint8_t>() != 0;
    part.spec.codebook_size = cur.get<std::uint64_t>();
    part.spec.rank = cur.get<std::uint64_t>();
    part.spec.budget = cur.get<std::uint64_t>();
    const std::uint32_t fixed_len = cur.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < fixed_len; ++i)
      part.spec.fixed_codebook.push_back(cur.get<double>());
    if (part.spec.kind == SchemeKind::prune)
      for (std::size_t s = 0; s < m.combo.segments.size(); ++s)
        prune_pair_counts[pi].push_back(cur.get<std::uint32_t>());
    if (part.spec.kind == SchemeKind::low_rank)
      for (std::size_t s = 0; s < m.combo.segments.size(); ++s)
        lowrank_ranks[pi].push_back(cur.get<std::uint64_t>());
    m.combo.parts.push_back(std::move(part));
  }
  m.payload_bits = cur.get<std::uint64_t>();
  m.header_bytes = static_cast<std::uint64_t>(cur.p - file.data());

  const std::uint64_t payload_bytes = (m.payload_bits + 7) / 8;
  if (cur.left != payload_bytes)
    throw ConfigError("container: payload is " + std::to_string(cur.left) + " bytes, expected " +
                      std::to_string(payload_bytes));
  detail::BitReader bits(cur.p, m.payload_bits);

  // uncompressed parameters
  const bool reference_only = m.combo.parts.empty();
  std::vector<bool> in_scope(m.store.layers.size(), false);
  if (!reference_only)
    for (const SegmentRef& s : m.combo.segments) in_scope[s.layer] = true;
  for (std::size_t li = 0; li < m.store.layers.size(); ++li) {
    if (in_scope[li]) continue;
    for (double& v : m.store.segment(m.store.layers[li]))
      v = static_cast<double>(
          std::bit_cast<float>(static_cast<std::uint32_t>(bits.read(32))));
  }

  // parts
  for (std::size_t pi = 0; pi < m.combo.parts.size(); ++pi) {
    PartState& part = m.combo.parts[pi];
    switch (part.spec.kind) {
      case SchemeKind::quant_adaptive:
      case SchemeKind::quant_fixed: {
        const std::size_t k = part.spec.kind == SchemeKind::quant_adaptive
                                  ? part.spec.codebook_size
                                  : part.spec.fixed_codebook.size();
        const std::uint32_t idx_bits = index_bits_for(k);
        const auto groups = m.combo.quant_groups(part.spec.shared_codebook);
        for (const auto& group : groups) {
          Quantization q;
          q.adaptive = part.spec.kind == SchemeKind::quant_adaptive;
          for (std::size_t e = 0; e < k; ++e)
            q.codebook.push_back(static_cast<double>(
                std::bit_cast<float>(static_cast<std::uint32_t>(bits.read(32)))));
          std::size_t count = 0;
          for (std::size_t si : group) count += m.combo.segments[si].count();
          q.assignments.assign(count, 0);
          if (idx_bits > 0)
            for (std::size_t i = 0; i < count; ++i)
              q.assignments[i] = static_cast<std::uint32_t>(bits.read(idx_bits));
          part.quant.push_back(std::move(q));
        }
        break;
      }
      case SchemeKind::prune: {
        const std::uint32_t p = m.storage.index_delta_bits;
        part.sparse.budget = part.spec.budget;
        for (std::size_t si = 0; si < m.combo.segments.size(); ++si) {
          const SegmentRef& seg = m.combo.segments[si];
          SparsePairStream stream;
          stream.delta_bits = p;
          std::vector<double> values;
          for (std::uint32_t n = 0; n < prune_pair_counts[pi][si]; ++n) {
            const std::uint32_t delta = static_cast<std::uint32_t>(bits.read(p));
            const std::uint16_t vh = static_cast<std::uint16_t>(bits.read(16));
            const bool dummy = delta == 0 && vh == 0;
            stream.pairs.push_back({delta, dummy});
            if (!dummy) values.push_back(half_to_double(vh));
          }
          const std::vector<std::size_t> local = decode_sparse_indices(stream);
          for (std::size_t i = 0; i < local.size(); ++i)
            part.sparse.entries.emplace_back(seg.offset + local[i], values[i]);
        }
        break;
      }
      case SchemeKind::low_rank: {
        for (std::size_t si = 0; si < m.combo.segments.size(); ++si) {
          const SegmentRef& seg = m.combo.segments[si];
          LowRankFactors f;
          f.rank = lowrank_ranks[pi][si];
          if (f.rank > 0) {
            f.u = Matrix(seg.rows, f.rank);
            f.v = Matrix(seg.cols, f.rank);
            for (double& v : f.u.data) v = half_to_double(static_cast<std::uint16_t>(bits.read(16)));
            for (double& v : f.v.data) v = half_to_double(static_cast<std::uint16_t>(bits.read(16)));
          }
          part.factors.push_back(std::move(f));
        }
        break;
      }
    }
    part.initialized = true;
  }
  if (bits.position() != m.payload_bits)
    throw ConfigError("container: payload has trailing data");

  // compressed coordinates carry the decompressed parts
  if (!reference_only) {
    const Vec sum = m.combo.decompress_sum();
    for (const SegmentRef& s : m.combo.segments)
      for (std::size_t i = 0; i < s.count(); ++i)
        m.store.values[s.offset + i] = sum[s.offset + i];
  }
  return m;
}

}  // namespace addlc
