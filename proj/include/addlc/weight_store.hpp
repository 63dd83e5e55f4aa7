#pragma once

// Flat parameter storage plus the layer map that assigns meaning to segments
// of it. Compression operates on the flat vector; the layer map tells each
// scheme which slices are matrices, which are biases, and which segments are
// inside the compression scope at all.

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "addlc/core.hpp"

namespace addlc {

struct LayerInfo {
  std::string name;
  std::size_t offset = 0;  // start in the flat value vector
  std::size_t rows = 0;    // matrix: output dim; bias: length
  std::size_t cols = 1;    // matrix: input dim; bias: 1
  bool is_bias = false;
  bool compress = true;  // biases default to false unless explicitly included

  std::size_t count() const { return rows * cols; }
};

struct WeightStore {
  Vec values;
  std::vector<LayerInfo> layers;

  std::size_t size() const { return values.size(); }

  std::span<const double> segment(const LayerInfo& l) const {
    return {values.data() + l.offset, l.count()};
  }
  std::span<double> segment(const LayerInfo& l) {
    return {values.data() + l.offset, l.count()};
  }
};

// The layer map must tile the flat vector exactly: segments in offset order,
// no gaps, no overlap.
inline void validate_store(const WeightStore& w) {
  std::size_t expect = 0;
  for (const LayerInfo& l : w.layers) {
    if (l.rows == 0 || l.cols == 0)
      throw ConfigError("weight store: empty segment '" + l.name + "'");
    if (l.offset != expect)
      throw ConfigError("weight store: segment '" + l.name + "' does not abut the previous one");
    expect += l.count();
  }
  if (expect != w.values.size())
    throw ConfigError("weight store: layer map covers " + std::to_string(expect) +
                      " values, vector holds " + std::to_string(w.values.size()));
}

}  // namespace addlc
