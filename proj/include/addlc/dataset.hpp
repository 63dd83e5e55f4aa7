#pragma once

// Dataset loaders: seeded synthetic Gaussian blobs, generic CSV
// (features..., label), and the public CIFAR-10 binary layout
// (record = 1 label byte + 3072 pixel bytes; 5 train batches + 1 test batch).
// CIFAR-10 pixels are standardized per pixel position with statistics taken
// from the training set only.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "addlc/core.hpp"
#include "addlc/model.hpp"

namespace addlc {

// ------------------------------------------------------------------ blobs ---

// Balanced Gaussian class blobs. Class centers are drawn once from
// N(0, (3*spread)^2) per coordinate; sample i belongs to class i mod
// `classes` and scatters around its center with standard deviation `spread`.
// Labels and one-hot targets are both filled so the same data drives
// classification and regression models.
inline Dataset make_blobs(std::size_t classes, std::size_t dim, std::size_t n, Rng& rng,
                          std::vector<Vec>& centers, double spread = 1.0) {
  if (classes < 1 || dim < 1) throw ConfigError("blobs: classes and dim must be positive");
  if (centers.empty()) {
    centers.resize(classes, Vec(dim));
    for (auto& c : centers)
      for (double& v : c) v = 3.0 * spread * rng.normal();
  }
  Dataset d;
  d.inputs = Matrix(n, dim);
  d.labels.resize(n);
  d.targets = Matrix(n, classes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    d.labels[i] = static_cast<int>(c);
    d.targets(i, c) = 1.0;
    for (std::size_t j = 0; j < dim; ++j) d.inputs(i, j) = centers[c][j] + spread * rng.normal();
  }
  return d;
}

inline DataSplit make_blobs_split(std::size_t classes, std::size_t dim, std::size_t n_train,
                                  std::size_t n_test, std::uint64_t seed, double spread = 1.0) {
  Rng rng(seed);
  std::vector<Vec> centers;  // shared between the splits
  DataSplit s;
  s.train = make_blobs(classes, dim, n_train, rng, centers, spread);
  s.test = make_blobs(classes, dim, n_test, rng, centers, spread);
  return s;
}

// -------------------------------------------------------------------- csv ---

// Every row is `feature,...,feature,label`. A first line with any
// non-numeric cell is treated as a header and skipped. Integral last columns
// double as class labels; the raw value is always kept as a 1-column target.
inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("csv: cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool bad = false;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
        if (used != cell.size()) throw std::invalid_argument(cell);
        row.push_back(v);
      } catch (const std::exception&) {
        bad = true;
        break;
      }
    }
    if (bad) {
      if (first) {
        first = false;
        continue;  // header
      }
      throw ConfigError("csv: non-numeric cell in '" + path + "': " + line);
    }
    first = false;
    if (row.size() < 2) throw ConfigError("csv: rows need at least one feature and a label");
    if (!rows.empty() && row.size() != rows.front().size())
      throw ConfigError("csv: inconsistent column count in '" + path + "'");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("csv: no data rows in '" + path + "'");

  const std::size_t dim = rows.front().size() - 1;
  Dataset d;
  d.inputs = Matrix(rows.size(), dim);
  d.labels.resize(rows.size());
  d.targets = Matrix(rows.size(), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < dim; ++j) d.inputs(i, j) = rows[i][j];
    const double y = rows[i][dim];
    d.targets(i, 0) = y;
    d.labels[i] = static_cast<int>(std::llround(y));
  }
  return d;
}

// ---------------------------------------------------------------- cifar10 ---

namespace detail {

inline void read_cifar_batch(const std::string& path, Dataset& d, std::size_t row0) {
  constexpr std::size_t kRecord = 3073;  // 1 label byte + 32*32*3 pixel bytes
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cifar10: cannot open '" + path + "'");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (buf.size() != 10000 * kRecord)
    throw ConfigError("cifar10: '" + path + "' has " + std::to_string(buf.size()) +
                      " bytes, expected " + std::to_string(10000 * kRecord));
  for (std::size_t r = 0; r < 10000; ++r) {
    const std::uint8_t* rec = buf.data() + r * kRecord;
    if (rec[0] > 9) throw ConfigError("cifar10: label out of range in '" + path + "'");
    d.labels[row0 + r] = rec[0];
    d.targets(row0 + r, rec[0]) = 1.0;
    for (std::size_t j = 0; j < 3072; ++j)
      d.inputs(row0 + r, j) = static_cast<double>(rec[1 + j]);
  }
}

}  // namespace detail

// Standardize both splits with per-pixel mean/stddev estimated on `train`.
inline void standardize_pixelwise(Dataset& train, Dataset& test) {
  const std::size_t dim = train.inputs.cols;
  const std::size_t n = train.inputs.rows;
  if (n < 2) throw ConfigError("standardize: need at least 2 training rows");
  Vec mean(dim, 0.0), var(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) mean[j] += train.inputs(i, j);
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) {
      const double c = train.inputs(i, j) - mean[j];
      var[j] += c * c;
    }
  Vec inv_sd(dim);
  for (std::size_t j = 0; j < dim; ++j)
    inv_sd[j] = 1.0 / std::sqrt(var[j] / static_cast<double>(n) + 1e-8);
  auto apply = [&](Dataset& d) {
    if (d.inputs.cols != dim) throw ConfigError("standardize: dimension mismatch");
    for (std::size_t i = 0; i < d.inputs.rows; ++i)
      for (std::size_t j = 0; j < dim; ++j)
        d.inputs(i, j) = (d.inputs(i, j) - mean[j]) * inv_sd[j];
  };
  apply(train);
  apply(test);
}

inline DataSplit load_cifar10(const std::string& dir) {
  DataSplit s;
  s.train.inputs = Matrix(50000, 3072);
  s.train.labels.resize(50000);
  s.train.targets = Matrix(50000, 10);
  for (int b = 1; b <= 5; ++b)
    detail::read_cifar_batch(dir + "/data_batch_" + std::to_string(b) + ".bin", s.train,
                             static_cast<std::size_t>(b - 1) * 10000);
  s.test.inputs = Matrix(10000, 3072);
  s.test.labels.resize(10000);
  s.test.targets = Matrix(10000, 10);
  detail::read_cifar_batch(dir + "/test_batch.bin", s.test, 0);
  standardize_pixelwise(s.train, s.test);
  return s;
}

}  // namespace addlc
