#pragma once

// Synthetic domain-shift datasets, the scarce-target subsampling protocol,
// and strict CSV round-tripping for them.

#include "steinuda/core.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace steinuda {

enum class Domain { Source, Target };

inline std::string domain_name(Domain d) {
  return d == Domain::Source ? "source" : "target";
}

inline Domain domain_from_name(const std::string& s) {
  if (s == "source") return Domain::Source;
  if (s == "target") return Domain::Target;
  throw DataError("CsvFormat: domain must be 'source' or 'target', got '" + s + "'");
}

struct Dataset {
  Mat features;
  std::vector<int> labels;  // empty when unlabeled
  Domain domain = Domain::Source;

  int n() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
  bool labeled() const { return !labels.empty(); }
  int classes() const {
    int top = -1;
    for (int y : labels) top = std::max(top, y);
    return top + 1;
  }
};

// Two interleaved half-circles (radius 1, centers (0,0) and (1,0.5)) with
// isotropic Gaussian noise, then rotated about the point-cloud centroid. The
// angle is reduced mod 360 first so a full turn reproduces the unrotated
// data bitwise.
inline Dataset make_two_moons(int n, double noise, double rotation_deg, RngStream& rng) {
  if (n < 2 || n % 2 != 0) throw DataError("make_two_moons: n must be even and >= 2");
  if (noise < 0) throw DataError("make_two_moons: noise must be non-negative");
  const int half = n / 2;
  Dataset ds;
  ds.features.resize(n, 2);
  ds.labels.resize(n);
  for (int i = 0; i < half; ++i) {
    const double theta = half > 1 ? M_PI * i / (half - 1) : 0.0;
    ds.features(i, 0) = std::cos(theta);
    ds.features(i, 1) = std::sin(theta);
    ds.labels[i] = 0;
    ds.features(half + i, 0) = 1.0 - std::cos(theta);
    ds.features(half + i, 1) = 0.5 - std::sin(theta);
    ds.labels[half + i] = 1;
  }
  if (noise > 0) {
    for (int i = 0; i < n; ++i) {
      ds.features(i, 0) += noise * rng.normal();
      ds.features(i, 1) += noise * rng.normal();
    }
  }
  const double reduced = std::fmod(rotation_deg, 360.0);
  if (reduced != 0.0) {
    const double rad = reduced * M_PI / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const Vec centroid = ds.features.colwise().mean().transpose();
    for (int i = 0; i < n; ++i) {
      const double x = ds.features(i, 0) - centroid[0];
      const double y = ds.features(i, 1) - centroid[1];
      ds.features(i, 0) = centroid[0] + c * x - s * y;
      ds.features(i, 1) = centroid[1] + s * x + c * y;
    }
  }
  return ds;
}

// Class-conditional Gaussian blobs on a radius-3 circle (first two
// coordinates); the target copy translates every coordinate by mean_shift and
// scales the noise covariance by cov_scale.
inline std::pair<Dataset, Dataset> make_blob_shift(int n, int d, double mean_shift,
                                                   double cov_scale, int classes,
                                                   RngStream& rng) {
  if (classes < 2) throw DataError("make_blob_shift: need at least 2 classes");
  if (d < 1) throw DataError("make_blob_shift: dimension must be positive");
  if (n < classes || n % classes != 0)
    throw DataError("make_blob_shift: n must be a positive multiple of classes");
  if (cov_scale <= 0) throw DataError("make_blob_shift: cov_scale must be positive");
  const int per_class = n / classes;
  Mat centers = Mat::Zero(classes, d);
  for (int c = 0; c < classes; ++c) {
    centers(c, 0) = 3.0 * std::cos(2.0 * M_PI * c / classes);
    if (d > 1) centers(c, 1) = 3.0 * std::sin(2.0 * M_PI * c / classes);
  }
  const double noise_sd = std::sqrt(cov_scale);
  Dataset source, target;
  source.domain = Domain::Source;
  target.domain = Domain::Target;
  source.features.resize(n, d);
  target.features.resize(n, d);
  source.labels.resize(n);
  target.labels.resize(n);
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i) {
      const int row = c * per_class + i;
      for (int j = 0; j < d; ++j) source.features(row, j) = centers(c, j) + rng.normal();
      source.labels[row] = c;
    }
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i) {
      const int row = c * per_class + i;
      for (int j = 0; j < d; ++j)
        target.features(row, j) = centers(c, j) + mean_shift + noise_sd * rng.normal();
      target.labels[row] = c;
    }
  return {std::move(source), std::move(target)};
}

// Uniform subsample of size max(ceil(percent * n), minimum), capped at n.
// Indices come back sorted, so the surviving rows keep their original order.
inline Dataset subsample_target(const Dataset& data, double percent, int minimum,
                                RngStream& rng) {
  if (data.n() == 0) throw DataError("EmptyDataset: subsample_target");
  if (percent <= 0.0 || percent > 1.0)
    throw DataError("subsample_target: percent must be in (0, 1]");
  if (minimum < 1) throw DataError("subsample_target: minimum must be at least 1");
  const int n = data.n();
  const int want = std::min(
      n, std::max(static_cast<int>(std::ceil(percent * n)), minimum));
  const std::vector<int> keep = rng.sample_without_replacement(n, want);
  Dataset out;
  out.domain = data.domain;
  out.features.resize(want, data.dim());
  if (data.labeled()) out.labels.resize(want);
  for (int i = 0; i < want; ++i) {
    out.features.row(i) = data.features.row(keep[i]);
    if (data.labeled()) out.labels[i] = data.labels[keep[i]];
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV: header f0,...,f{d-1},label,domain; %.17g features round-trip bitwise;
// label column empty for unlabeled rows.

inline void write_dataset_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError("FileError: cannot open '" + path + "' for writing");
  const int d = ds.dim();
  for (int j = 0; j < d; ++j) out << 'f' << j << ',';
  out << "label,domain\n";
  char buf[40];
  const std::string dom = domain_name(ds.domain);
  for (int i = 0; i < ds.n(); ++i) {
    for (int j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.features(i, j));
      out << buf << ',';
    }
    if (ds.labeled()) out << ds.labels[i];
    out << ',' << dom << '\n';
  }
  if (!out) throw DataError("FileError: write failed for '" + path + "'");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

inline double parse_feature(const std::string& s, int row, int col) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw DataError("CsvFormat: row " + std::to_string(row) + " column f" +
                    std::to_string(col) + ": '" + s + "' is not a number");
  return v;
}

}  // namespace detail

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("FileError: cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw DataError("CsvFormat: '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = detail::split_csv_line(line);
  const int cols = static_cast<int>(header.size());
  if (cols < 3)
    throw DataError("CsvFormat: header needs f0,...,label,domain; got " +
                    std::to_string(cols) + " columns");
  const int d = cols - 2;
  for (int j = 0; j < d; ++j) {
    const std::string want = "f" + std::to_string(j);
    if (header[j] != want)
      throw DataError("CsvFormat: expected column '" + want + "', got '" + header[j] +
                      "' (column " + std::to_string(j + 1) + ")");
  }
  if (header[d] != "label")
    throw DataError("CsvFormat: expected column 'label', got '" + header[d] + "'");
  if (header[d + 1] != "domain")
    throw DataError("CsvFormat: expected column 'domain', got '" + header[d + 1] + "'");

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  bool any_label = false, any_unlabeled = false;
  Domain domain = Domain::Source;
  bool domain_set = false;
  int row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = detail::split_csv_line(line);
    if (static_cast<int>(fields.size()) != cols)
      throw DataError("CsvFormat: row " + std::to_string(row_no) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(cols));
    std::vector<double> feats(d);
    for (int j = 0; j < d; ++j) feats[j] = detail::parse_feature(fields[j], row_no, j);
    const std::string& label_str = fields[d];
    if (label_str.empty()) {
      any_unlabeled = true;
      labels.push_back(-1);
    } else {
      any_label = true;
      const char* begin = label_str.c_str();
      char* end = nullptr;
      const long y = std::strtol(begin, &end, 10);
      if (end == begin || *end != '\0' || y < 0)
        throw DataError("CsvFormat: row " + std::to_string(row_no) + ": label '" +
                        label_str + "' is not a non-negative integer");
      labels.push_back(static_cast<int>(y));
    }
    const Domain row_domain = domain_from_name(fields[d + 1]);
    if (!domain_set) {
      domain = row_domain;
      domain_set = true;
    } else if (row_domain != domain) {
      throw DataError("CsvFormat: row " + std::to_string(row_no) +
                      ": mixed domains in one file");
    }
    rows.push_back(std::move(feats));
  }
  if (rows.empty()) throw DataError("EmptyDataset: '" + path + "' has no data rows");
  if (any_label && any_unlabeled)
    throw DataError("CsvFormat: label column must be all present or all empty");

  Dataset ds;
  ds.domain = domain;
  ds.features.resize(static_cast<int>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < d; ++j) ds.features(static_cast<int>(i), j) = rows[i][j];
  if (any_label) ds.labels = std::move(labels);
  return ds;
}

}  // namespace steinuda
