#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "friendly/common.hpp"
#include "friendly/rng.hpp"
#include "friendly/tensor.hpp"

namespace friendly {

enum class Split { train, val, test };

/// Supervised pairs with per-index split tags. Features are stored flat
/// [n×d]; image models reshape on their side.
template <class Real>
struct Dataset {
  Tensor<Real> X;  // [n×d]
  std::vector<int> y;
  int class_count = 2;
  std::vector<Split> split;
  std::string provenance;
  std::vector<std::pair<std::size_t, int>> noise_log;  // (index, original label)

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return X.shape.size() > 1 ? X.shape[1] : 0; }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }

  /// Gather rows into a [k×d] batch tensor.
  Tensor<Real> gather(const std::vector<std::size_t>& idx) const {
    const std::size_t d = dim();
    Tensor<Real> out({idx.size(), d});
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy_n(X.data.begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                  out.data.begin() + static_cast<std::ptrdiff_t>(r * d));
    return out;
  }

  std::vector<int> labels(const std::vector<std::size_t>& idx) const {
    std::vector<int> out(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) out[r] = y[idx[r]];
    return out;
  }

  bool has_val() const {
    return std::any_of(split.begin(), split.end(), [](Split s) { return s == Split::val; });
  }
};

/// Tag indices train/val/test with a stable permutation keyed by seed only,
/// so the split never shifts across epochs.
template <class Real>
void assign_splits(Dataset<Real>& ds, double val_fraction, double test_fraction,
                   std::uint64_t seed) {
  if (val_fraction < 0.0 || test_fraction < 0.0 || val_fraction + test_fraction >= 1.0)
    throw Error("split: fractions must be nonnegative and sum below 1");
  const std::size_t n = ds.size();
  Rng rng = stream(seed, {stream_tag::kSplit});
  const auto perm = rng.permutation(n);
  const std::size_t n_val = static_cast<std::size_t>(std::lround(val_fraction * n));
  const std::size_t n_test = static_cast<std::size_t>(std::lround(test_fraction * n));
  ds.split.assign(n, Split::train);
  for (std::size_t i = 0; i < n_val; ++i) ds.split[perm[i]] = Split::val;
  for (std::size_t i = n_val; i < n_val + n_test; ++i) ds.split[perm[i]] = Split::test;
}

/// Two interleaving half-circles of radius 1; the second moon's circle is
/// centred at (1, 0.5) with its valley at (1, -0.5). Balanced classes, then
/// isotropic Gaussian noise.
template <class Real>
Dataset<Real> gen_two_moons(std::size_t n, double noise_std, std::uint64_t seed) {
  if (n < 2) throw Error("two_moons: need at least 2 points");
  if (noise_std < 0.0) throw Error("two_moons: noise_std must be nonnegative");
  const std::size_t n0 = (n + 1) / 2, n1 = n / 2;
  Dataset<Real> ds;
  ds.X = Tensor<Real>({n, 2});
  ds.y.resize(n);
  ds.class_count = 2;
  ds.split.assign(n, Split::train);
  Rng rng = stream(seed, {stream_tag::kData, 0x2233});
  std::size_t row = 0;
  auto emit = [&](double px, double py, int label) {
    ds.X.at2(row, 0) = static_cast<Real>(px + noise_std * rng.normal());
    ds.X.at2(row, 1) = static_cast<Real>(py + noise_std * rng.normal());
    ds.y[row] = label;
    ++row;
  };
  for (std::size_t i = 0; i < n0; ++i) {
    const double t = n0 > 1 ? std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n0 - 1)
                            : 0.0;
    emit(std::cos(t), std::sin(t), 0);
  }
  for (std::size_t i = 0; i < n1; ++i) {
    const double t = n1 > 1 ? std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n1 - 1)
                            : 0.0;
    emit(1.0 - std::cos(t), 0.5 - std::sin(t), 1);
  }
  ds.provenance = "two_moons(n=" + std::to_string(n) + ",noise=" + std::to_string(noise_std) +
                  ",seed=" + std::to_string(seed) + ")";
  return ds;
}

/// C Gaussian clusters; centres drawn once and rescaled so the minimum
/// pairwise distance is at least `separation`.
template <class Real>
Dataset<Real> gen_blobs(std::size_t n, std::size_t d, int c, double separation,
                        double noise_std, std::uint64_t seed) {
  if (c < 2) throw Error("blobs: need at least 2 classes");
  if (n < static_cast<std::size_t>(c) || d < 1)
    throw Error("blobs: need n >= class count and d >= 1");
  if (separation <= 0.0 || noise_std < 0.0)
    throw Error("blobs: separation must be positive, noise_std nonnegative");
  Rng rng = stream(seed, {stream_tag::kData, 0x3344});
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(c),
                                           std::vector<double>(d));
  for (auto& ctr : centers)
    for (double& v : ctr) v = rng.normal();
  double min_dist = -1.0;
  for (std::size_t a = 0; a < centers.size(); ++a)
    for (std::size_t b = a + 1; b < centers.size(); ++b) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = centers[a][k] - centers[b][k];
        s += diff * diff;
      }
      const double dist = std::sqrt(s);
      if (min_dist < 0.0 || dist < min_dist) min_dist = dist;
    }
  if (min_dist <= 0.0) throw Error("blobs: degenerate centre draw");
  const double scale = separation / min_dist;
  if (scale > 1.0)
    for (auto& ctr : centers)
      for (double& v : ctr) v *= scale;

  Dataset<Real> ds;
  ds.X = Tensor<Real>({n, d});
  ds.y.resize(n);
  ds.class_count = c;
  ds.split.assign(n, Split::train);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(c));
    ds.y[i] = label;
    const auto& ctr = centers[static_cast<std::size_t>(label)];
    for (std::size_t k = 0; k < d; ++k)
      ds.X.at2(i, k) = static_cast<Real>(ctr[k] + noise_std * rng.normal());
  }
  ds.provenance = "blobs(n=" + std::to_string(n) + ",d=" + std::to_string(d) +
                  ",C=" + std::to_string(c) + ",sep=" + std::to_string(separation) +
                  ",noise=" + std::to_string(noise_std) + ",seed=" + std::to_string(seed) + ")";
  return ds;
}

/// Resample exactly round(p * n_train) train labels to a different class.
/// Val/test are untouched; flipped indices and pristine labels land in the
/// noise log.
template <class Real>
Dataset<Real> inject_label_noise(Dataset<Real> ds, double p, std::uint64_t seed) {
  if (p < 0.0 || p > 1.0) throw Error("label noise: fraction must be in [0,1]");
  const auto train_idx = ds.indices(Split::train);
  const std::size_t k = static_cast<std::size_t>(std::lround(p * static_cast<double>(train_idx.size())));
  if (k == 0) return ds;
  Rng rng = stream(seed, {stream_tag::kLabelNoise});
  const auto perm = rng.permutation(train_idx.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t idx = train_idx[perm[i]];
    const int old = ds.y[idx];
    // uniform over the other C-1 classes
    int nl = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(ds.class_count - 1));
    if (nl >= old) ++nl;
    ds.y[idx] = nl;
    ds.noise_log.emplace_back(idx, old);
  }
  std::sort(ds.noise_log.begin(), ds.noise_log.end());
  ds.provenance += "+label_noise(p=" + std::to_string(p) + ",seed=" + std::to_string(seed) +
                   ",flipped=" + std::to_string(k) + ")";
  return ds;
}

/// Plain-text matrix: one example per line, `features` reals followed by an
/// integer label. Values outside [0,1] are tolerated but counted.
template <class Real>
Dataset<Real> load_amat(const std::string& path, std::size_t features = 784,
                        std::size_t* out_of_range_count = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("amat: cannot open " + path);
  std::vector<Real> values;
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0, warn = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::vector<double> fields;
    double v;
    while (ls >> v) fields.push_back(v);
    if (fields.size() != features + 1)
      throw Error("amat: line " + std::to_string(line_no) + " has " +
                  std::to_string(fields.size()) + " fields, expected " +
                  std::to_string(features + 1));
    for (std::size_t i = 0; i < features; ++i) {
      if (fields[i] < 0.0 || fields[i] > 1.0) ++warn;
      values.push_back(static_cast<Real>(fields[i]));
    }
    const double lab = fields[features];
    if (std::fabs(lab - std::round(lab)) > 1e-9)
      throw Error("amat: line " + std::to_string(line_no) + " label is not an integer");
    labels.push_back(static_cast<int>(std::lround(lab)));
  }
  if (labels.empty()) throw Error("amat: " + path + " contains no examples");
  Dataset<Real> ds;
  ds.X = Tensor<Real>({labels.size(), features}, std::move(values));
  ds.y = std::move(labels);
  int maxl = 0;
  for (int l : ds.y) {
    if (l < 0) throw Error("amat: negative label in " + path);
    maxl = std::max(maxl, l);
  }
  ds.class_count = maxl + 1;
  ds.split.assign(ds.y.size(), Split::train);
  ds.provenance = "amat(" + path + ")";
  if (out_of_range_count) *out_of_range_count = warn;
  return ds;
}

/// Exact-round-trip exporter for the same format.
template <class Real>
void save_amat(const Dataset<Real>& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("amat: cannot write " + path);
  const std::size_t d = ds.dim();
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(ds.X.at2(i, j)));
      out << buf << ' ';
    }
    out << ds.y[i] << '\n';
  }
}

/// Non-overlapping mini-batches covering a set of indices; the permutation is
/// keyed by (seed, epoch, phase) so distinct phases draw independent covers.
struct BatchPlan {
  std::uint64_t epoch_seed = 0;
  std::size_t batch_size = 0;
  std::vector<std::size_t> perm;       // permuted positions into `pool`
  std::vector<std::size_t> cuts;       // batch boundaries, cuts[0] = 0
  std::vector<std::size_t> pool;       // the actual dataset indices

  std::size_t n_batches() const { return cuts.size() - 1; }

  std::vector<std::size_t> batch(std::size_t b) const {
    std::vector<std::size_t> out;
    for (std::size_t i = cuts[b]; i < cuts[b + 1]; ++i) out.push_back(pool[perm[i]]);
    return out;
  }
};

inline BatchPlan make_batch_plan(std::vector<std::size_t> pool, std::size_t batch_size,
                                 std::uint64_t seed, std::uint64_t epoch, int phase) {
  if (pool.empty()) throw Error("batching: empty index pool");
  if (batch_size < 1) throw Error("batching: batch size must be >= 1");
  BatchPlan plan;
  plan.epoch_seed = mix_key(mix_key(seed, epoch), static_cast<std::uint64_t>(phase));
  plan.batch_size = std::min(batch_size, pool.size());
  plan.pool = std::move(pool);
  Rng rng = stream(seed, {stream_tag::kBatch, epoch, static_cast<std::uint64_t>(phase)});
  plan.perm = rng.permutation(plan.pool.size());
  plan.cuts.push_back(0);
  std::size_t at = 0;
  while (at < plan.pool.size()) {
    at = std::min(at + plan.batch_size, plan.pool.size());
    plan.cuts.push_back(at);
  }
  if (debug_checks_enabled()) {
    std::vector<std::size_t> seen(plan.pool.size(), 0);
    for (std::size_t i = 0; i < plan.pool.size(); ++i) ++seen[plan.perm[i]];
    for (std::size_t s : seen)
      if (s != 1) throw Error("batching: permutation is not a partition");
  }
  return plan;
}

/// Assigns a validation split if the dataset has none, then covers the train
/// indices for the given epoch.
template <class Real>
BatchPlan split_and_batch(Dataset<Real>& ds, double val_fraction, std::size_t batch_size,
                          std::uint64_t epoch, std::uint64_t seed) {
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    throw Error("split: val_fraction must be in [0,1)");
  if (!ds.has_val() && val_fraction > 0.0) assign_splits(ds, val_fraction, 0.0, seed);
  return make_batch_plan(ds.indices(Split::train), batch_size, seed, epoch, /*phase=*/2);
}

}  // namespace friendly
