#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "friendly/common.hpp"
#include "friendly/data.hpp"
#include "friendly/engines.hpp"
#include "friendly/models.hpp"

namespace friendly {

namespace detail {

inline std::string g17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Epoch records streamed one JSON object per line; the first line is a
/// header object carrying the config hash and code version. Lines are
/// flushed as they are written so partial logs survive a diverged run.
class NdjsonWriter {
 public:
  NdjsonWriter(const std::string& path, const std::string& config_hash) : out_(path) {
    if (!out_) throw Error("ndjson: cannot write " + path);
    nlohmann::json header;
    header["config_hash"] = config_hash;
    header["version"] = kVersion;
    out_ << header.dump() << "\n" << std::flush;
  }

  void write(const EpochRecord& rec) {
    nlohmann::json j;
    j["gamma"] = rec.gamma;
    j["eta"] = rec.eta;
    j["train_loss"] = rec.train_loss;
    j["train_error"] = rec.train_error;
    j["val_error"] = rec.val_error;
    j["test_error"] = rec.test_error;
    j["mean_delta_sq"] = rec.mean_delta_sq;
    j["wall_ms"] = rec.wall_ms;
    out_ << j.dump() << "\n" << std::flush;
  }

 private:
  std::ofstream out_;
};

inline std::string csv_header_line(const std::string& config_hash) {
  return "# config_hash=" + config_hash + " version=" + std::string(kVersion);
}

/// One-row summary of a finished run.
template <class Real>
void write_run_summary_csv(const std::string& path, const std::string& config_hash,
                           const RunConfig& cfg, const TrainResult<Real>& result) {
  std::ofstream out(path);
  if (!out) throw Error("summary: cannot write " + path);
  out << csv_header_line(config_hash) << "\n";
  out << "regime,seed,epochs,best_gamma,best_val_error,best_test_error,final_train_loss\n";
  const double final_loss =
      result.records.empty() ? 0.0 : result.records.back().train_loss;
  out << regime_name(cfg.regime) << "," << cfg.seed << "," << result.records.size() << ","
      << result.best_gamma << "," << detail::g17(result.best_val_error) << ","
      << detail::g17(result.best_test_error) << "," << detail::g17(final_loss) << "\n";
}

struct GridRow {
  double eta_max = 0.0;
  int gamma_max_simp = 0;
  double beta = 0.0;
  std::vector<double> val_errors;   // per seed
  std::vector<double> test_errors;  // per seed
  bool failed = false;
  std::string note;
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Population standard deviation (divides by n, matching the header note).
inline double pop_std_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

inline void write_grid_summary_csv(const std::string& path, const std::string& config_hash,
                                   const std::vector<GridRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("grid summary: cannot write " + path);
  out << csv_header_line(config_hash) << " std=population\n";
  out << "eta_max,gamma_max_simp,beta,seeds,mean_val_error,std_val_error,"
         "mean_test_error,std_test_error,status\n";
  for (const auto& r : rows) {
    out << detail::g17(r.eta_max) << "," << r.gamma_max_simp << "," << detail::g17(r.beta)
        << "," << r.val_errors.size() << "," << detail::g17(mean_of(r.val_errors)) << ","
        << detail::g17(pop_std_of(r.val_errors)) << ","
        << detail::g17(mean_of(r.test_errors)) << ","
        << detail::g17(pop_std_of(r.test_errors)) << ","
        << (r.failed ? "failed:" + r.note : "ok") << "\n";
  }
}

/// Class map over a grid_res x grid_res lattice: x1, x2, predicted class,
/// max softmax probability. 2-d input models only.
template <class Real>
void export_boundary_csv(const std::string& path, const std::string& config_hash,
                         Classifier<Real>& model, std::size_t grid_res, double x_lo,
                         double x_hi, double y_lo, double y_hi) {
  if (model.spec().flat_dim() != 2)
    throw Error("boundary export: model input must be 2-d, got " +
                std::to_string(model.spec().flat_dim()));
  if (grid_res < 1) throw Error("boundary export: grid_res must be >= 1");
  std::ofstream out(path);
  if (!out) throw Error("boundary export: cannot write " + path);
  out << csv_header_line(config_hash) << "\n";
  out << "x1,x2,pred,prob\n";
  Tensor<Real> lattice({grid_res * grid_res, 2});
  std::size_t r = 0;
  for (std::size_t i = 0; i < grid_res; ++i)
    for (std::size_t j = 0; j < grid_res; ++j, ++r) {
      const double fx = grid_res > 1 ? static_cast<double>(j) / static_cast<double>(grid_res - 1) : 0.5;
      const double fy = grid_res > 1 ? static_cast<double>(i) / static_cast<double>(grid_res - 1) : 0.5;
      lattice.at2(r, 0) = static_cast<Real>(x_lo + fx * (x_hi - x_lo));
      lattice.at2(r, 1) = static_cast<Real>(y_lo + fy * (y_hi - y_lo));
    }
  const Tensor<Real> logits = model.logits_eval(lattice);
  const std::size_t c = logits.shape[1];
  for (r = 0; r < lattice.shape[0]; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits.at2(r, j) > logits.at2(r, best)) best = j;
    double mx = static_cast<double>(logits.at2(r, best));
    double z = 0;
    for (std::size_t j = 0; j < c; ++j)
      z += std::exp(static_cast<double>(logits.at2(r, j)) - mx);
    const double prob = 1.0 / z;
    out << detail::g17(static_cast<double>(lattice.at2(r, 0))) << ","
        << detail::g17(static_cast<double>(lattice.at2(r, 1))) << "," << best << ","
        << detail::g17(prob) << "\n";
  }
}

/// Training points under the auxiliary transform: orig, delta and simplified
/// coordinates plus the label. The simp columns are recomputed as orig+delta
/// so the emitted file is exact under that identity.
template <class Real>
void export_points_csv(const std::string& path, const std::string& config_hash,
                       Auxiliary<Real>* aux, const Dataset<Real>& ds) {
  if (ds.dim() != 2) throw Error("points export: dataset must be 2-d");
  std::ofstream out(path);
  if (!out) throw Error("points export: cannot write " + path);
  out << csv_header_line(config_hash) << "\n";
  out << "orig_x1,orig_x2,delta_x1,delta_x2,simp_x1,simp_x2,label\n";
  const auto idx = ds.indices(Split::train);
  const Tensor<Real> x = ds.gather(idx);
  const auto [xt_net, delta] = simplify(x, aux);
  (void)xt_net;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double ox1 = static_cast<double>(x.at2(i, 0));
    const double ox2 = static_cast<double>(x.at2(i, 1));
    const double d1 = static_cast<double>(delta.at2(i, 0));
    const double d2 = static_cast<double>(delta.at2(i, 1));
    out << detail::g17(ox1) << "," << detail::g17(ox2) << "," << detail::g17(d1) << ","
        << detail::g17(d2) << "," << detail::g17(ox1 + d1) << "," << detail::g17(ox2 + d2)
        << "," << ds.y[idx[i]] << "\n";
  }
}

/// For k sampled examples: original features, raw delta, per-example min-max
/// normalized delta, and the simplified example. Ragged matrix layout, one
/// quantity per line.
template <class Real>
void export_perturbations_csv(const std::string& path, const std::string& config_hash,
                              Auxiliary<Real>& aux, const Dataset<Real>& ds,
                              std::size_t k, std::uint64_t seed,
                              bool* clamped = nullptr) {
  std::ofstream out(path);
  if (!out) throw Error("perturbation export: cannot write " + path);
  out << csv_header_line(config_hash) << "\n";
  out << "id,label,quantity,values...\n";
  const auto idx = ds.indices(Split::train);
  if (clamped) *clamped = k > idx.size();
  k = std::min(k, idx.size());
  if (k == 0) return;
  Rng rng = stream(seed, {stream_tag::kData, 0x77});
  auto perm = rng.permutation(idx.size());
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < k; ++i) chosen.push_back(idx[perm[i]]);
  std::sort(chosen.begin(), chosen.end());
  const Tensor<Real> x = ds.gather(chosen);
  const auto [xt, delta] = simplify(x, &aux);
  const std::size_t d = ds.dim();
  auto emit_row = [&](std::size_t i, const char* tag, auto value_at) {
    out << chosen[i] << "," << ds.y[chosen[i]] << "," << tag;
    for (std::size_t j = 0; j < d; ++j) out << "," << detail::g17(value_at(j));
    out << "\n";
  };
  for (std::size_t i = 0; i < k; ++i) {
    double lo = static_cast<double>(delta.at2(i, 0)), hi = lo;
    for (std::size_t j = 1; j < d; ++j) {
      const double v = static_cast<double>(delta.at2(i, j));
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double range = hi - lo;
    emit_row(i, "x", [&](std::size_t j) { return static_cast<double>(x.at2(i, j)); });
    emit_row(i, "delta", [&](std::size_t j) { return static_cast<double>(delta.at2(i, j)); });
    emit_row(i, "delta_norm", [&](std::size_t j) {
      return range > 0.0 ? (static_cast<double>(delta.at2(i, j)) - lo) / range : 0.0;
    });
    // simplified example recomputed as x+delta, exact under the export identity
    emit_row(i, "xtilde", [&](std::size_t j) {
      return static_cast<double>(x.at2(i, j)) + static_cast<double>(delta.at2(i, j));
    });
  }
}

}  // namespace friendly
