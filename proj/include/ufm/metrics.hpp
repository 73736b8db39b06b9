#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include "ufm/common.hpp"
#include "ufm/image.hpp"

namespace ufm {

/// Variance floor (m^2) used by every likelihood-based metric.
inline constexpr double kVarianceFloor = 1e-6;
/// Ratio threshold of the delta1 accuracy event.
inline constexpr double kDeltaThreshold = 1.25;

/// Pixels valid in prediction, variance and ground truth at once, pooled across frames.
struct PixelSet {
  std::vector<double> pred;
  std::vector<double> var;  // floored
  std::vector<double> gt;

  std::size_t size() const noexcept { return pred.size(); }
  bool empty() const noexcept { return pred.empty(); }

  void append(const DepthMap& p, const VarianceMap& v, const DepthMap& g) {
    require_same_shape(p, v, "variance map shape differs from prediction");
    require_same_shape(p, g, "ground truth shape differs from prediction");
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!valid_depth(p[i]) || !valid_depth(g[i]) || !std::isfinite(v[i])) continue;
      pred.push_back(p[i]);
      var.push_back(std::max<double>(v[i], kVarianceFloor));
      gt.push_back(g[i]);
    }
  }

  void append(double p, double v, double g) {
    pred.push_back(p);
    var.push_back(std::max(v, kVarianceFloor));
    gt.push_back(g);
  }
};

inline PixelSet make_pixel_set(const DepthMap& pred, const VarianceMap& var, const DepthMap& gt) {
  PixelSet s;
  s.append(pred, var, gt);
  return s;
}

namespace detail {

inline void require_pixels(std::size_t n, const char* what) {
  if (n == 0) throw Error(ErrorCode::NoValidPixels, what);
}

inline double gaussian_nll(double d, double v, double g) {
  const double r = d - g;
  return 0.5 * std::log(2.0 * std::numbers::pi * v) + r * r / (2.0 * v);
}

inline bool delta1_hit(double d, double g) { return std::max(d / g, g / d) < kDeltaThreshold; }

}  // namespace detail

/// Fraction of pixels valid in both maps with max(pred/gt, gt/pred) < 1.25.
inline double delta1_accuracy(const DepthMap& pred, const DepthMap& gt) {
  require_same_shape(pred, gt, "ground truth shape differs from prediction");
  std::size_t n = 0, hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!valid_depth(pred[i]) || !valid_depth(gt[i])) continue;
    ++n;
    hit += detail::delta1_hit(pred[i], gt[i]) ? 1 : 0;
  }
  detail::require_pixels(n, "delta1: no pixel valid in both maps");
  return static_cast<double>(hit) / static_cast<double>(n);
}

inline double delta1_accuracy(const PixelSet& s) {
  detail::require_pixels(s.size(), "delta1: empty pixel set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < s.size(); ++i) hit += detail::delta1_hit(s.pred[i], s.gt[i]) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(s.size());
}

/// Mean Gaussian negative log-likelihood in nats per pixel.
inline double nll(const PixelSet& s) {
  detail::require_pixels(s.size(), "nll: empty pixel set");
  double sum = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) sum += detail::gaussian_nll(s.pred[i], s.var[i], s.gt[i]);
  return sum / static_cast<double>(s.size());
}

inline double nll(const DepthMap& pred, const VarianceMap& var, const DepthMap& gt) {
  return nll(make_pixel_set(pred, var, gt));
}

/// (nominal, empirical) pairs in increasing nominal order.
using CalibrationCurve = std::vector<std::pair<double, double>>;

struct CalibrationResult {
  double scalar = 0.0;
  CalibrationCurve curve;
};

inline std::vector<double> default_quantile_levels() {
  std::vector<double> levels;
  for (int i = 1; i <= 19; ++i) levels.push_back(0.05 * i);
  return levels;
}

/// Quantile calibration: coverage of gt <= d + z(p) sqrt(v) against p.
inline CalibrationResult ece_quantile(const PixelSet& s, const std::vector<double>& levels = default_quantile_levels()) {
  detail::require_pixels(s.size(), "ece_quantile: empty pixel set");
  if (levels.empty()) throw Error(ErrorCode::ConfigError, "ece_quantile: no levels");
  const boost::math::normal_distribution<double> unit;
  // Standardised residuals are computed once; coverage at p is the share below z(p).
  std::vector<double> zres(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) zres[i] = (s.gt[i] - s.pred[i]) / std::sqrt(s.var[i]);
  std::sort(zres.begin(), zres.end());

  std::vector<double> sorted_levels = levels;
  std::sort(sorted_levels.begin(), sorted_levels.end());
  CalibrationResult out;
  double sum = 0.0;
  for (double p : sorted_levels) {
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::ConfigError, "ece_quantile: levels must lie in (0, 1)");
    const double z = boost::math::quantile(unit, p);
    const auto covered = std::upper_bound(zres.begin(), zres.end(), z) - zres.begin();
    const double c = static_cast<double>(covered) / static_cast<double>(s.size());
    out.curve.emplace_back(p, c);
    sum += std::abs(c - p);
  }
  out.scalar = sum / static_cast<double>(sorted_levels.size());
  return out;
}

inline CalibrationResult ece_quantile(const DepthMap& pred, const VarianceMap& var, const DepthMap& gt,
                                      const std::vector<double>& levels = default_quantile_levels()) {
  return ece_quantile(make_pixel_set(pred, var, gt), levels);
}

/// Predicted probability that a pixel is delta1-accurate under N(d, v).
inline double delta1_probability(double d, double v) {
  const boost::math::normal_distribution<double> unit;
  const double sd = std::sqrt(v);
  return boost::math::cdf(unit, (kDeltaThreshold * d - d) / sd) - boost::math::cdf(unit, (d / kDeltaThreshold - d) / sd);
}

/// delta1-event calibration: pixels binned by predicted probability q; the
/// curve holds (mean q, empirical accuracy) for every non-empty bin.
inline CalibrationResult ece_delta(const PixelSet& s, int bins = 10) {
  detail::require_pixels(s.size(), "ece_delta: empty pixel set");
  if (bins < 1) throw Error(ErrorCode::ConfigError, "ece_delta: bins must be >= 1");
  std::vector<double> qsum(bins, 0.0);
  std::vector<std::size_t> hits(bins, 0), count(bins, 0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double q = delta1_probability(s.pred[i], s.var[i]);
    const int b = std::clamp(static_cast<int>(q * bins), 0, bins - 1);
    qsum[b] += q;
    ++count[b];
    hits[b] += detail::delta1_hit(s.pred[i], s.gt[i]) ? 1 : 0;
  }
  CalibrationResult out;
  const double n = static_cast<double>(s.size());
  for (int b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double mean_q = qsum[b] / static_cast<double>(count[b]);
    const double acc = static_cast<double>(hits[b]) / static_cast<double>(count[b]);
    out.curve.emplace_back(mean_q, acc);
    out.scalar += static_cast<double>(count[b]) / n * std::abs(mean_q - acc);
  }
  return out;
}

inline CalibrationResult ece_delta(const DepthMap& pred, const VarianceMap& var, const DepthMap& gt, int bins = 10) {
  return ece_delta(make_pixel_set(pred, var, gt), bins);
}

/// Differential entropy of N(., v): 0.5 ln(2 pi e v).
inline double gaussian_entropy(double v) { return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * v); }

struct EntropyHistogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
  double mean = 0.0;
  std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }
};

/// Histogram of per-pixel entropies over [lo, hi]; NaN bounds take the data range.
/// Out-of-range values land in the end bins so the counts always sum to the pixel count.
inline EntropyHistogram entropy_histogram(const std::vector<double>& var, int bins = 20,
                                          double lo = std::numeric_limits<double>::quiet_NaN(),
                                          double hi = std::numeric_limits<double>::quiet_NaN()) {
  if (bins < 1) throw Error(ErrorCode::ConfigError, "entropy_histogram: bins must be >= 1");
  std::vector<double> h;
  h.reserve(var.size());
  for (double v : var) {
    if (std::isfinite(v)) h.push_back(gaussian_entropy(std::max(v, kVarianceFloor)));
  }
  detail::require_pixels(h.size(), "entropy_histogram: no valid variance");
  const auto [mn, mx] = std::minmax_element(h.begin(), h.end());
  if (std::isnan(lo)) lo = *mn;
  if (std::isnan(hi)) hi = *mx;
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  EntropyHistogram out;
  out.counts.assign(bins, 0);
  for (int b = 0; b <= bins; ++b) out.edges.push_back(lo + (hi - lo) * b / bins);
  double sum = 0.0;
  for (double e : h) {
    sum += e;
    const int b = std::clamp(static_cast<int>(std::floor((e - lo) / (hi - lo) * bins)), 0, bins - 1);
    ++out.counts[b];
  }
  out.mean = sum / static_cast<double>(h.size());
  return out;
}

inline EntropyHistogram entropy_histogram(const VarianceMap& var, int bins = 20,
                                          double lo = std::numeric_limits<double>::quiet_NaN(),
                                          double hi = std::numeric_limits<double>::quiet_NaN()) {
  return entropy_histogram(std::vector<double>(var.pixels().begin(), var.pixels().end()), bins, lo, hi);
}

struct ErrorGroup {
  double error_lo = 0.0;  // absolute error range covered by the group
  double error_hi = 0.0;
  double mean_error = 0.0;
  double mean_nll = 0.0;
  std::size_t count = 0;
};

/// Overconfidence analysis: keep the `confident_fraction` of pixels with the
/// smallest variance, sort them by absolute error and split into `groups`
/// near-equal groups (sizes differ by at most one); report the mean NLL of each.
inline std::vector<ErrorGroup> binned_error_vs_confidence(const PixelSet& s, int groups = 10,
                                                          double confident_fraction = 0.5) {
  detail::require_pixels(s.size(), "binned_error_vs_confidence: empty pixel set");
  if (groups < 1) throw Error(ErrorCode::ConfigError, "binned_error_vs_confidence: groups must be >= 1");
  if (!(confident_fraction > 0.0 && confident_fraction <= 1.0)) {
    throw Error(ErrorCode::ConfigError, "binned_error_vs_confidence: confident_fraction must be in (0, 1]");
  }
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s.var[a] < s.var[b]; });
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(confident_fraction * static_cast<double>(s.size()))));
  idx.resize(keep);
  auto err = [&](std::size_t i) { return std::abs(s.pred[i] - s.gt[i]); };
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return err(a) < err(b); });

  const std::size_t g = std::min<std::size_t>(groups, idx.size());
  std::vector<ErrorGroup> out(g);
  const std::size_t base = idx.size() / g, extra = idx.size() % g;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < g; ++k) {
    const std::size_t len = base + (k < extra ? 1 : 0);
    ErrorGroup& grp = out[k];
    grp.count = len;
    grp.error_lo = err(idx[pos]);
    grp.error_hi = err(idx[pos + len - 1]);
    for (std::size_t j = pos; j < pos + len; ++j) {
      grp.mean_error += err(idx[j]);
      grp.mean_nll += detail::gaussian_nll(s.pred[idx[j]], s.var[idx[j]], s.gt[idx[j]]);
    }
    grp.mean_error /= static_cast<double>(len);
    grp.mean_nll /= static_cast<double>(len);
    pos += len;
  }
  return out;
}

struct CalibrationReport {
  double delta1 = 0.0;
  double nll = 0.0;
  double ece_delta = 0.0;
  double ece_q = 0.0;
  CalibrationCurve curve_delta;
  CalibrationCurve curve_quantile;
  EntropyHistogram entropy;
  std::vector<ErrorGroup> error_groups;
  std::size_t pixel_count = 0;
};

inline CalibrationReport evaluate(const PixelSet& s) {
  detail::require_pixels(s.size(), "evaluate: empty pixel set");
  CalibrationReport r;
  r.pixel_count = s.size();
  r.delta1 = delta1_accuracy(s);
  r.nll = nll(s);
  const CalibrationResult d = ece_delta(s);
  const CalibrationResult q = ece_quantile(s);
  r.ece_delta = d.scalar;
  r.curve_delta = d.curve;
  r.ece_q = q.scalar;
  r.curve_quantile = q.curve;
  r.entropy = entropy_histogram(s.var);
  r.error_groups = binned_error_vs_confidence(s);
  return r;
}

inline nlohmann::json to_json(const CalibrationReport& r) {
  nlohmann::json j;
  j["pixel_count"] = r.pixel_count;
  j["delta1"] = r.delta1;
  j["nll"] = r.nll;
  j["ece_delta"] = r.ece_delta;
  j["ece_q"] = r.ece_q;
  j["curve_delta"] = r.curve_delta;
  j["curve_quantile"] = r.curve_quantile;
  j["entropy"] = {{"edges", r.entropy.edges}, {"counts", r.entropy.counts}, {"mean", r.entropy.mean}};
  nlohmann::json groups = nlohmann::json::array();
  for (const ErrorGroup& g : r.error_groups) {
    groups.push_back({{"error_lo", g.error_lo},
                      {"error_hi", g.error_hi},
                      {"mean_error", g.mean_error},
                      {"mean_nll", g.mean_nll},
                      {"count", g.count}});
  }
  j["error_groups"] = groups;
  return j;
}

/// Writes "nominal,empirical" lines with a header.
inline void write_curve_csv(const std::filesystem::path& path, const CalibrationCurve& curve) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.precision(17);
  out << "nominal,empirical\n";
  for (const auto& [nominal, empirical] : curve) out << nominal << ',' << empirical << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace ufm
