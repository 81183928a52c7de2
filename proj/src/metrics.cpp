#include "sdr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <tuple>

namespace sdr {
namespace {

void check_same(const Image& a, const Image& b) {
  if (a.n() != b.n()) throw std::invalid_argument("images differ in size");
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const int r = size / 2;
  double sum = 0.0;
  for (int k = 0; k < size; ++k) {
    g[static_cast<std::size_t>(k)] = std::exp(-0.5 * (k - r) * (k - r) / (sigma * sigma));
    sum += g[static_cast<std::size_t>(k)];
  }
  for (auto& v : g) v /= sum;
  return g;
}

/// Separable periodic filtering of a row-major n x n field.
std::vector<double> blur(const std::vector<double>& f, int n, const std::vector<double>& g) {
  const int r = static_cast<int>(g.size()) / 2;
  std::vector<double> tmp(f.size(), 0.0), out(f.size(), 0.0);
  auto wrap = [n](int v) { return ((v % n) + n) % n; };
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) s += g[static_cast<std::size_t>(k + r)] * f[static_cast<std::size_t>(y * n + wrap(x + k))];
      tmp[static_cast<std::size_t>(y * n + x)] = s;
    }
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) s += g[static_cast<std::size_t>(k + r)] * tmp[static_cast<std::size_t>(wrap(y + k) * n + x)];
      out[static_cast<std::size_t>(y * n + x)] = s;
    }
  return out;
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::pair<double, double> mean_and_std(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  if (std::any_of(v.begin(), v.end(), [](double x) { return std::isinf(x); })) {
    return {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::quiet_NaN()};
  }
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

}  // namespace

double mse(const Image& pred, const Image& gt) {
  check_same(pred, gt);
  double s = 0.0;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    const double d = pred[k] - gt[k];
    s += d * d;
  }
  return s / static_cast<double>(gt.size());
}

double psnr(const Image& pred, const Image& gt, double peak) {
  if (!(peak > 0.0)) throw std::invalid_argument("PSNR peak must be positive");
  const double m = mse(pred, gt);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

double psnr_peak(const Image& gt, bool* out_of_range) {
  const auto [lo, hi] = std::minmax_element(gt.data().begin(), gt.data().end());
  const bool outside = *lo < 0.0 || *hi > 1.0;
  if (out_of_range) *out_of_range = outside;
  if (!outside) return 1.0;
  return *hi > *lo ? *hi - *lo : 1.0;
}

double ssim(const Image& pred, const Image& gt, const SsimParams& params) {
  check_same(pred, gt);
  if (params.window < 1 || params.window % 2 == 0) throw std::invalid_argument("SSIM window must be odd");
  const int n = gt.n();
  const auto g = gaussian_window(params.window, params.sigma);
  const std::vector<double> x(pred.data().begin(), pred.data().end());
  const std::vector<double> y(gt.data().begin(), gt.data().end());
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    xx[k] = x[k] * x[k];
    yy[k] = y[k] * y[k];
    xy[k] = x[k] * y[k];
  }
  const auto mx = blur(x, n, g), my = blur(y, n, g);
  const auto sxx = blur(xx, n, g), syy = blur(yy, n, g), sxy = blur(xy, n, g);
  const double c1 = (params.k1 * params.dynamic_range) * (params.k1 * params.dynamic_range);
  const double c2 = (params.k2 * params.dynamic_range) * (params.k2 * params.dynamic_range);
  double total = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double vx = sxx[k] - mx[k] * mx[k];
    const double vy = syy[k] - my[k] * my[k];
    const double cov = sxy[k] - mx[k] * my[k];
    total += ((2 * mx[k] * my[k] + c1) * (2 * cov + c2)) / ((mx[k] * mx[k] + my[k] * my[k] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(x.size());
}

Image bilinear_upsample(const Image& observed, const PixelMask& omega) {
  const int n = observed.n();
  if (omega.n() != n) throw DimensionMismatch();
  if (omega != odd_lattice_mask(n)) throw std::invalid_argument("bilinear_upsample requires the odd-odd sampling lattice");
  Image out(n);
  // (odd, odd) positions are measured; the others sit midway between two or
  // four measured neighbours.
  for (int i2 = 1; i2 <= n; ++i2) {
    for (int i1 = 1; i1 <= n; ++i1) {
      const bool h_on = i1 % 2 == 1, v_on = i2 % 2 == 1;
      double v;
      if (h_on && v_on) v = observed.at(i1, i2);
      else if (v_on) v = 0.5 * (observed.at(i1 - 1, i2) + observed.at(i1 + 1, i2));
      else if (h_on) v = 0.5 * (observed.at(i1, i2 - 1) + observed.at(i1, i2 + 1));
      else
        v = 0.25 * (observed.at(i1 - 1, i2 - 1) + observed.at(i1 + 1, i2 - 1) + observed.at(i1 - 1, i2 + 1) +
                    observed.at(i1 + 1, i2 + 1));
      out.set(i1, i2, v);
    }
  }
  return out;
}

MetricReport evaluate(const std::vector<Method>& methods, const std::vector<Image>& testset, const PixelMask& omega) {
  if (testset.empty()) throw std::invalid_argument("test set is empty");
  MetricReport report;
  std::vector<double> peaks;
  for (std::size_t i = 0; i < testset.size(); ++i) {
    bool outside = false;
    peaks.push_back(psnr_peak(testset[i], &outside));
    if (outside) {
      report.warnings.push_back("test image " + std::to_string(i) + " lies outside [0, 1]; PSNR uses its observed range");
    }
  }
  for (const auto& m : methods) {
    MethodReport r;
    r.label = m.label;
    for (std::size_t i = 0; i < testset.size(); ++i) {
      try {
        const Image pred = m.restore(apply_mask(testset[i], omega));
        if (pred.n() != testset[i].n()) throw std::runtime_error("restored image has the wrong size");
        r.per_image.push_back({mse(pred, testset[i]), ssim(pred, testset[i]), psnr(pred, testset[i], peaks[i])});
      } catch (const std::exception& e) {
        r.failures.push_back({i, e.what()});
      }
    }
    std::vector<double> a, b, c;
    for (const auto& im : r.per_image) {
      a.push_back(im.mse);
      b.push_back(im.ssim);
      c.push_back(im.psnr);
    }
    std::tie(r.mse_mean, r.mse_std) = mean_and_std(a);
    std::tie(r.ssim_mean, r.ssim_std) = mean_and_std(b);
    std::tie(r.psnr_mean, r.psnr_std) = mean_and_std(c);
    report.methods.push_back(std::move(r));
  }
  return report;
}

std::string MetricReport::to_csv() const {
  std::string s = "label,mse_mean,mse_std,ssim_mean,ssim_std,psnr_mean,psnr_std\n";
  for (const auto& m : methods) {
    s += m.label + "," + fmt(m.mse_mean) + "," + fmt(m.mse_std) + "," + fmt(m.ssim_mean) + "," + fmt(m.ssim_std) +
         "," + fmt(m.psnr_mean) + "," + fmt(m.psnr_std) + "\n";
  }
  return s;
}

}  // namespace sdr
