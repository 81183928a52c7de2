#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sdr/sampling.hpp"

namespace sdr {

double mse(const Image& pred, const Image& gt);

/// 10 log10(peak^2 / mse); +infinity when mse is 0.
double psnr(const Image& pred, const Image& gt, double peak = 1.0);

/// 1 for data inside [0, 1], else the observed range max(gt) - min(gt).
double psnr_peak(const Image& gt, bool* out_of_range = nullptr);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean local SSIM with a Gaussian window wrapped periodically.
double ssim(const Image& pred, const Image& gt, const SsimParams& params = {});

/// Fills the pixels off the odd-odd lattice by periodic bilinear
/// interpolation of the observed lattice values.
Image bilinear_upsample(const Image& observed, const PixelMask& omega);

struct ImageMetrics {
  double mse = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
};

struct MethodFailure {
  std::size_t image = 0;
  std::string message;
};

struct MethodReport {
  std::string label;
  std::vector<ImageMetrics> per_image;
  std::vector<MethodFailure> failures;
  double mse_mean = 0.0, mse_std = 0.0;
  double ssim_mean = 0.0, ssim_std = 0.0;
  /// Infinite when any image is restored exactly; the spread is then NaN.
  double psnr_mean = 0.0, psnr_std = 0.0;
};

struct MetricReport {
  std::vector<MethodReport> methods;
  std::vector<std::string> warnings;

  std::string to_csv() const;
};

/// A restorer maps the Ω-masked (zero-filled) observation to a full image.
struct Method {
  std::string label;
  std::function<Image(const Image& observed)> restore;
};

/// Evaluates every method on every test image in order. A restorer that
/// throws is recorded as a failure for that image and left out of the
/// aggregates.
MetricReport evaluate(const std::vector<Method>& methods, const std::vector<Image>& testset, const PixelMask& omega);

}  // namespace sdr
