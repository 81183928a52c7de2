#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdr/layers.hpp"
#include "sdr/sampling.hpp"

namespace sdr {

/// Three resolution levels, stride 2 each, so the network commutes with
/// translations by multiples of 8 pixels.
struct UNetConfig {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t base_channels = 32;
  std::size_t depth = 3;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  double dropout_p = 0.5;

  void validate() const;
  /// Product of the per-level strides.
  std::size_t overall_stride() const;

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

struct LayerDesc {
  std::string name;
  ad::ConvSpec spec;
  bool relu = true;
};

/// Layer list in execution order: encoder, bottleneck, decoder, 1x1 output.
std::vector<LayerDesc> unet_topology(const UNetConfig& cfg);

/// Closed-form parameter count of the topology.
std::size_t unet_parameter_count(const UNetConfig& cfg);

/// Text descriptor from which the topology can be rebuilt.
std::string describe_topology(const UNetConfig& cfg);
UNetConfig parse_topology(const std::string& descriptor);

template <typename T>
class UNet {
 public:
  /// Weights and biases uniform in +-1/sqrt(fan_in), seeded.
  UNet(const UNetConfig& cfg, std::uint64_t seed);
  static UNet zeros(const UNetConfig& cfg);

  const UNetConfig& config() const { return cfg_; }
  const std::vector<LayerDesc>& layers() const { return layers_; }
  std::size_t conv_layer_count() const { return layers_.size(); }

  std::vector<ad::Tensor<T>>& parameters() { return params_; }
  const std::vector<ad::Tensor<T>>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::size_t parameter_count() const;
  void zero_grad();

  ad::Mode mode() const { return mode_; }
  void set_mode(ad::Mode m) { mode_ = m; }

  /// x: [B, in_channels, H, W] with H, W divisible by 8.
  ad::Tensor<T> forward(const ad::Tensor<T>& x, const ad::DropoutKey& key = {}) const;

  template <typename U>
  UNet<U> cast() const {
    UNet<U> out = UNet<U>::zeros(cfg_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto dst = out.parameters()[k].mutable_values();
      auto src = params_[k].values();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<U>(src[i]);
    }
    out.set_mode(mode_);
    return out;
  }

  /// Replaces all parameter values (same order and sizes).
  void load_values(const std::vector<std::vector<T>>& values);

 private:
  explicit UNet(const UNetConfig& cfg);
  const ad::Tensor<T>& weight(std::size_t layer) const { return params_[2 * layer]; }
  const ad::Tensor<T>& bias(std::size_t layer) const { return params_[2 * layer + 1]; }

  UNetConfig cfg_;
  std::vector<LayerDesc> layers_;
  std::vector<std::string> names_;
  std::vector<ad::Tensor<T>> params_;
  ad::Mode mode_ = ad::Mode::eval;
};

/// [B, 1, n, n] tensor from images; row index is i2-1, column index i1-1.
template <typename T>
ad::Tensor<T> images_to_tensor(std::span<const Image> images);

template <typename T>
std::vector<Image> tensor_to_images(const ad::Tensor<T>& t);

/// Applies apply_shift's convention to every [H, W] plane.
template <typename T>
ad::Tensor<T> shift_tensor(const ad::Tensor<T>& t, const Shift& s);

template <typename T>
Image restore(const UNet<T>& model, const Image& observed);

struct ShiftError {
  Shift shift;
  double max_rel_error = 0.0;
  /// Both components multiples of the overall stride.
  bool guaranteed = false;
  /// Set only for guaranteed shifts.
  std::optional<bool> pass;
};

struct EquivarianceReport {
  std::vector<ShiftError> shifts;
  double tolerance = 0.0;
  bool all_guaranteed_pass() const;
};

/// Eval-mode check of forward(shift(x)) == shift(forward(x)) on random
/// uniform inputs. Tolerance 1e-10 for double, 1e-5 for float.
template <typename T>
EquivarianceReport check_equivariance(const UNet<T>& model, int n, int trials, const std::vector<Shift>& shifts,
                                      std::uint64_t seed);

}  // namespace sdr
