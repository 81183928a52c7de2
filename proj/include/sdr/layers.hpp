#pragma once

#include <cstdint>
#include <vector>

#include "sdr/tensor.hpp"

namespace sdr::ad {

/// Convolution geometry. Padding is always circular with (kernel-1)/2
/// pixels on each side, so stride-1 layers preserve the spatial size.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool transposed = false;

  void validate() const;
  /// Weight layout: [out, in, k, k] for convolutions, [in, out, k, k] for
  /// transposed convolutions.
  Shape weight_shape() const;
  std::size_t fan_in() const;
};

enum class Mode { train, eval };

/// Identifies one dropout application; the channel mask is a pure function
/// of this key, so runs are reproducible regardless of execution order.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t batch = 0;
  std::uint64_t layer = 0;
};

/// Cross-correlation with periodic boundary wrap.
/// input [B, Cin, H, W] -> [B, Cout, H/stride, W/stride].
template <typename T>
Tensor<T> conv2d_circular(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                          const ConvSpec& spec);

/// Exact adjoint of conv2d_circular (plus bias).
/// input [B, Cin, H, W] -> [B, Cout, H*stride, W*stride].
template <typename T>
Tensor<T> conv_transpose2d_circular(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                                    const ConvSpec& spec);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

/// Zeroes whole (batch, channel) slices with probability p and rescales the
/// survivors by 1/(1-p). Identity in eval mode.
template <typename T>
Tensor<T> channel_dropout(const Tensor<T>& input, double p, Mode mode, const DropoutKey& key);

/// Whether channel c of batch element b survives dropout for this key.
bool dropout_keeps(const DropoutKey& key, std::size_t b, std::size_t c, double p);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// mean over batch of sum_i mask_i (pred_i - target_i)^2. The mask has
/// shape [H, W] and is broadcast over batch and channels.
template <typename T>
Tensor<T> masked_mse(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask);

/// sum_k w_k x_k; a scalar probe used by gradient checks.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, const Tensor<T>& w);

/// Records ReLU activation patterns while alive (one per thread), so a
/// finite-difference probe can tell when a perturbation crossed a kink.
class ReluPatternRecorder {
 public:
  ReluPatternRecorder();
  ~ReluPatternRecorder();
  ReluPatternRecorder(const ReluPatternRecorder&) = delete;
  ReluPatternRecorder& operator=(const ReluPatternRecorder&) = delete;

  std::vector<bool> take();
  static void record(bool active);

 private:
  std::vector<bool> pattern_;
  ReluPatternRecorder* previous_;
};

}  // namespace sdr::ad
