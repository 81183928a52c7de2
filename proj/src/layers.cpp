#include "sdr/layers.hpp"

#include <Eigen/Core>
#include <algorithm>

#include "sdr/rng.hpp"

namespace sdr::ad {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Every buffer handed to Eigen is allocated with the same alignment. Eigen
// peels unaligned heads off its vector loops, so operands with varying
// alignment would change the rounding from run to run.
template <typename T>
using Buf = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
Buf<T> aligned_copy(std::span<const T> src) {
  return Buf<T>(src.begin(), src.end());
}

template <typename T>
void add_into(const RowMat<T>& src, std::vector<T>& dst) {
  const T* s = src.data();
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += s[k];
}

// Sliding-window geometry over a periodic input. Output pixel (oy, ox) with
// kernel tap (ky, kx) reads input ((oy*s + ky - pad) mod H, (ox*s + kx - pad) mod W).
struct Geometry {
  std::size_t batch, channels, in_h, in_w, out_h, out_w, kernel;
  std::vector<std::size_t> row_src;  // [kernel * out_h]
  std::vector<std::size_t> col_src;  // [kernel * out_w]

  Geometry(std::size_t b, std::size_t c, std::size_t ih, std::size_t iw, std::size_t stride, std::size_t k)
      : batch(b), channels(c), in_h(ih), in_w(iw), out_h(ih / stride), out_w(iw / stride), kernel(k) {
    const auto pad = static_cast<long>((k - 1) / 2);
    row_src.resize(k * out_h);
    col_src.resize(k * out_w);
    auto wrap = [](long i, std::size_t n) {
      const long r = i % static_cast<long>(n);
      return static_cast<std::size_t>(r < 0 ? r + static_cast<long>(n) : r);
    };
    for (std::size_t t = 0; t < k; ++t) {
      for (std::size_t o = 0; o < out_h; ++o)
        row_src[t * out_h + o] = wrap(static_cast<long>(o * stride + t) - pad, in_h);
      for (std::size_t o = 0; o < out_w; ++o)
        col_src[t * out_w + o] = wrap(static_cast<long>(o * stride + t) - pad, in_w);
    }
  }

  std::size_t rows() const { return channels * kernel * kernel; }
  std::size_t cols() const { return batch * out_h * out_w; }

  template <typename T>
  void im2col(const T* src, T* col) const {
    const std::size_t n = cols();
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t ky = 0; ky < kernel; ++ky) {
        for (std::size_t kx = 0; kx < kernel; ++kx) {
          T* dst = col + ((c * kernel + ky) * kernel + kx) * n;
          const std::size_t* cs = &col_src[kx * out_w];
          for (std::size_t b = 0; b < batch; ++b) {
            const T* plane = src + (b * channels + c) * in_h * in_w;
            for (std::size_t oy = 0; oy < out_h; ++oy) {
              const T* srow = plane + row_src[ky * out_h + oy] * in_w;
              for (std::size_t ox = 0; ox < out_w; ++ox) *dst++ = srow[cs[ox]];
            }
          }
        }
      }
    }
  }

  template <typename T>
  void col2im_add(const T* col, T* dst) const {
    const std::size_t n = cols();
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t ky = 0; ky < kernel; ++ky) {
        for (std::size_t kx = 0; kx < kernel; ++kx) {
          const T* src = col + ((c * kernel + ky) * kernel + kx) * n;
          const std::size_t* cs = &col_src[kx * out_w];
          for (std::size_t b = 0; b < batch; ++b) {
            T* plane = dst + (b * channels + c) * in_h * in_w;
            for (std::size_t oy = 0; oy < out_h; ++oy) {
              T* drow = plane + row_src[ky * out_h + oy] * in_w;
              for (std::size_t ox = 0; ox < out_w; ++ox) drow[cs[ox]] += *src++;
            }
          }
        }
      }
    }
  }
};

// [B, C, P] <-> (C x B*P) matrix layout.
template <typename T>
Buf<T> to_channel_major(std::span<const T> src, std::size_t b, std::size_t c, std::size_t p) {
  Buf<T> out(src.size());
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ci = 0; ci < c; ++ci)
      std::copy_n(src.data() + (bi * c + ci) * p, p, out.data() + ci * b * p + bi * p);
  return out;
}

template <typename T>
void add_from_channel_major(const T* mat, std::size_t b, std::size_t c, std::size_t p, T* dst) {
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const T* s = mat + ci * b * p + bi * p;
      T* d = dst + (bi * c + ci) * p;
      for (std::size_t k = 0; k < p; ++k) d[k] += s[k];
    }
}

template <typename T>
void check_conv_args(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, const ConvSpec& spec) {
  spec.validate();
  if (input.rank() != 4) throw ShapeError("convolution input must be [B, C, H, W], got " + shape_str(input.shape()));
  if (input.dim(1) != spec.in_channels) {
    throw ShapeError("convolution expects " + std::to_string(spec.in_channels) + " input channels, got " +
                     std::to_string(input.dim(1)));
  }
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError("weight shape " + shape_str(weight.shape()) + " does not match " +
                     shape_str(spec.weight_shape()));
  }
  if (bias.shape() != Shape{spec.out_channels}) throw ShapeError("bias must have shape [out_channels]");
}

thread_local ReluPatternRecorder* active_recorder = nullptr;

}  // namespace

void ConvSpec::validate() const {
  if (kernel == 0 || kernel % 2 == 0) throw ShapeError("kernel size must be odd");
  if (stride == 0) throw ShapeError("stride must be positive");
  if (in_channels == 0 || out_channels == 0) throw ShapeError("channel counts must be positive");
}

Shape ConvSpec::weight_shape() const {
  return transposed ? Shape{in_channels, out_channels, kernel, kernel} : Shape{out_channels, in_channels, kernel, kernel};
}

std::size_t ConvSpec::fan_in() const { return (transposed ? out_channels : in_channels) * kernel * kernel; }

template <typename T>
Tensor<T> conv2d_circular(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                          const ConvSpec& spec) {
  check_conv_args(input, weight, bias, spec);
  if (spec.transposed) throw ShapeError("conv2d_circular called with a transposed spec");
  const std::size_t B = input.dim(0), H = input.dim(2), W = input.dim(3);
  if (H % spec.stride != 0 || W % spec.stride != 0) {
    throw ShapeError("stride " + std::to_string(spec.stride) + " does not divide spatial size " + std::to_string(H) +
                     "x" + std::to_string(W));
  }
  const Geometry g(B, spec.in_channels, H, W, spec.stride, spec.kernel);
  const std::size_t Cout = spec.out_channels, K = g.rows(), N = g.cols(), P = g.out_h * g.out_w;

  Buf<T> col(K * N);
  g.im2col(input.values().data(), col.data());
  const auto wbuf = aligned_copy(weight.values());
  RowMat<T> out_mat(Cout, N);
  out_mat.noalias() = ConstMatMap<T>(wbuf.data(), Cout, K) * ConstMatMap<T>(col.data(), K, N);

  std::vector<T> out(B * Cout * P, T{0});
  add_from_channel_major(out_mat.data(), B, Cout, P, out.data());
  const auto bv = bias.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < Cout; ++c) {
      T* d = out.data() + (b * Cout + c) * P;
      for (std::size_t k = 0; k < P; ++k) d[k] += bv[c];
    }

  auto backward = [g, Cout, P](typename Tensor<T>::Node& self) {
    auto& in = *self.parents[0];
    auto& w = *self.parents[1];
    auto& bs = *self.parents[2];
    const std::size_t K = g.rows(), N = g.cols();
    const auto gmat = to_channel_major<T>(self.grad, g.batch, Cout, P);
    ConstMatMap<T> G(gmat.data(), Cout, N);
    if (w.requires_grad) {
      Buf<T> col(K * N);
      g.im2col(in.value.data(), col.data());
      RowMat<T> dw(Cout, K);
      dw.noalias() = G * ConstMatMap<T>(col.data(), K, N).transpose();
      add_into(dw, w.grad_buffer());
    }
    if (bs.requires_grad) {
      auto& db = bs.grad_buffer();
      for (std::size_t c = 0; c < Cout; ++c) {
        T acc{0};
        for (std::size_t k = 0; k < N; ++k) acc += gmat[c * N + k];
        db[c] += acc;
      }
    }
    if (in.requires_grad) {
      const auto wbuf = aligned_copy<T>(w.value);
      RowMat<T> dcol(K, N);
      dcol.noalias() = ConstMatMap<T>(wbuf.data(), Cout, K).transpose() * G;
      g.col2im_add(dcol.data(), in.grad_buffer().data());
    }
  };
  return Tensor<T>::from_op({B, Cout, g.out_h, g.out_w}, std::move(out), {input, weight, bias}, std::move(backward));
}

template <typename T>
Tensor<T> conv_transpose2d_circular(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                                    const ConvSpec& spec) {
  check_conv_args(input, weight, bias, spec);
  if (!spec.transposed) throw ShapeError("conv_transpose2d_circular needs a transposed spec");
  const std::size_t B = input.dim(0), H = input.dim(2), W = input.dim(3);
  const std::size_t Cin = spec.in_channels, Cout = spec.out_channels, s = spec.stride;
  // Geometry of the forward convolution this layer is the adjoint of:
  // high-resolution Cout-channel input, low-resolution Cin-channel output.
  const Geometry g(B, Cout, H * s, W * s, s, spec.kernel);
  const std::size_t K = g.rows(), N = g.cols(), P = H * W, Phi = H * s * W * s;

  const auto ymat = to_channel_major<T>(input.values(), B, Cin, P);
  RowMat<T> colT(K, N);
  const auto wbuf = aligned_copy(weight.values());
  colT.noalias() = ConstMatMap<T>(wbuf.data(), Cin, K).transpose() * ConstMatMap<T>(ymat.data(), Cin, N);
  std::vector<T> out(B * Cout * Phi, T{0});
  g.col2im_add(colT.data(), out.data());
  const auto bv = bias.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < Cout; ++c) {
      T* d = out.data() + (b * Cout + c) * Phi;
      for (std::size_t k = 0; k < Phi; ++k) d[k] += bv[c];
    }

  auto backward = [g, Cin, Cout, P, Phi](typename Tensor<T>::Node& self) {
    auto& in = *self.parents[0];
    auto& w = *self.parents[1];
    auto& bs = *self.parents[2];
    const std::size_t K = g.rows(), N = g.cols();
    Buf<T> gcol(K * N);
    g.im2col(self.grad.data(), gcol.data());
    ConstMatMap<T> GC(gcol.data(), K, N);
    if (w.requires_grad) {
      const auto ymat = to_channel_major<T>(in.value, g.batch, Cin, P);
      RowMat<T> dw(Cin, K);
      dw.noalias() = ConstMatMap<T>(ymat.data(), Cin, N) * GC.transpose();
      add_into(dw, w.grad_buffer());
    }
    if (bs.requires_grad) {
      auto& db = bs.grad_buffer();
      for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t c = 0; c < Cout; ++c) {
          const T* src = self.grad.data() + (b * Cout + c) * Phi;
          T acc{0};
          for (std::size_t k = 0; k < Phi; ++k) acc += src[k];
          db[c] += acc;
        }
    }
    if (in.requires_grad) {
      const auto wbuf = aligned_copy<T>(w.value);
      RowMat<T> dy(Cin, N);
      dy.noalias() = ConstMatMap<T>(wbuf.data(), Cin, K) * GC;
      add_from_channel_major(dy.data(), g.batch, Cin, P, in.grad_buffer().data());
    }
  };
  return Tensor<T>::from_op({B, Cout, H * s, W * s}, std::move(out), {input, weight, bias}, std::move(backward));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  const auto x = input.values();
  std::vector<T> out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] > T{0} ? x[k] : T{0};
  if (active_recorder != nullptr) {
    for (std::size_t k = 0; k < x.size(); ++k) ReluPatternRecorder::record(x[k] > T{0});
  }
  auto backward = [](typename Tensor<T>::Node& self) {
    auto& in = *self.parents[0];
    auto& gin = in.grad_buffer();
    for (std::size_t k = 0; k < gin.size(); ++k) {
      if (in.value[k] > T{0}) gin[k] += self.grad[k];
    }
  };
  return Tensor<T>::from_op(input.shape(), std::move(out), {input}, std::move(backward));
}

bool dropout_keeps(const DropoutKey& key, std::size_t b, std::size_t c, double p) {
  std::uint64_t h = hash_combine(key.seed, key.epoch);
  h = hash_combine(h, key.batch);
  h = hash_combine(h, key.layer);
  h = hash_combine(h, b);
  h = hash_combine(h, c);
  return to_unit(h) >= p;
}

template <typename T>
Tensor<T> channel_dropout(const Tensor<T>& input, double p, Mode mode, const DropoutKey& key) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout probability must lie in [0, 1)");
  if (mode == Mode::eval || p == 0.0) return input;
  if (input.rank() != 4) throw ShapeError("channel dropout expects [B, C, H, W]");
  const std::size_t B = input.dim(0), C = input.dim(1), P = input.dim(2) * input.dim(3);
  std::vector<T> scale(B * C);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      scale[b * C + c] = dropout_keeps(key, b, c, p) ? static_cast<T>(1.0 / (1.0 - p)) : T{0};
  const auto x = input.values();
  std::vector<T> out(x.size());
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t k = 0; k < P; ++k) out[bc * P + k] = x[bc * P + k] * scale[bc];
  auto backward = [scale = std::move(scale), P](typename Tensor<T>::Node& self) {
    auto& gin = self.parents[0]->grad_buffer();
    for (std::size_t bc = 0; bc < scale.size(); ++bc)
      for (std::size_t k = 0; k < P; ++k) gin[bc * P + k] += self.grad[bc * P + k] * scale[bc];
  };
  return Tensor<T>::from_op(input.shape(), std::move(out), {input}, std::move(backward));
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4) throw ShapeError("concat_channels expects [B, C, H, W] tensors");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), P = a.dim(2) * a.dim(3);
  std::vector<T> out(B * (Ca + Cb) * P);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t bi = 0; bi < B; ++bi) {
    std::copy_n(av.data() + bi * Ca * P, Ca * P, out.data() + bi * (Ca + Cb) * P);
    std::copy_n(bv.data() + bi * Cb * P, Cb * P, out.data() + bi * (Ca + Cb) * P + Ca * P);
  }
  auto backward = [B, Ca, Cb, P](typename Tensor<T>::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t bi = 0; bi < B; ++bi) {
      const T* g = self.grad.data() + bi * (Ca + Cb) * P;
      if (pa.requires_grad) {
        T* d = pa.grad_buffer().data() + bi * Ca * P;
        for (std::size_t k = 0; k < Ca * P; ++k) d[k] += g[k];
      }
      if (pb.requires_grad) {
        T* d = pb.grad_buffer().data() + bi * Cb * P;
        for (std::size_t k = 0; k < Cb * P; ++k) d[k] += g[Ca * P + k];
      }
    }
  };
  return Tensor<T>::from_op({B, Ca + Cb, a.dim(2), a.dim(3)}, std::move(out), {a, b}, std::move(backward));
}

template <typename T>
Tensor<T> masked_mse(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("masked_mse: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  }
  if (pred.rank() != 4 || mask.rank() != 2 || mask.dim(0) != pred.dim(2) || mask.dim(1) != pred.dim(3)) {
    throw ShapeError("masked_mse: mask must be [H, W] matching the prediction");
  }
  const std::size_t B = pred.dim(0), P = mask.size(), planes = pred.size() / P;
  const auto pv = pred.values();
  const auto tv = target.values();
  const auto mv = mask.values();
  double acc = 0.0;
  for (std::size_t q = 0; q < planes; ++q)
    for (std::size_t k = 0; k < P; ++k) {
      const double d = static_cast<double>(pv[q * P + k]) - static_cast<double>(tv[q * P + k]);
      acc += static_cast<double>(mv[k]) * d * d;
    }
  const double inv_b = 1.0 / static_cast<double>(B);
  auto backward = [P, planes, inv_b](typename Tensor<T>::Node& self) {
    auto& p = *self.parents[0];
    auto& t = *self.parents[1];
    const auto& m = self.parents[2]->value;
    const T g = self.grad[0];
    for (std::size_t q = 0; q < planes; ++q)
      for (std::size_t k = 0; k < P; ++k) {
        const std::size_t i = q * P + k;
        const T d = static_cast<T>(2.0 * inv_b) * m[k] * (p.value[i] - t.value[i]) * g;
        if (p.requires_grad) p.grad_buffer()[i] += d;
        if (t.requires_grad) t.grad_buffer()[i] -= d;
      }
  };
  return Tensor<T>::from_op({1}, {static_cast<T>(acc * inv_b)}, {pred, target, mask}, std::move(backward));
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.shape() != w.shape()) throw ShapeError("weighted_sum: shapes differ");
  const auto xv = x.values();
  const auto wv = w.values();
  T acc{0};
  for (std::size_t k = 0; k < xv.size(); ++k) acc += xv[k] * wv[k];
  auto backward = [](typename Tensor<T>::Node& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    const T g = self.grad[0];
    if (px.requires_grad) {
      auto& gx = px.grad_buffer();
      for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += pw.value[k] * g;
    }
    if (pw.requires_grad) {
      auto& gw = pw.grad_buffer();
      for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += px.value[k] * g;
    }
  };
  return Tensor<T>::from_op({1}, {acc}, {x, w}, std::move(backward));
}

ReluPatternRecorder::ReluPatternRecorder() : previous_(active_recorder) { active_recorder = this; }

ReluPatternRecorder::~ReluPatternRecorder() { active_recorder = previous_; }

std::vector<bool> ReluPatternRecorder::take() { return std::exchange(pattern_, {}); }

void ReluPatternRecorder::record(bool active) {
  if (active_recorder != nullptr) active_recorder->pattern_.push_back(active);
}

#define SDR_INSTANTIATE_LAYERS(T)                                                                              \
  template Tensor<T> conv2d_circular(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvSpec&);   \
  template Tensor<T> conv_transpose2d_circular(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                               const ConvSpec&);                                               \
  template Tensor<T> relu(const Tensor<T>&);                                                                   \
  template Tensor<T> channel_dropout(const Tensor<T>&, double, Mode, const DropoutKey&);                      \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> masked_mse(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> weighted_sum(const Tensor<T>&, const Tensor<T>&);

SDR_INSTANTIATE_LAYERS(float)
SDR_INSTANTIATE_LAYERS(double)

}  // namespace sdr::ad
