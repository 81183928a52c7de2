#include "sdr/unet.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "sdr/rng.hpp"

namespace sdr {
namespace {

/// Shortest text that parses back to the same double, in fixed notation
/// unless that gets long.
std::string format_double(double v) {
  char buf[400];
  const auto fixed = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
  if (fixed.ec == std::errc() && fixed.ptr - buf <= 14) return std::string(buf, fixed.ptr);
  const auto sci = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, sci.ptr);
}

std::string layer_line(const LayerDesc& l) {
  std::ostringstream os;
  os << "layer " << l.name << ' ' << (l.spec.transposed ? "conv_transpose" : "conv") << ' ' << l.spec.in_channels
     << ' ' << l.spec.out_channels << ' ' << l.spec.kernel << ' ' << l.spec.stride << ' ' << (l.relu ? "relu" : "linear");
  return os.str();
}

constexpr std::uint64_t kDropoutLayerId = 1;

}  // namespace

void UNetConfig::validate() const {
  if (depth != 3) throw std::invalid_argument("U-Net depth is fixed at 3");
  if (stride != 2) throw std::invalid_argument("U-Net resize stride is fixed at 2");
  if (kernel == 0 || kernel % 2 == 0) throw std::invalid_argument("U-Net kernel must be odd");
  if (in_channels == 0 || out_channels == 0 || base_channels == 0) {
    throw std::invalid_argument("U-Net channel counts must be positive");
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw std::invalid_argument("dropout_p must lie in [0, 1)");
}

std::size_t UNetConfig::overall_stride() const {
  std::size_t s = 1;
  for (std::size_t l = 0; l < depth; ++l) s *= stride;
  return s;
}

std::vector<LayerDesc> unet_topology(const UNetConfig& cfg) {
  cfg.validate();
  const std::size_t k = cfg.kernel;
  std::vector<std::size_t> width(cfg.depth + 1);
  for (std::size_t l = 0; l <= cfg.depth; ++l) width[l] = cfg.base_channels << l;

  std::vector<LayerDesc> layers;
  auto conv = [&](std::string name, std::size_t cin, std::size_t cout, std::size_t kk, std::size_t s, bool t, bool relu) {
    layers.push_back({std::move(name), ad::ConvSpec{cin, cout, kk, s, t}, relu});
  };
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::string p = "enc" + std::to_string(l);
    conv(p + ".conv1", l == 0 ? cfg.in_channels : width[l], width[l], k, 1, false, true);
    conv(p + ".conv2", width[l], width[l], k, 1, false, true);
    conv(p + ".down", width[l], width[l + 1], k, cfg.stride, false, true);
  }
  conv("mid.conv1", width[cfg.depth], width[cfg.depth], k, 1, false, true);
  conv("mid.conv2", width[cfg.depth], width[cfg.depth], k, 1, false, true);
  for (std::size_t r = cfg.depth; r-- > 0;) {
    const std::string p = "dec" + std::to_string(r);
    conv(p + ".up", width[r + 1], width[r], k, cfg.stride, true, true);
    conv(p + ".conv1", 2 * width[r], width[r], k, 1, false, true);
    conv(p + ".conv2", width[r], width[r], k, 1, false, true);
  }
  conv("out", width[0], cfg.out_channels, 1, 1, false, false);
  return layers;
}

std::size_t unet_parameter_count(const UNetConfig& cfg) {
  std::size_t total = 0;
  for (const auto& l : unet_topology(cfg)) {
    total += ad::numel(l.spec.weight_shape()) + l.spec.out_channels;
  }
  return total;
}

std::string describe_topology(const UNetConfig& cfg) {
  std::ostringstream os;
  os << "unet in_channels=" << cfg.in_channels << " out_channels=" << cfg.out_channels
     << " base_channels=" << cfg.base_channels << " depth=" << cfg.depth << " kernel=" << cfg.kernel
     << " stride=" << cfg.stride << " dropout_p=" << format_double(cfg.dropout_p) << '\n';
  for (const auto& l : unet_topology(cfg)) os << layer_line(l) << '\n';
  return os.str();
}

UNetConfig parse_topology(const std::string& descriptor) {
  std::istringstream is(descriptor);
  std::string head;
  std::getline(is, head);
  std::istringstream hs(head);
  std::string word;
  hs >> word;
  if (word != "unet") throw std::invalid_argument("topology descriptor must start with 'unet'");
  std::map<std::string, std::string> kv;
  while (hs >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("malformed topology field: " + word);
    kv[word.substr(0, eq)] = word.substr(eq + 1);
  }
  auto get = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument(std::string("topology descriptor lacks ") + key);
    return it->second;
  };
  UNetConfig cfg;
  cfg.in_channels = std::stoul(get("in_channels"));
  cfg.out_channels = std::stoul(get("out_channels"));
  cfg.base_channels = std::stoul(get("base_channels"));
  cfg.depth = std::stoul(get("depth"));
  cfg.kernel = std::stoul(get("kernel"));
  cfg.stride = std::stoul(get("stride"));
  cfg.dropout_p = std::stod(get("dropout_p"));
  cfg.validate();
  if (describe_topology(cfg) != descriptor) {
    throw std::invalid_argument("topology descriptor layer list does not match its header");
  }
  return cfg;
}

template <typename T>
UNet<T>::UNet(const UNetConfig& cfg) : cfg_(cfg), layers_(unet_topology(cfg)) {
  for (const auto& l : layers_) {
    names_.push_back(l.name + ".weight");
    params_.push_back(ad::Tensor<T>::zeros(l.spec.weight_shape(), true));
    names_.push_back(l.name + ".bias");
    params_.push_back(ad::Tensor<T>::zeros({l.spec.out_channels}, true));
  }
}

template <typename T>
UNet<T>::UNet(const UNetConfig& cfg, std::uint64_t seed) : UNet(cfg) {
  Rng rng(seed);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layers_[l].spec.fan_in()));
    for (std::size_t j = 0; j < 2; ++j) {
      for (auto& v : params_[2 * l + j].mutable_values()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
  }
}

template <typename T>
UNet<T> UNet<T>::zeros(const UNetConfig& cfg) {
  return UNet(cfg);
}

template <typename T>
std::size_t UNet<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.size();
  return total;
}

template <typename T>
void UNet<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void UNet<T>::load_values(const std::vector<std::vector<T>>& values) {
  if (values.size() != params_.size()) throw std::invalid_argument("parameter count mismatch");
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (values[k].size() != params_[k].size()) {
      throw std::invalid_argument("parameter " + names_[k] + " has wrong size");
    }
    std::copy(values[k].begin(), values[k].end(), params_[k].mutable_values().begin());
  }
}

template <typename T>
ad::Tensor<T> UNet<T>::forward(const ad::Tensor<T>& x, const ad::DropoutKey& key) const {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels) {
    throw ad::ShapeError("U-Net input must be [B, " + std::to_string(cfg_.in_channels) + ", H, W], got " +
                         ad::shape_str(x.shape()));
  }
  const std::size_t s = cfg_.overall_stride();
  if (x.dim(2) % s != 0 || x.dim(3) % s != 0) {
    throw ad::ShapeError("U-Net input height and width must be divisible by " + std::to_string(s) +
                         " (three stride-2 downsamplings), got " + std::to_string(x.dim(2)) + "x" +
                         std::to_string(x.dim(3)));
  }
  std::size_t li = 0;
  auto apply = [&](const ad::Tensor<T>& h) {
    const auto& l = layers_[li];
    auto y = l.spec.transposed ? ad::conv_transpose2d_circular(h, weight(li), bias(li), l.spec)
                               : ad::conv2d_circular(h, weight(li), bias(li), l.spec);
    ++li;
    return l.relu ? ad::relu(y) : y;
  };

  std::vector<ad::Tensor<T>> skips;
  ad::Tensor<T> h = x;
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    h = apply(h);
    h = apply(h);
    skips.push_back(h);
    h = apply(h);
  }
  h = apply(h);
  ad::DropoutKey dk = key;
  dk.layer = kDropoutLayerId;
  h = ad::channel_dropout(h, cfg_.dropout_p, mode_, dk);
  h = apply(h);
  for (std::size_t l = cfg_.depth; l-- > 0;) {
    h = apply(h);
    h = ad::concat_channels(h, skips[l]);
    h = apply(h);
    h = apply(h);
  }
  return apply(h);
}

template <typename T>
ad::Tensor<T> images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("need at least one image");
  const int n = images.front().n();
  const std::size_t npix = static_cast<std::size_t>(n) * n;
  std::vector<T> values;
  values.reserve(images.size() * npix);
  for (const auto& img : images) {
    if (img.n() != n) throw DimensionMismatch();
    for (double v : img.data()) values.push_back(static_cast<T>(v));
  }
  return ad::Tensor<T>({images.size(), 1, static_cast<std::size_t>(n), static_cast<std::size_t>(n)},
                       std::move(values));
}

template <typename T>
std::vector<Image> tensor_to_images(const ad::Tensor<T>& t) {
  if (t.rank() != 4 || t.dim(1) != 1 || t.dim(2) != t.dim(3)) {
    throw ad::ShapeError("expected a [B, 1, n, n] tensor, got " + ad::shape_str(t.shape()));
  }
  const std::size_t npix = t.dim(2) * t.dim(3);
  std::vector<Image> out;
  const auto v = t.values();
  for (std::size_t b = 0; b < t.dim(0); ++b) {
    out.emplace_back(static_cast<int>(t.dim(2)), std::vector<double>(v.begin() + b * npix, v.begin() + (b + 1) * npix));
  }
  return out;
}

template <typename T>
ad::Tensor<T> shift_tensor(const ad::Tensor<T>& t, const Shift& s) {
  if (t.rank() != 4) throw ad::ShapeError("shift_tensor expects [B, C, H, W]");
  const std::size_t H = t.dim(2), W = t.dim(3), planes = t.dim(0) * t.dim(1);
  const auto a = static_cast<std::size_t>(((s.a % static_cast<long>(W)) + static_cast<long>(W)) % static_cast<long>(W));
  const auto b = static_cast<std::size_t>(((s.b % static_cast<long>(H)) + static_cast<long>(H)) % static_cast<long>(H));
  const auto v = t.values();
  std::vector<T> out(v.size());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) out[(p * H + r) * W + c] = v[(p * H + (r + b) % H) * W + (c + a) % W];
  return ad::Tensor<T>(t.shape(), std::move(out));
}

template <typename T>
Image restore(const UNet<T>& model, const Image& observed) {
  const Image one[] = {observed};
  return tensor_to_images(model.forward(images_to_tensor<T>(one))).front();
}

bool EquivarianceReport::all_guaranteed_pass() const {
  return std::all_of(shifts.begin(), shifts.end(), [](const ShiftError& e) { return !e.guaranteed || *e.pass; });
}

template <typename T>
EquivarianceReport check_equivariance(const UNet<T>& model, int n, int trials, const std::vector<Shift>& shifts,
                                      std::uint64_t seed) {
  if (model.mode() != ad::Mode::eval) throw std::invalid_argument("equivariance is checked in eval mode");
  EquivarianceReport report;
  report.tolerance = sizeof(T) >= 8 ? 1e-10 : 1e-5;
  const auto stride = static_cast<int>(model.config().overall_stride());
  for (const auto& s : shifts) {
    ShiftError e;
    e.shift = s;
    e.guaranteed = s.a % stride == 0 && s.b % stride == 0;
    report.shifts.push_back(e);
  }
  Rng rng(seed);
  const std::size_t N = static_cast<std::size_t>(n);
  constexpr std::size_t kChunk = 4;
  for (int t = 0; t < trials; ++t) {
    std::vector<T> xv(N * N);
    for (auto& v : xv) v = static_cast<T>(rng.uniform());
    const ad::Tensor<T> x({1, 1, N, N}, xv);
    const auto y = model.forward(x);
    double scale = 0.0;
    for (auto v : y.values()) scale = std::max(scale, std::abs(static_cast<double>(v)));
    scale = std::max(1e-8, scale);

    for (std::size_t first = 0; first < shifts.size(); first += kChunk) {
      const std::size_t count = std::min(kChunk, shifts.size() - first);
      std::vector<T> batch;
      batch.reserve(count * N * N);
      for (std::size_t k = 0; k < count; ++k) {
        const auto xs = shift_tensor(x, shifts[first + k]);
        batch.insert(batch.end(), xs.values().begin(), xs.values().end());
      }
      const auto ys = model.forward(ad::Tensor<T>({count, 1, N, N}, std::move(batch)));
      for (std::size_t k = 0; k < count; ++k) {
        const auto expect = shift_tensor(y, shifts[first + k]);
        double err = 0.0;
        for (std::size_t i = 0; i < N * N; ++i) {
          err = std::max(err, std::abs(static_cast<double>(ys.values()[k * N * N + i]) -
                                       static_cast<double>(expect.values()[i])));
        }
        auto& e = report.shifts[first + k];
        e.max_rel_error = std::max(e.max_rel_error, err / scale);
      }
    }
  }
  for (auto& e : report.shifts) {
    if (e.guaranteed) e.pass = e.max_rel_error <= report.tolerance;
  }
  return report;
}

template class UNet<float>;
template class UNet<double>;
template ad::Tensor<float> images_to_tensor(std::span<const Image>);
template ad::Tensor<double> images_to_tensor(std::span<const Image>);
template std::vector<Image> tensor_to_images(const ad::Tensor<float>&);
template std::vector<Image> tensor_to_images(const ad::Tensor<double>&);
template ad::Tensor<float> shift_tensor(const ad::Tensor<float>&, const Shift&);
template ad::Tensor<double> shift_tensor(const ad::Tensor<double>&, const Shift&);
template Image restore(const UNet<float>&, const Image&);
template Image restore(const UNet<double>&, const Image&);
template EquivarianceReport check_equivariance(const UNet<float>&, int, int, const std::vector<Shift>&, std::uint64_t);
template EquivarianceReport check_equivariance(const UNet<double>&, int, int, const std::vector<Shift>&, std::uint64_t);

}  // namespace sdr
