#include "sdr/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace sdr {
namespace {

int wrap(int i, int n) {
  const int r = i % n;
  return r < 0 ? r + n : r;
}

void require_same_size(int a, int b) {
  if (a != b) throw DimensionMismatch();
}

}  // namespace

Image::Image(int n, double fill) : Image(n, std::vector<double>(static_cast<std::size_t>(n) * n, fill)) {}

Image::Image(int n, std::vector<double> data) : n_(n), data_(std::move(data)) {
  if (n <= 0 || n % 2 != 0) {
    throw std::invalid_argument("image side must be a positive even integer, got " + std::to_string(n));
  }
  if (data_.size() != static_cast<std::size_t>(n) * n) {
    throw std::invalid_argument("image data length does not match n*n");
  }
  for (double v : data_) {
    if (!std::isfinite(v)) throw std::invalid_argument("image data must be finite");
  }
}

std::size_t Image::offset(int i1, int i2) const {
  return static_cast<std::size_t>(wrap(i2 - 1, n_)) * n_ + wrap(i1 - 1, n_);
}

void Image::set(int i1, int i2, double v) {
  if (!std::isfinite(v)) throw std::invalid_argument("image data must be finite");
  data_[offset(i1, i2)] = v;
}

PixelMask::PixelMask(int n, bool fill)
    : PixelMask(n, std::vector<std::uint8_t>(static_cast<std::size_t>(n) * n, fill ? 1 : 0)) {}

PixelMask::PixelMask(int n, std::vector<std::uint8_t> bits) : n_(n), bits_(std::move(bits)) {
  if (n <= 0) throw std::invalid_argument("mask side must be positive");
  if (bits_.size() != static_cast<std::size_t>(n) * n) {
    throw std::invalid_argument("mask length does not match n*n");
  }
  for (auto b : bits_) {
    if (b > 1) throw std::invalid_argument("mask bits must be 0 or 1");
  }
}

std::size_t PixelMask::offset(int i1, int i2) const {
  return static_cast<std::size_t>(wrap(i2 - 1, n_)) * n_ + wrap(i1 - 1, n_);
}

void PixelMask::set(int i1, int i2, bool v) { bits_[offset(i1, i2)] = v ? 1 : 0; }

std::size_t PixelMask::popcount() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

PixelMask PixelMask::operator|(const PixelMask& o) const {
  require_same_size(n_, o.n_);
  PixelMask r(n_);
  for (std::size_t k = 0; k < bits_.size(); ++k) r.bits_[k] = bits_[k] | o.bits_[k];
  return r;
}

PixelMask PixelMask::operator&(const PixelMask& o) const {
  require_same_size(n_, o.n_);
  PixelMask r(n_);
  for (std::size_t k = 0; k < bits_.size(); ++k) r.bits_[k] = bits_[k] & o.bits_[k];
  return r;
}

PixelMask PixelMask::operator~() const {
  PixelMask r(n_);
  for (std::size_t k = 0; k < bits_.size(); ++k) r.bits_[k] = bits_[k] ? 0 : 1;
  return r;
}

Shift Shift::compose(const Shift& o, int n) const { return Shift{wrap(a + o.a, n), wrap(b + o.b, n)}; }

Shift Shift::inverse(int n) const { return Shift{wrap(-a, n), wrap(-b, n)}; }

Shift Shift::normalized(int n) const { return Shift{wrap(a, n), wrap(b, n)}; }

TranslationFamily::TranslationFamily(int n, std::vector<Shift> shifts) : n_(n), shifts_(std::move(shifts)) {
  if (n <= 0) throw std::invalid_argument("family side must be positive");
  if (shifts_.empty() || shifts_.front().normalized(n) != Shift{}) {
    throw std::invalid_argument("translation family must start with the identity");
  }
  std::set<Shift> seen;
  for (auto& s : shifts_) {
    s = s.normalized(n);
    if (!seen.insert(s).second) throw std::invalid_argument("translation family shifts must be distinct");
  }
}

Image apply_mask(const Image& x, const PixelMask& m) {
  require_same_size(x.n(), m.n());
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (m[k]) out[k] = x[k];
  }
  return Image(x.n(), std::move(out));
}

std::vector<Sample> subsample(const Image& x, const PixelMask& m) {
  require_same_size(x.n(), m.n());
  std::vector<Sample> out;
  out.reserve(m.popcount());
  const int n = x.n();
  for (int i2 = 1; i2 <= n; ++i2) {
    for (int i1 = 1; i1 <= n; ++i1) {
      if (m.at(i1, i2)) out.push_back({i1, i2, x.at(i1, i2)});
    }
  }
  return out;
}

Image zero_upsample(std::span<const Sample> samples, const PixelMask& m) {
  Image out(m.n());
  for (const auto& s : samples) {
    if (!m.at(s.i1, s.i2)) throw std::invalid_argument("sample lies outside the mask support");
    out.set(s.i1, s.i2, s.value);
  }
  return out;
}

Image apply_shift(const Image& x, const Shift& s) {
  const int n = x.n();
  const Shift t = s.normalized(n);
  std::vector<double> out(x.size());
  for (int r = 0; r < n; ++r) {
    const std::size_t src_row = static_cast<std::size_t>((r + t.b) % n) * n;
    const std::size_t dst_row = static_cast<std::size_t>(r) * n;
    for (int c = 0; c < n; ++c) out[dst_row + c] = x[src_row + (c + t.a) % n];
  }
  return Image(n, std::move(out));
}

PixelMask apply_shift(const PixelMask& m, const Shift& s) {
  const int n = m.n();
  const Shift t = s.normalized(n);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n) * n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      out[static_cast<std::size_t>(r) * n + c] = m[static_cast<std::size_t>((r + t.b) % n) * n + (c + t.a) % n];
    }
  }
  return PixelMask(n, std::move(out));
}

PixelMask odd_lattice_mask(int n) {
  PixelMask m(n);
  for (int i2 = 1; i2 <= n; i2 += 2)
    for (int i1 = 1; i1 <= n; i1 += 2) m.set(i1, i2, true);
  return m;
}

PixelMask corner_mask(int n, int patch) {
  PixelMask m(n);
  for (int i2 = 1; i2 <= patch; ++i2)
    for (int i1 = 1; i1 <= patch; ++i1) m.set(i1, i2, true);
  return m;
}

SamplingDesign make_sparse_dense_masks(int n) {
  if (n < 4 || n % 4 != 0) {
    throw std::invalid_argument("sparse-dense sampling needs n divisible by 4, got " + std::to_string(n));
  }
  const int h = n / 2;
  return SamplingDesign{odd_lattice_mask(n), corner_mask(n, h),
                        TranslationFamily(n, {{0, 0}, {h, 0}, {0, h}, {h, h}})};
}

SamplingDesign make_generalized_masks(int n, int patch) {
  if (n <= 0 || n % 2 != 0) throw std::invalid_argument("n must be a positive even integer");
  if (patch < 1 || n % patch != 0) {
    throw std::invalid_argument("supervision patch " + std::to_string(patch) + " does not divide n=" +
                                std::to_string(n));
  }
  const int k = n / patch;
  std::vector<Shift> shifts;
  shifts.reserve(static_cast<std::size_t>(k) * k);
  // Horizontal index varies fastest so that for patch = n/2 the order
  // matches make_sparse_dense_masks.
  for (int v = 0; v < k; ++v)
    for (int h = 0; h < k; ++h) shifts.push_back({h * patch, v * patch});
  return SamplingDesign{odd_lattice_mask(n), corner_mask(n, patch), TranslationFamily(n, std::move(shifts))};
}

bool check_partition(const TranslationFamily& family, const PixelMask& b) {
  if (family.n() != b.n()) return false;
  const std::size_t npix = static_cast<std::size_t>(b.n()) * b.n();
  std::vector<int> cover(npix, 0);
  for (const auto& s : family.shifts()) {
    const PixelMask moved = apply_shift(b, s.inverse(b.n()));
    for (std::size_t k = 0; k < npix; ++k) cover[k] += moved[k] ? 1 : 0;
  }
  return std::all_of(cover.begin(), cover.end(), [](int c) { return c == 1; });
}

bool check_mask_shift_invariance(const PixelMask& m, const Shift& s) { return apply_shift(m, s) == m; }

double inner_product(const Image& x, const Image& y) {
  require_same_size(x.n(), y.n());
  double acc = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) acc += x[k] * y[k];
  return acc;
}

double inner_product(std::span<const Sample> x, std::span<const Sample> y) {
  if (x.size() != y.size()) throw std::invalid_argument("sample vectors differ in length");
  double acc = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (x[k].i1 != y[k].i1 || x[k].i2 != y[k].i2) throw std::invalid_argument("sample index sets differ");
    acc += x[k].value * y[k].value;
  }
  return acc;
}

}  // namespace sdr
