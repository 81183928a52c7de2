#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace sdr {

/// N x N periodic image. Coordinates in the public API are 1-based
/// (i1 horizontal, i2 vertical) and wrap modulo n. Storage is row-major
/// over (i2, i1), so the flat offset of (i1, i2) is (i2-1)*n + (i1-1).
class Image {
 public:
  Image() = default;
  explicit Image(int n, double fill = 0.0);
  Image(int n, std::vector<double> data);

  int n() const { return n_; }
  std::size_t size() const { return data_.size(); }

  double at(int i1, int i2) const { return data_[offset(i1, i2)]; }
  void set(int i1, int i2, double v);

  std::span<const double> data() const { return data_; }
  const std::vector<double>& storage() const { return data_; }

  /// 0-based flat access, used by numeric kernels.
  double operator[](std::size_t k) const { return data_[k]; }

  friend bool operator==(const Image&, const Image&) = default;
  friend auto operator<=>(const Image& a, const Image& b) { return a.data_ <=> b.data_; }

 private:
  std::size_t offset(int i1, int i2) const;

  int n_ = 0;
  std::vector<double> data_;
};

/// Binary mask over the same periodic grid as Image.
class PixelMask {
 public:
  PixelMask() = default;
  explicit PixelMask(int n, bool fill = false);
  PixelMask(int n, std::vector<std::uint8_t> bits);

  int n() const { return n_; }
  bool at(int i1, int i2) const { return bits_[offset(i1, i2)] != 0; }
  void set(int i1, int i2, bool v);
  bool operator[](std::size_t k) const { return bits_[k] != 0; }

  std::size_t popcount() const;
  std::span<const std::uint8_t> bits() const { return bits_; }

  PixelMask operator|(const PixelMask& o) const;
  PixelMask operator&(const PixelMask& o) const;
  PixelMask operator~() const;

  friend bool operator==(const PixelMask&, const PixelMask&) = default;
  friend auto operator<=>(const PixelMask& a, const PixelMask& b) { return a.bits_ <=> b.bits_; }

 private:
  std::size_t offset(int i1, int i2) const;

  int n_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Translation H^a o V^b on an n-periodic grid.
struct Shift {
  int a = 0;
  int b = 0;

  Shift compose(const Shift& o, int n) const;
  Shift inverse(int n) const;
  Shift normalized(int n) const;

  friend bool operator==(const Shift&, const Shift&) = default;
  friend auto operator<=>(const Shift&, const Shift&) = default;
};

class TranslationFamily {
 public:
  TranslationFamily(int n, std::vector<Shift> shifts);

  int n() const { return n_; }
  const std::vector<Shift>& shifts() const { return shifts_; }
  std::size_t size() const { return shifts_.size(); }

 private:
  int n_;
  std::vector<Shift> shifts_;
};

struct SamplingDesign {
  PixelMask omega;
  PixelMask b;
  TranslationFamily family;
};

struct Sample {
  int i1;
  int i2;
  double value;

  friend bool operator==(const Sample&, const Sample&) = default;
};

class DimensionMismatch : public std::invalid_argument {
 public:
  DimensionMismatch() : std::invalid_argument("mask/image size differ") {}
};

Image apply_mask(const Image& x, const PixelMask& m);

/// Pixels of x on the support of m, row-major over (i2, i1).
std::vector<Sample> subsample(const Image& x, const PixelMask& m);

/// Adjoint of subsample: places samples on an n x n grid, zeros elsewhere.
/// Every sample must lie on the support of m.
Image zero_upsample(std::span<const Sample> samples, const PixelMask& m);

Image apply_shift(const Image& x, const Shift& s);
PixelMask apply_shift(const PixelMask& m, const Shift& s);

/// Odd-odd lattice, top-left quadrant and the four half-period translations.
SamplingDesign make_sparse_dense_masks(int n);

/// Odd-odd lattice, patch x patch supervision corner and every translation
/// by multiples of patch.
SamplingDesign make_generalized_masks(int n, int patch);

PixelMask odd_lattice_mask(int n);
PixelMask corner_mask(int n, int patch);

bool check_partition(const TranslationFamily& family, const PixelMask& b);
bool check_mask_shift_invariance(const PixelMask& m, const Shift& s);

double inner_product(const Image& x, const Image& y);
double inner_product(std::span<const Sample> x, std::span<const Sample> y);

}  // namespace sdr
