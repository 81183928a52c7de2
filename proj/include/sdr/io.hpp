#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdr/quadrant.hpp"
#include "sdr/sampling.hpp"
#include "sdr/unet.hpp"

namespace sdr {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// SDI1: "SDI1", u32 n, u32 channels (= 1), n*n float32, all little endian,
// row-major over (i2 outer, i1 inner).
std::string encode_sdi(const Image& x);
Image decode_sdi(const std::string& bytes);
void write_sdi(const std::filesystem::path& path, const Image& x);
Image read_sdi(const std::filesystem::path& path);

/// Masks are stored as SDI1 images holding exactly 0 and 1.
void write_mask_sdi(const std::filesystem::path& path, const PixelMask& m);
PixelMask read_mask_sdi(const std::filesystem::path& path);

/// 8-bit binary PGM (P5); values are clamped to [0, 1] before quantizing.
/// Several panels are laid out left to right with a one pixel gap.
std::string encode_pgm(const std::vector<Image>& panels);
void write_pgm(const std::filesystem::path& path, const std::vector<Image>& panels);

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

/// Images of one split listed in dir/manifest.csv, in manifest order.
std::vector<Image> load_split(const std::filesystem::path& dir, const std::string& split);

// SDCK: "SDCK", u32 version, u32 parameter count, then per parameter u16
// name length, name, u8 rank, u32 dims, float32 values; then u32-length
// prefixed topology descriptor and u32-length prefixed config text.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  UNetConfig model;
  std::vector<std::string> names;
  std::vector<ad::Shape> shapes;
  std::vector<std::vector<float>> values;
  std::string topology;
  std::string config_text;

  UNet<float> to_model() const;
};

Checkpoint make_checkpoint(const UNet<float>& model, const std::string& config_text);
std::string encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::string& bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames it into place.
void write_file(const std::filesystem::path& path, const std::string& bytes);

/// Parses `key = value` lines; `#` starts a comment. Throws FormatError on
/// malformed lines, duplicate keys or keys outside `allowed`.
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::set<std::string>& allowed);

}  // namespace sdr
