#include "sdr/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sdr {
namespace {

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u16(std::string& out, std::uint16_t v) {
  for (int k = 0; k < 2; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

void put_text(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  void need(std::size_t k) const {
    if (pos_ + k > bytes_.size()) throw FormatError(what_ + ": truncated");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint16_t u16() {
    std::uint16_t v = u8();
    return static_cast<std::uint16_t>(v | (u8() << 8));
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(u8()) << (8 * k);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string raw(std::size_t k) {
    need(k);
    std::string s = bytes_.substr(pos_, k);
    pos_ += k;
    return s;
  }
  std::string text() { return raw(u32()); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename into " + path.string() + ": " + ec.message());
}

std::string encode_sdi(const Image& x) {
  std::string out = "SDI1";
  put_u32(out, static_cast<std::uint32_t>(x.n()));
  put_u32(out, 1);
  for (double v : x.data()) put_f32(out, static_cast<float>(v));
  return out;
}

Image decode_sdi(const std::string& bytes) {
  Reader r(bytes, "SDI1");
  if (r.raw(4) != "SDI1") throw FormatError("SDI1: bad magic");
  const std::uint32_t n = r.u32();
  const std::uint32_t channels = r.u32();
  if (channels != 1) throw FormatError("SDI1: only single-channel images are supported");
  if (n == 0 || n % 2 != 0 || n > 65536) throw FormatError("SDI1: bad side length " + std::to_string(n));
  std::vector<double> data(static_cast<std::size_t>(n) * n);
  for (auto& v : data) {
    v = r.f32();
    if (!std::isfinite(v)) throw FormatError("SDI1: non-finite pixel");
  }
  if (!r.done()) throw FormatError("SDI1: trailing bytes");
  return Image(static_cast<int>(n), std::move(data));
}

void write_sdi(const std::filesystem::path& path, const Image& x) { write_file(path, encode_sdi(x)); }

Image read_sdi(const std::filesystem::path& path) {
  try {
    return decode_sdi(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_mask_sdi(const std::filesystem::path& path, const PixelMask& m) {
  Image x(m.n());
  for (int i2 = 1; i2 <= m.n(); ++i2)
    for (int i1 = 1; i1 <= m.n(); ++i1) x.set(i1, i2, m.at(i1, i2) ? 1.0 : 0.0);
  write_sdi(path, x);
}

PixelMask read_mask_sdi(const std::filesystem::path& path) {
  const Image x = read_sdi(path);
  PixelMask m(x.n());
  for (int i2 = 1; i2 <= x.n(); ++i2) {
    for (int i1 = 1; i1 <= x.n(); ++i1) {
      const double v = x.at(i1, i2);
      if (v != 0.0 && v != 1.0) throw FormatError(path.string() + ": mask values must be 0 or 1");
      m.set(i1, i2, v == 1.0);
    }
  }
  return m;
}

std::string encode_pgm(const std::vector<Image>& panels) {
  if (panels.empty()) throw std::invalid_argument("PGM export needs at least one panel");
  const int h = panels.front().n();
  for (const auto& p : panels) {
    if (p.n() != h) throw DimensionMismatch();
  }
  const int w = static_cast<int>(panels.size()) * (h + 1) - 1;
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (int i2 = 1; i2 <= h; ++i2) {
    for (std::size_t k = 0; k < panels.size(); ++k) {
      if (k > 0) put_u8(out, 128);
      for (int i1 = 1; i1 <= h; ++i1) {
        const double v = std::clamp(panels[k].at(i1, i2), 0.0, 1.0);
        put_u8(out, static_cast<std::uint8_t>(std::lround(v * 255.0)));
      }
    }
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const std::vector<Image>& panels) {
  write_file(path, encode_pgm(panels));
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  std::string out = "filename,split,placement,seed\n";
  for (const auto& r : rows) {
    out += r.filename + "," + r.split + "," + std::to_string(r.placement) + "," + std::to_string(r.seed) + "\n";
  }
  write_file(path, out);
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || trim(line) != "filename,split,placement,seed") {
    throw FormatError(path.string() + ": unexpected manifest header");
  }
  std::vector<ManifestRow> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(trim(cell));
    if (f.size() != 4) throw FormatError(path.string() + ": manifest row needs 4 fields: " + line);
    try {
      rows.push_back({f[0], f[1], std::stoi(f[2]), std::stoull(f[3])});
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ": bad manifest row: " + line);
    }
  }
  return rows;
}

std::vector<Image> load_split(const std::filesystem::path& dir, const std::string& split) {
  std::vector<Image> out;
  for (const auto& r : read_manifest(dir / "manifest.csv")) {
    if (r.split == split) out.push_back(read_sdi(dir / r.filename));
  }
  return out;
}

UNet<float> Checkpoint::to_model() const {
  auto m = UNet<float>::zeros(model);
  if (m.parameter_names() != names) throw FormatError("SDCK: parameter names do not match the topology");
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (m.parameters()[k].shape() != shapes[k]) throw FormatError("SDCK: shape mismatch for " + names[k]);
  }
  m.load_values(values);
  return m;
}

Checkpoint make_checkpoint(const UNet<float>& model, const std::string& config_text) {
  Checkpoint ck;
  ck.model = model.config();
  ck.names = model.parameter_names();
  for (const auto& p : model.parameters()) {
    ck.shapes.push_back(p.shape());
    ck.values.emplace_back(p.values().begin(), p.values().end());
  }
  ck.topology = describe_topology(model.config());
  ck.config_text = config_text;
  return ck;
}

std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out = "SDCK";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(ck.names.size()));
  for (std::size_t k = 0; k < ck.names.size(); ++k) {
    put_u16(out, static_cast<std::uint16_t>(ck.names[k].size()));
    out += ck.names[k];
    put_u8(out, static_cast<std::uint8_t>(ck.shapes[k].size()));
    for (auto d : ck.shapes[k]) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : ck.values[k]) put_f32(out, v);
  }
  put_text(out, ck.topology);
  put_text(out, ck.config_text);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes, "SDCK");
  if (r.raw(4) != "SDCK") throw FormatError("SDCK: bad magic");
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw FormatError("SDCK: unsupported version " + std::to_string(v));
  }
  Checkpoint ck;
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    ck.names.push_back(r.raw(r.u16()));
    ad::Shape shape(r.u8());
    for (auto& d : shape) d = r.u32();
    std::vector<float> values(ad::numel(shape));
    r.need(values.size() * 4);
    for (auto& v : values) v = r.f32();
    ck.shapes.push_back(std::move(shape));
    ck.values.push_back(std::move(values));
  }
  ck.topology = r.text();
  ck.config_text = r.text();
  if (!r.done()) throw FormatError("SDCK: trailing bytes");
  try {
    ck.model = parse_topology(ck.topology);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("SDCK: ") + e.what());
  }
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file(path, encode_checkpoint(ck));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::set<std::string>& allowed) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw FormatError("config line " + std::to_string(lineno) + ": empty key or value");
    }
    if (!allowed.contains(key)) throw FormatError("unknown config key '" + key + "'");
    if (!out.emplace(key, value).second) throw FormatError("duplicate config key '" + key + "'");
  }
  return out;
}

}  // namespace sdr
