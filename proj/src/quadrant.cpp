#include "sdr/quadrant.hpp"

#include <array>
#include <cstdio>
#include <stdexcept>

#include "sdr/io.hpp"
#include "sdr/rng.hpp"

namespace sdr {

Image render_pattern(QuadrantPattern kind, int q) {
  if (q <= 0 || q % 2 != 0) throw std::invalid_argument("quadrant size must be positive and even");
  Image out(q);
  for (int i2 = 1; i2 <= q; ++i2) {
    for (int i1 = 1; i1 <= q; ++i1) {
      bool on = false;
      switch (kind) {
        case QuadrantPattern::P1: on = i2 % 2 == 1; break;
        case QuadrantPattern::P2: on = i1 % 2 == 1; break;
        case QuadrantPattern::P3: on = (i1 + i2) % 2 == 0; break;
        case QuadrantPattern::P4: on = i1 <= 2 && i2 <= 2; break;
      }
      out.set(i1, i2, on ? 1.0 : 0.0);
    }
  }
  return out;
}

Image render_quadrant_image(const QuadrantImageSpec& spec) {
  if (spec.n < 4 || spec.n % 4 != 0) throw std::invalid_argument("quadrant image size must be a multiple of 4");
  if (spec.placement < 0 || spec.placement > 3) throw std::invalid_argument("placement must be in 0..3");
  const int q = spec.n / 2;
  // Indexed by (quadrant xor placement): same, horizontal, vertical, diagonal.
  const std::array<QuadrantPattern, 4> by_offset = {QuadrantPattern::P4, QuadrantPattern::P1, QuadrantPattern::P3,
                                                     QuadrantPattern::P2};
  Image out(spec.n);
  for (int k = 0; k < 4; ++k) {
    const Image block = render_pattern(by_offset[static_cast<std::size_t>(k ^ spec.placement)], q);
    const int ox = (k & 1) * q;
    const int oy = (k >> 1) * q;
    for (int i2 = 1; i2 <= q; ++i2)
      for (int i1 = 1; i1 <= q; ++i1) out.set(ox + i1, oy + i2, block.at(i1, i2));
  }
  return out;
}

oracle::DiscreteDistribution quadrant_distribution(int n) {
  std::vector<Image> atoms;
  for (int k = 0; k < 4; ++k) atoms.push_back(render_quadrant_image({n, k}));
  return oracle::DiscreteDistribution::uniform(atoms);
}

int sample_placement(std::uint64_t image_seed) { return static_cast<int>(Rng(image_seed).below(4)); }

std::vector<ManifestRow> write_dataset(int n, const DatasetCounts& counts, std::uint64_t seed,
                                       const std::filesystem::path& out_dir) {
  if (counts.train == 0 || counts.val == 0 || counts.test == 0) {
    throw std::invalid_argument("dataset split counts must be >= 1");
  }
  render_quadrant_image({n, 0});
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir.string() + ": " + ec.message());

  std::vector<ManifestRow> rows;
  const std::array<std::pair<const char*, std::size_t>, 3> splits = {
      {{"train", counts.train}, {"val", counts.val}, {"test", counts.test}}};
  std::uint64_t index = 0;
  for (const auto& [split, count] : splits) {
    for (std::size_t i = 0; i < count; ++i, ++index) {
      const std::uint64_t image_seed = hash_combine(seed, index);
      const int placement = sample_placement(image_seed);
      char name[64];
      std::snprintf(name, sizeof name, "%s_%04zu.sdi", split, i);
      write_sdi(out_dir / name, render_quadrant_image({n, placement}));
      rows.push_back({name, split, placement, image_seed});
    }
  }
  write_manifest(out_dir / "manifest.csv", rows);
  return rows;
}

}  // namespace sdr
