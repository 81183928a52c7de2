#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sdr/oracle.hpp"
#include "sdr/sampling.hpp"

namespace sdr {

enum class QuadrantPattern { P1, P2, P3, P4 };

/// P1 horizontal lines (1 on odd local rows), P2 vertical lines (1 on odd
/// local columns), P3 checkerboard (1 where i1+i2 is even), P4 black with a
/// white 2x2 square in the upper-left corner. P1..P3 are all 1 on
/// (odd, odd) local pixels.
Image render_pattern(QuadrantPattern kind, int q);

/// placement k puts P4 in quadrant (k & 1, k >> 1), counted in
/// (horizontal, vertical) order from the top-left. Its horizontal neighbour
/// gets P1, its vertical neighbour P3 and the diagonal one P2.
struct QuadrantImageSpec {
  int n = 16;
  int placement = 0;
};

Image render_quadrant_image(const QuadrantImageSpec& spec);

/// Uniform law over the four placements.
oracle::DiscreteDistribution quadrant_distribution(int n);

struct DatasetCounts {
  std::size_t train = 64;
  std::size_t val = 16;
  std::size_t test = 16;
};

struct ManifestRow {
  std::string filename;
  std::string split;
  int placement;
  std::uint64_t seed;
};

/// Placement of the image drawn with this per-image seed.
int sample_placement(std::uint64_t image_seed);

/// Draws i.i.d. quadrant images and writes <split>_<index>.sdi files plus
/// manifest.csv into out_dir. Output bytes depend only on the arguments.
std::vector<ManifestRow> write_dataset(int n, const DatasetCounts& counts, std::uint64_t seed,
                                       const std::filesystem::path& out_dir);

}  // namespace sdr
