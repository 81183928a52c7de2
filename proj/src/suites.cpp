#include "sdr/suites.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sdr/quadrant.hpp"
#include "sdr/rng.hpp"

namespace sdr::oracle {
namespace {

std::string shift_id(const Shift& s) { return "s" + std::to_string(s.a) + "x" + std::to_string(s.b); }

CheckRow lemma_row(const std::string& id, const DiscreteDistribution& d, const PixelMask& m, const Shift& s) {
  const auto r = verify_lemma_invariance(d, m, s);
  return {id + "-" + shift_id(s), "lemma_invariance", r.max_abs_error, r.holds};
}

PixelMask column_mask(int n, int i1) {
  PixelMask m(n);
  for (int i2 = 1; i2 <= n; ++i2) m.set(i1, i2, true);
  return m;
}

PixelMask row_mask(int n, int i2) {
  PixelMask m(n);
  for (int i1 = 1; i1 <= n; ++i1) m.set(i1, i2, true);
  return m;
}

Image random_binary(int n, Rng& rng) {
  std::vector<double> px(static_cast<std::size_t>(n) * n);
  for (auto& v : px) v = static_cast<double>(rng.below(2));
  return Image(n, std::move(px));
}

}  // namespace

std::vector<CheckRow> lemma_suite(const SuiteOptions& opts) {
  std::vector<CheckRow> rows;
  const auto quad = make_sparse_dense_masks(16);
  const auto qd = quadrant_distribution(16);
  for (const Shift& s : {Shift{8, 0}, Shift{0, 8}, Shift{8, 8}}) rows.push_back(lemma_row("quadrant16", qd, quad.omega, s));

  Rng rng(hash_combine(opts.seed, 1));
  const TranslationFamily even4(4, {{0, 0}, {2, 0}, {0, 2}});
  const PixelMask odd4 = odd_lattice_mask(4);
  for (int k = 0; k < 2; ++k) {
    const auto d = DiscreteDistribution::shift_orbit(random_binary(4, rng), even4);
    for (const Shift& s : {Shift{2, 0}, Shift{0, 2}, Shift{2, 2}}) {
      rows.push_back(lemma_row("orbit4-" + std::to_string(k), d, odd4, s));
    }
  }

  rows.push_back(lemma_row("constant4", DiscreteDistribution::point_mass(Image(4, 0.5)), column_mask(4, 2), {0, 1}));

  const TranslationFamily unit4(4, {{0, 0}, {1, 0}, {0, 1}});
  const auto full_orbit = DiscreteDistribution::shift_orbit(random_binary(4, rng), unit4);
  rows.push_back(lemma_row("row-mask4", full_orbit, row_mask(4, 1), {1, 0}));
  rows.push_back(lemma_row("row-mask4", full_orbit, row_mask(4, 1), {3, 0}));

  // A single column is not invariant under horizontal shifts, so the
  // identity must break on some observation.
  const auto broken = verify_lemma_invariance(full_orbit, column_mask(4, 1), {1, 0});
  rows.push_back({"column-mask4-" + shift_id({1, 0}), "lemma_counterexample_detected", broken.max_abs_error,
                  !broken.holds && broken.witness.has_value()});
  return rows;
}

std::vector<CheckRow> theorem_suite(const SuiteOptions& opts) {
  std::vector<CheckRow> rows;
  const auto design = make_sparse_dense_masks(4);
  auto add = [&](const std::string& id, const DiscreteDistribution& d) {
    const auto r = verify_theorem_local_supervision(d, design.omega, design.b, design.family);
    rows.push_back({id, "local_minimizer_equals_conditional_expectation", r.max_abs_error, r.holds});
  };
  add("point-mass4", DiscreteDistribution::point_mass(Image(4, 1.0)));
  for (int k = 0; k < opts.random_distributions; ++k) {
    const auto seed = hash_combine(opts.seed, 100 + static_cast<std::uint64_t>(k));
    add("random4-" + std::to_string(k), random_invariant_distribution(4, design.family, 8, seed));
  }

  // Observing a single pixel breaks the invariance of the masked data; the
  // closed form then has to disagree with the conditional expectation.
  PixelMask single(4);
  single.set(1, 1, true);
  double worst = 0.0;
  bool found = false;
  for (int k = 0; k < 50 && !found; ++k) {
    const auto d = random_invariant_distribution(4, design.family, 3, hash_combine(opts.seed, 500 + static_cast<std::uint64_t>(k)));
    const auto r = verify_theorem_local_supervision(d, single, design.b, design.family, LocalLossOptions{false});
    worst = r.max_abs_error;
    found = r.max_abs_error > kTheoremTolerance && !r.precondition_failures.empty();
  }
  rows.push_back({"single-pixel-omega4", "mask_invariance_violation_detected", worst, found});
  return rows;
}

std::vector<CheckRow> quadrant_suite(const SuiteOptions&) {
  const auto design = make_sparse_dense_masks(16);
  const auto d = quadrant_distribution(16);
  std::vector<CheckRow> rows;
  const auto r = verify_theorem_local_supervision(d, design.omega, design.b, design.family);
  rows.push_back({"quadrant16", "local_minimizer_equals_conditional_expectation", r.max_abs_error, r.holds});
  double recon = 0.0;
  for (const auto& a : d.atoms()) {
    const Image e = conditional_expectation(d, design.omega, apply_mask(a.image, design.omega));
    for (std::size_t k = 0; k < e.size(); ++k) recon = std::max(recon, std::abs(e[k] - a.image[k]));
  }
  rows.push_back({"quadrant16", "conditional_expectation_recovers_image", recon, recon == 0.0});
  return rows;
}

std::vector<CheckRow> ssdu_suite(const SuiteOptions& opts) {
  std::vector<CheckRow> rows;
  std::vector<Image> all;
  for (int bits = 0; bits < 16; ++bits) {
    all.emplace_back(2, std::vector<double>{double(bits & 1), double((bits >> 1) & 1), double((bits >> 2) & 1),
                                            double((bits >> 3) & 1)});
  }
  const auto dx = DiscreteDistribution::uniform(all);
  const auto bern = MaskDistribution::bernoulli_iid(2, 0.5);
  const auto r = verify_ssdu(dx, bern, bern, opts.cap);
  rows.push_back({"ssdu-2x2-bernoulli", "ssdu_identity_off_overlap", r.max_abs_error, r.holds});
  rows.push_back({"ssdu-2x2-bernoulli", "ssdu_overlap_masking_necessary", r.masked_region_max_error, r.masking_necessary});

  const auto full = MaskDistribution::point_mass(PixelMask(2, true));
  const auto empty = MaskDistribution::point_mass(PixelMask(2, false));
  const auto deg = verify_ssdu(dx, full, empty, opts.cap);
  rows.push_back({"ssdu-2x2-degenerate", "ssdu_identity_off_overlap", deg.max_abs_error, deg.holds});
  return rows;
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"all", "lemma", "theorem", "quadrant", "ssdu-2x2"};
  return names;
}

std::vector<CheckRow> run_suite(const std::string& name, const SuiteOptions& opts) {
  if (name == "lemma") return lemma_suite(opts);
  if (name == "theorem") return theorem_suite(opts);
  if (name == "quadrant") return quadrant_suite(opts);
  if (name == "ssdu-2x2") return ssdu_suite(opts);
  if (name == "all") {
    std::vector<CheckRow> rows;
    for (auto* f : {&lemma_suite, &theorem_suite, &quadrant_suite, &ssdu_suite}) {
      auto part = (*f)(opts);
      rows.insert(rows.end(), part.begin(), part.end());
    }
    return rows;
  }
  throw std::invalid_argument("unknown verification case '" + name + "'");
}

}  // namespace sdr::oracle
