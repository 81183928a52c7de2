#pragma once

// Exact finite-probability engine. Every quantity here is computed by
// enumerating the support of a discrete law, so results are exact up to
// floating-point summation. Observations are matched bitwise.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sdr/sampling.hpp"

namespace sdr::oracle {

inline constexpr std::size_t kDefaultEnumerationCap = 1'000'000;
inline constexpr double kProbabilityTolerance = 1e-12;
inline constexpr double kLemmaTolerance = 1e-12;
inline constexpr double kTheoremTolerance = 1e-10;
inline constexpr double kSsduTolerance = 1e-10;

class EnumerationCapExceeded : public std::runtime_error {
 public:
  EnumerationCapExceeded(std::size_t requested, std::size_t cap);
  std::size_t requested() const { return requested_; }
  std::size_t cap() const { return cap_; }

 private:
  std::size_t requested_;
  std::size_t cap_;
};

class ZeroProbabilityObservation : public std::invalid_argument {
 public:
  ZeroProbabilityObservation() : std::invalid_argument("observation has zero probability") {}
};

class PreconditionViolation : public std::invalid_argument {
 public:
  explicit PreconditionViolation(const std::vector<std::string>& failures);
  const std::vector<std::string>& failures() const { return failures_; }

 private:
  std::vector<std::string> failures_;
};

struct Atom {
  Image image;
  double prob;
};

/// Law of a random image with finite support. Duplicate images are merged;
/// atoms are kept sorted by image.
class DiscreteDistribution {
 public:
  explicit DiscreteDistribution(const std::vector<std::pair<Image, double>>& atoms);

  static DiscreteDistribution point_mass(const Image& x);
  static DiscreteDistribution uniform(const std::vector<Image>& images);
  /// Uniform over {T_g x : g in the group generated by family}, with
  /// multiplicities merged.
  static DiscreteDistribution shift_orbit(const Image& x, const TranslationFamily& family);

  int n() const { return n_; }
  const std::vector<Atom>& atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }
  Image mean() const;

  /// Mass of the image, 0 if outside the support.
  double prob(const Image& x) const;

 private:
  int n_ = 0;
  std::vector<Atom> atoms_;
};

struct MaskAtom {
  PixelMask mask;
  double prob;
};

class MaskDistribution {
 public:
  explicit MaskDistribution(const std::vector<std::pair<PixelMask, double>>& atoms);

  static MaskDistribution point_mass(const PixelMask& m);
  /// Every pixel included independently with probability q. Enumerates all
  /// 2^(n*n) masks, so n*n must stay small.
  static MaskDistribution bernoulli_iid(int n, double q);

  int n() const { return n_; }
  const std::vector<MaskAtom>& atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }
  /// Pixelwise E[M], row-major over (i2, i1).
  std::vector<double> mean() const;

 private:
  int n_ = 0;
  std::vector<MaskAtom> atoms_;
};

/// All group elements generated by the family, identity first.
std::vector<Shift> generated_group(const TranslationFamily& family);

/// Law of M ⊙ X.
DiscreteDistribution observation_law(const DiscreteDistribution& d, const PixelMask& m);

/// E[X | M ⊙ X = y]; throws ZeroProbabilityObservation when y is not attained.
Image conditional_expectation(const DiscreteDistribution& d, const PixelMask& m, const Image& y);

bool check_distribution_invariance(const DiscreteDistribution& d, const Shift& s);

/// Throws PreconditionViolation unless d itself is s-invariant.
bool check_masked_invariance(const DiscreteDistribution& d, const PixelMask& m, const Shift& s);

struct LemmaReport {
  double max_abs_error = 0.0;
  bool holds = false;
  std::size_t observations = 0;
  std::vector<std::string> precondition_failures;
  std::optional<Image> witness;
};

/// Compares T(E[X|y]) with E[X|T(y)] for every attained observation y.
LemmaReport verify_lemma_invariance(const DiscreteDistribution& d, const PixelMask& m, const Shift& s);

/// Restorer that commutes with a translation group by construction: values
/// are stored only for orbit representatives (the lexicographically
/// smallest element of each orbit) and extended by translation.
class EquivariantTable {
 public:
  EquivariantTable(TranslationFamily family, std::map<Image, Image> entries);

  const TranslationFamily& family() const { return family_; }
  const std::map<Image, Image>& entries() const { return entries_; }

  /// Orbit representative of y and a group element g with T_g(y) = rep.
  std::pair<Image, Shift> canonicalize(const Image& y) const;

  Image operator()(const Image& y) const;

 private:
  TranslationFamily family_;
  std::vector<Shift> group_;
  std::map<Image, Image> entries_;
};

struct LocalLossOptions {
  /// When false the closed form is evaluated even if the invariance or
  /// partition conditions fail, which is how counterexamples are built.
  bool enforce_conditions = true;
};

/// Names of the failed framework conditions (empty when all hold).
std::vector<std::string> local_supervision_condition_failures(const DiscreteDistribution& d, const PixelMask& omega,
                                                              const PixelMask& b, const TranslationFamily& family);

/// Exact minimiser of E||M_B ⊙ f(X_Ω) - X_B||² over family-equivariant f.
EquivariantTable minimize_local_loss_equivariant(const DiscreteDistribution& d, const PixelMask& omega,
                                                 const PixelMask& b, const TranslationFamily& family,
                                                 LocalLossOptions opts = {});

struct TheoremReport {
  double equivariance_error = 0.0;
  bool equivariant = false;
  double max_abs_error = 0.0;
  bool holds = false;
  std::size_t observations = 0;
  std::vector<std::string> precondition_failures;
};

TheoremReport verify_theorem_local_supervision(const DiscreteDistribution& d, const PixelMask& omega,
                                               const PixelMask& b, const TranslationFamily& family,
                                               LocalLossOptions opts = {});

struct SsduReport {
  /// max |lhs - rhs| over pixels outside Ω∩Λ, over all joint realisations.
  double max_abs_error = 0.0;
  bool holds = false;
  /// Same comparison restricted to Ω∩Λ; the minimiser is unconstrained
  /// there and taken as 0.
  double masked_region_max_error = 0.0;
  bool masking_necessary = false;
  std::size_t joint_atoms = 0;
  std::size_t conditioning_values = 0;
  std::size_t undetermined_pixels = 0;
};

/// Enumerates the product law of (X, Ω, Λ). The conditioning variable is
/// the re-masked data M_Λ ⊙ X_Ω together with its sampling pattern Ω∩Λ.
SsduReport verify_ssdu(const DiscreteDistribution& dx, const MaskDistribution& domega,
                       const MaskDistribution& dlambda, std::size_t cap = kDefaultEnumerationCap);

/// Shift-invariant law on n x n images: num_bases random images with
/// values in {0, 0.5, 1}, each spread uniformly over its orbit.
DiscreteDistribution random_invariant_distribution(int n, const TranslationFamily& family, int num_bases,
                                                   std::uint64_t seed);

struct CheckRow {
  std::string case_id;
  std::string check;
  double max_abs_error;
  bool holds;
};

std::string reports_to_csv(const std::vector<CheckRow>& rows);
std::string reports_to_text(const std::vector<CheckRow>& rows);

}  // namespace sdr::oracle
