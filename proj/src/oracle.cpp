#include "sdr/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "sdr/rng.hpp"

namespace sdr::oracle {
namespace {

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += "; ";
    out += p;
  }
  return out;
}

std::string shift_name(const Shift& s) { return "(" + std::to_string(s.a) + "," + std::to_string(s.b) + ")"; }

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

std::map<Image, double> to_weight_map(const DiscreteDistribution& d) {
  std::map<Image, double> w;
  for (const auto& a : d.atoms()) w.emplace(a.image, a.prob);
  return w;
}

bool same_law(const std::map<Image, double>& p, const std::map<Image, double>& q) {
  if (p.size() != q.size()) return false;
  for (const auto& [img, mass] : p) {
    auto it = q.find(img);
    if (it == q.end() || std::abs(it->second - mass) > kProbabilityTolerance) return false;
  }
  return true;
}

template <typename AtomT>
void validate_probabilities(const std::vector<AtomT>& atoms) {
  if (atoms.empty()) throw std::invalid_argument("distribution needs at least one atom");
  double total = 0.0;
  for (const auto& a : atoms) {
    if (!(a.prob > 0.0)) throw std::invalid_argument("atom probabilities must be positive");
    total += a.prob;
  }
  if (std::abs(total - 1.0) > kProbabilityTolerance) {
    throw std::invalid_argument("atom probabilities must sum to 1");
  }
}

}  // namespace

EnumerationCapExceeded::EnumerationCapExceeded(std::size_t requested, std::size_t cap)
    : std::runtime_error("enumeration cap exceeded: " + std::to_string(requested) + " joint atoms > cap " +
                         std::to_string(cap)),
      requested_(requested),
      cap_(cap) {}

PreconditionViolation::PreconditionViolation(const std::vector<std::string>& failures)
    : std::invalid_argument("precondition violated: " + join(failures)), failures_(failures) {}

DiscreteDistribution::DiscreteDistribution(const std::vector<std::pair<Image, double>>& atoms) {
  std::map<Image, double> merged;
  for (const auto& [img, p] : atoms) {
    if (n_ == 0) n_ = img.n();
    if (img.n() != n_) throw std::invalid_argument("all atoms must share the same side length");
    merged[img] += p;
  }
  for (auto& [img, p] : merged) atoms_.push_back({img, p});
  validate_probabilities(atoms_);
}

DiscreteDistribution DiscreteDistribution::point_mass(const Image& x) { return DiscreteDistribution({{x, 1.0}}); }

DiscreteDistribution DiscreteDistribution::uniform(const std::vector<Image>& images) {
  std::vector<std::pair<Image, double>> atoms;
  for (const auto& img : images) atoms.emplace_back(img, 1.0 / static_cast<double>(images.size()));
  return DiscreteDistribution(atoms);
}

DiscreteDistribution DiscreteDistribution::shift_orbit(const Image& x, const TranslationFamily& family) {
  const auto group = generated_group(family);
  std::vector<std::pair<Image, double>> atoms;
  for (const auto& g : group) atoms.emplace_back(apply_shift(x, g), 1.0 / static_cast<double>(group.size()));
  return DiscreteDistribution(atoms);
}

Image DiscreteDistribution::mean() const {
  std::vector<double> acc(static_cast<std::size_t>(n_) * n_, 0.0);
  for (const auto& a : atoms_)
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += a.prob * a.image[k];
  return Image(n_, std::move(acc));
}

double DiscreteDistribution::prob(const Image& x) const {
  auto it = std::lower_bound(atoms_.begin(), atoms_.end(), x,
                             [](const Atom& a, const Image& img) { return a.image < img; });
  return (it != atoms_.end() && it->image == x) ? it->prob : 0.0;
}

MaskDistribution::MaskDistribution(const std::vector<std::pair<PixelMask, double>>& atoms) {
  std::map<PixelMask, double> merged;
  for (const auto& [m, p] : atoms) {
    if (n_ == 0) n_ = m.n();
    if (m.n() != n_) throw std::invalid_argument("all masks must share the same side length");
    merged[m] += p;
  }
  for (auto& [m, p] : merged) atoms_.push_back({m, p});
  validate_probabilities(atoms_);
}

MaskDistribution MaskDistribution::point_mass(const PixelMask& m) { return MaskDistribution({{m, 1.0}}); }

MaskDistribution MaskDistribution::bernoulli_iid(int n, double q) {
  const int npix = n * n;
  if (npix > 20) throw std::invalid_argument("bernoulli_iid enumerates 2^(n*n) masks; n*n must be <= 20");
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("inclusion probability must lie in [0,1]");
  std::vector<std::pair<PixelMask, double>> atoms;
  for (std::uint32_t code = 0; code < (1u << npix); ++code) {
    std::vector<std::uint8_t> bits(npix);
    double p = 1.0;
    for (int k = 0; k < npix; ++k) {
      bits[k] = (code >> k) & 1u;
      p *= bits[k] ? q : 1.0 - q;
    }
    if (p > 0.0) atoms.emplace_back(PixelMask(n, std::move(bits)), p);
  }
  return MaskDistribution(atoms);
}

std::vector<double> MaskDistribution::mean() const {
  std::vector<double> acc(static_cast<std::size_t>(n_) * n_, 0.0);
  for (const auto& a : atoms_)
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += a.mask[k] ? a.prob : 0.0;
  return acc;
}

std::vector<Shift> generated_group(const TranslationFamily& family) {
  const int n = family.n();
  std::vector<Shift> group{Shift{}};
  std::set<Shift> seen{Shift{}};
  for (std::size_t head = 0; head < group.size(); ++head) {
    for (const auto& s : family.shifts()) {
      Shift next = group[head].compose(s, n);
      if (seen.insert(next).second) group.push_back(next);
    }
  }
  return group;
}

DiscreteDistribution observation_law(const DiscreteDistribution& d, const PixelMask& m) {
  std::vector<std::pair<Image, double>> atoms;
  atoms.reserve(d.size());
  for (const auto& a : d.atoms()) atoms.emplace_back(apply_mask(a.image, m), a.prob);
  return DiscreteDistribution(atoms);
}

Image conditional_expectation(const DiscreteDistribution& d, const PixelMask& m, const Image& y) {
  if (y.n() != d.n() || m.n() != d.n()) throw DimensionMismatch();
  std::vector<double> acc(y.size(), 0.0);
  double mass = 0.0;
  for (const auto& a : d.atoms()) {
    if (apply_mask(a.image, m) != y) continue;
    mass += a.prob;
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += a.prob * a.image[k];
  }
  if (mass <= 0.0) throw ZeroProbabilityObservation();
  for (auto& v : acc) v /= mass;
  return Image(y.n(), std::move(acc));
}

bool check_distribution_invariance(const DiscreteDistribution& d, const Shift& s) {
  std::map<Image, double> pushed;
  for (const auto& a : d.atoms()) pushed[apply_shift(a.image, s)] += a.prob;
  return same_law(pushed, to_weight_map(d));
}

bool check_masked_invariance(const DiscreteDistribution& d, const PixelMask& m, const Shift& s) {
  if (!check_distribution_invariance(d, s)) {
    throw PreconditionViolation({"X is not invariant under " + shift_name(s)});
  }
  return check_distribution_invariance(observation_law(d, m), s);
}

LemmaReport verify_lemma_invariance(const DiscreteDistribution& d, const PixelMask& m, const Shift& s) {
  LemmaReport report;
  if (!check_distribution_invariance(d, s)) {
    report.precondition_failures.push_back("X is not invariant under " + shift_name(s));
  } else if (!check_masked_invariance(d, m, s)) {
    report.precondition_failures.push_back("masked X is not invariant under " + shift_name(s));
  }

  const auto law = observation_law(d, m);
  for (const auto& obs : law.atoms()) {
    ++report.observations;
    const Image lhs = apply_shift(conditional_expectation(d, m, obs.image), s);
    double err = std::numeric_limits<double>::infinity();
    try {
      err = max_abs_diff(lhs, conditional_expectation(d, m, apply_shift(obs.image, s)));
    } catch (const ZeroProbabilityObservation&) {
      // Shifted observation is never produced: the two sides cannot agree.
    }
    if (err > report.max_abs_error) {
      report.max_abs_error = err;
      if (err > kLemmaTolerance) report.witness = obs.image;
    }
  }
  report.holds = report.precondition_failures.empty() && report.max_abs_error <= kLemmaTolerance;
  return report;
}

EquivariantTable::EquivariantTable(TranslationFamily family, std::map<Image, Image> entries)
    : family_(std::move(family)), group_(generated_group(family_)), entries_(std::move(entries)) {}

std::pair<Image, Shift> EquivariantTable::canonicalize(const Image& y) const {
  std::pair<Image, Shift> best{y, Shift{}};
  for (const auto& g : group_) {
    Image moved = apply_shift(y, g);
    if (moved < best.first) best = {std::move(moved), g};
  }
  return best;
}

Image EquivariantTable::operator()(const Image& y) const {
  auto [rep, g] = canonicalize(y);
  auto it = entries_.find(rep);
  if (it == entries_.end()) throw ZeroProbabilityObservation();
  return apply_shift(it->second, g.inverse(family_.n()));
}

std::vector<std::string> local_supervision_condition_failures(const DiscreteDistribution& d, const PixelMask& omega,
                                                              const PixelMask& b, const TranslationFamily& family) {
  std::vector<std::string> failures;
  if (omega.n() != d.n() || b.n() != d.n() || family.n() != d.n()) {
    failures.emplace_back("size mismatch between distribution, masks and family");
    return failures;
  }
  for (const auto& s : family.shifts()) {
    if (!check_distribution_invariance(d, s)) {
      failures.push_back("B3 invariance: X not invariant under " + shift_name(s));
    } else if (!check_masked_invariance(d, omega, s)) {
      failures.push_back("B3 invariance: Omega not invariant under " + shift_name(s));
    }
  }
  if (!check_partition(family, b)) failures.emplace_back("B4 partition: translates of B do not partition I");
  return failures;
}

EquivariantTable minimize_local_loss_equivariant(const DiscreteDistribution& d, const PixelMask& omega,
                                                 const PixelMask& b, const TranslationFamily& family,
                                                 LocalLossOptions opts) {
  if (opts.enforce_conditions) {
    auto failures = local_supervision_condition_failures(d, omega, b, family);
    if (!failures.empty()) throw PreconditionViolation(failures);
  }
  const int n = d.n();
  const std::size_t npix = static_cast<std::size_t>(n) * n;
  EquivariantTable canon(family, {});
  const auto group = generated_group(family);

  // For every (atom, g) with T_g(M_Ω ⊙ x) equal to the orbit representative
  // r, the loss term ||M_B ⊙ (f(y) - x)||² equals
  // ||T_g(M_B) ⊙ (f(r) - T_g x)||², so f(r) is a pixelwise weighted mean.
  struct Accum {
    std::vector<double> num, den;
  };
  std::map<Image, Accum> acc;
  for (const auto& atom : d.atoms()) {
    const Image y = apply_mask(atom.image, omega);
    const Image rep = canon.canonicalize(y).first;
    auto& slot = acc[rep];
    if (slot.num.empty()) {
      slot.num.assign(npix, 0.0);
      slot.den.assign(npix, 0.0);
    }
    for (const auto& g : group) {
      if (apply_shift(y, g) != rep) continue;
      const PixelMask weight = apply_shift(b, g);
      const Image target = apply_shift(atom.image, g);
      for (std::size_t k = 0; k < npix; ++k) {
        if (!weight[k]) continue;
        slot.num[k] += atom.prob * target[k];
        slot.den[k] += atom.prob;
      }
    }
  }

  std::map<Image, Image> entries;
  for (auto& [rep, a] : acc) {
    std::vector<double> value(npix, 0.0);
    for (std::size_t k = 0; k < npix; ++k) {
      if (a.den[k] > 0.0) {
        value[k] = a.num[k] / a.den[k];
      } else if (opts.enforce_conditions) {
        throw PreconditionViolation({"B4 partition: pixel never supervised for some orbit"});
      }
    }
    entries.emplace(rep, Image(n, std::move(value)));
  }
  return EquivariantTable(family, std::move(entries));
}

TheoremReport verify_theorem_local_supervision(const DiscreteDistribution& d, const PixelMask& omega,
                                               const PixelMask& b, const TranslationFamily& family,
                                               LocalLossOptions opts) {
  TheoremReport report;
  report.precondition_failures = local_supervision_condition_failures(d, omega, b, family);
  if (!report.precondition_failures.empty() && opts.enforce_conditions) return report;

  report.equivariant = true;
  for (const auto& s : family.shifts()) {
    const auto lemma = verify_lemma_invariance(d, omega, s);
    report.equivariance_error = std::max(report.equivariance_error, lemma.max_abs_error);
    report.equivariant = report.equivariant && lemma.holds;
  }

  const auto table = minimize_local_loss_equivariant(d, omega, b, family, LocalLossOptions{false});
  const auto law = observation_law(d, omega);
  for (const auto& obs : law.atoms()) {
    ++report.observations;
    report.max_abs_error =
        std::max(report.max_abs_error, max_abs_diff(table(obs.image), conditional_expectation(d, omega, obs.image)));
  }
  report.holds =
      report.precondition_failures.empty() && report.equivariant && report.max_abs_error <= kTheoremTolerance;
  return report;
}

SsduReport verify_ssdu(const DiscreteDistribution& dx, const MaskDistribution& domega,
                       const MaskDistribution& dlambda, std::size_t cap) {
  const int n = dx.n();
  if (domega.n() != n || dlambda.n() != n) throw DimensionMismatch();
  const std::size_t joint = dx.size() * domega.size() * dlambda.size();
  if (joint > cap) throw EnumerationCapExceeded(joint, cap);

  std::vector<std::string> failures;
  const auto mo = domega.mean();
  const auto ml = dlambda.mean();
  for (std::size_t k = 0; k < mo.size(); ++k) {
    if (!(mo[k] > 0.0)) failures.push_back("E[M_Omega] must be > 0 at pixel " + std::to_string(k));
    if (!(ml[k] < 1.0)) failures.push_back("E[M_Lambda] must be < 1 at pixel " + std::to_string(k));
  }
  if (!failures.empty()) throw PreconditionViolation(failures);

  const std::size_t npix = static_cast<std::size_t>(n) * n;
  struct Accum {
    double mass = 0.0;
    std::vector<double> sum_x, num, den;
  };
  using Key = std::pair<Image, PixelMask>;
  std::map<Key, Accum> cond;

  auto key_of = [](const Image& x, const PixelMask& om, const PixelMask& la) {
    const PixelMask both = om & la;
    return Key{apply_mask(x, both), both};
  };

  for (const auto& ax : dx.atoms()) {
    for (const auto& ao : domega.atoms()) {
      for (const auto& al : dlambda.atoms()) {
        const double p = ax.prob * ao.prob * al.prob;
        auto& a = cond[key_of(ax.image, ao.mask, al.mask)];
        if (a.sum_x.empty()) {
          a.sum_x.assign(npix, 0.0);
          a.num.assign(npix, 0.0);
          a.den.assign(npix, 0.0);
        }
        a.mass += p;
        for (std::size_t k = 0; k < npix; ++k) {
          a.sum_x[k] += p * ax.image[k];
          // Loss weight (1 - Λ_i) Ω_i: pixel was measured but held out.
          if (ao.mask[k] && !al.mask[k]) {
            a.num[k] += p * ax.image[k];
            a.den[k] += p;
          }
        }
      }
    }
  }

  SsduReport report;
  report.joint_atoms = joint;
  report.conditioning_values = cond.size();
  for (const auto& [key, a] : cond) {
    const PixelMask& both = key.second;
    for (std::size_t k = 0; k < npix; ++k) {
      const double lhs = a.sum_x[k] / a.mass;
      const bool determined = a.den[k] > 0.0;
      const double rhs = determined ? a.num[k] / a.den[k] : 0.0;
      if (both[k]) {
        report.masked_region_max_error = std::max(report.masked_region_max_error, std::abs(lhs - rhs));
      } else if (!determined) {
        ++report.undetermined_pixels;
        report.max_abs_error = std::numeric_limits<double>::infinity();
      } else {
        report.max_abs_error = std::max(report.max_abs_error, std::abs(lhs - rhs));
      }
    }
  }
  report.holds = report.max_abs_error <= kSsduTolerance;
  report.masking_necessary = report.masked_region_max_error > kSsduTolerance;
  return report;
}

DiscreteDistribution random_invariant_distribution(int n, const TranslationFamily& family, int num_bases,
                                                   std::uint64_t seed) {
  if (num_bases < 1) throw std::invalid_argument("need at least one base image");
  Rng rng(seed);
  const auto group = generated_group(family);
  std::vector<std::pair<Image, double>> atoms;
  std::vector<double> weights(num_bases);
  for (auto& w : weights) w = 1.0 + static_cast<double>(rng.below(4));
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (int k = 0; k < num_bases; ++k) {
    std::vector<double> px(static_cast<std::size_t>(n) * n);
    for (auto& v : px) v = 0.5 * static_cast<double>(rng.below(3));
    const Image base(n, std::move(px));
    for (const auto& g : group) {
      atoms.emplace_back(apply_shift(base, g), weights[k] / total / static_cast<double>(group.size()));
    }
  }
  return DiscreteDistribution(atoms);
}

std::string reports_to_csv(const std::vector<CheckRow>& rows) {
  std::ostringstream os;
  os << "case_id,check,max_abs_error,holds\n";
  os.precision(6);
  for (const auto& r : rows) {
    os << r.case_id << ',' << r.check << ',' << std::scientific << r.max_abs_error << ','
       << (r.holds ? "true" : "false") << '\n';
  }
  return os.str();
}

std::string reports_to_text(const std::vector<CheckRow>& rows) {
  std::ostringstream os;
  os.precision(3);
  for (const auto& r : rows) {
    os << (r.holds ? "[ok]   " : "[FAIL] ") << r.case_id << " / " << r.check << "  max_abs_error=" << std::scientific
       << r.max_abs_error << '\n';
  }
  return os.str();
}

}  // namespace sdr::oracle
