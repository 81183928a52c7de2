#pragma once

#include <string>
#include <vector>

#include "sdr/oracle.hpp"

namespace sdr::oracle {

struct SuiteOptions {
  std::size_t cap = kDefaultEnumerationCap;
  int random_distributions = 20;
  std::uint64_t seed = 0;
};

/// Invariant (distribution, mask, shift) triples including the quadrant
/// law, plus one non-invariant mask whose counterexample must be found.
std::vector<CheckRow> lemma_suite(const SuiteOptions& opts = {});

/// Local-loss minimiser against the conditional expectation on seeded
/// invariant 4x4 laws and a point mass, plus a case violating the mask
/// invariance where the two must differ.
std::vector<CheckRow> theorem_suite(const SuiteOptions& opts = {});

/// The 16x16 quadrant law with the sparse-dense design.
std::vector<CheckRow> quadrant_suite(const SuiteOptions& opts = {});

/// 2x2 binary X with i.i.d. Bernoulli(1/2) masks, a degenerate mask pair
/// and the masked-region necessity probe.
std::vector<CheckRow> ssdu_suite(const SuiteOptions& opts = {});

/// Names accepted by run_suite: all, lemma, theorem, quadrant, ssdu-2x2.
const std::vector<std::string>& suite_names();
std::vector<CheckRow> run_suite(const std::string& name, const SuiteOptions& opts = {});

}  // namespace sdr::oracle
