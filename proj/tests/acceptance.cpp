// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Pass criterion numbers as arguments to run a subset.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sdr/gradcheck.hpp"
#include "sdr/io.hpp"
#include "sdr/layers.hpp"
#include "sdr/metrics.hpp"
#include "sdr/quadrant.hpp"
#include "sdr/rng.hpp"
#include "sdr/suites.hpp"
#include "sdr/training.hpp"
#include "sdr/unet.hpp"

using namespace sdr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  /// Wall-clock limit; 0 when the criterion has none.
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd =
      "SD_DETERMINISTIC=1 \"" SDR_CLI_PATH "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / "sdr_acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Image random_image(int n, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(n) * n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Image(n, std::move(v));
}

// ------------------------------------------------------------------ 1

Outcome operator_algebra() {
  Rng rng(101);
  double adj = 0.0, idem = 0.0;
  for (int t = 0; t < 200; ++t) {
    const int n = 2 * (1 + static_cast<int>(rng.below(16)));
    const Image x = random_image(n, rng);
    const Image y = random_image(n, rng);
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(n) * n);
    for (auto& b : bits) b = static_cast<std::uint8_t>(rng.below(2));
    const PixelMask m(n, bits);
    // <P x, P y> in sample space against <x, P* P y> summed by hand.
    const auto py = subsample(y, m);
    const Image up = zero_upsample(py, m);
    double lhs = 0.0;
    for (const auto& s : subsample(x, m)) lhs += s.value * y.at(s.i1, s.i2);
    double rhs = 0.0;
    for (int i2 = 1; i2 <= n; ++i2)
      for (int i1 = 1; i1 <= n; ++i1) rhs += x.at(i1, i2) * up.at(i1, i2);
    adj = std::max(adj, std::abs(lhs - rhs));
    const Image once = apply_mask(x, m), twice = apply_mask(once, m);
    for (std::size_t k = 0; k < once.size(); ++k) {
      idem = std::max(idem, std::abs(once[k] - twice[k]));
      if (once[k] != (bits[k] ? x[k] : 0.0)) idem = INFINITY;
    }
  }
  return {adj <= 1e-12 && idem <= 1e-12, "adjoint " + sci(adj) + ", idempotence " + sci(idem) + " over 200 cases"};
}

// ------------------------------------------------------------------ 2

Outcome gradients() {
  Outcome o;
  std::size_t layers = 0;
  for (const auto& c : ad::standard_gradchecks(0, 2, 40)) {
    const bool ok = c.result.checked > 0 && c.result.max_rel_error <= 1e-4;
    o.pass = o.pass && ok;
    if (!ok || c.name.find("unet") != std::string::npos) o.detail += c.name + " " + sci(c.result.max_rel_error) + "; ";
    ++layers;
  }
  UNetConfig cfg;
  cfg.base_channels = 2;
  o.pass = o.pass && unet_topology(cfg).size() == 21;
  o.detail += std::to_string(layers) + " cases";
  return o;
}

// ------------------------------------------------------------------ 3

Outcome transposed_adjoint() {
  Rng rng(303);
  double worst = 0.0;
  std::set<std::size_t> strides;
  for (int t = 0; t < 40; ++t) {
    const std::size_t s = 1 + rng.below(2), cin = 1 + rng.below(4), cout = 1 + rng.below(4);
    const std::size_t k = rng.below(2) ? 3 : 5;
    const std::size_t h = s * (2 + rng.below(6)), w = s * (2 + rng.below(6)), b = 1 + rng.below(2);
    strides.insert(s);
    auto rand = [&](const ad::Shape& sh) {
      std::vector<double> v(ad::numel(sh));
      for (auto& x : v) x = rng.uniform(-1.0, 1.0);
      return ad::Tensor<double>(sh, std::move(v));
    };
    const ad::ConvSpec fwd{cin, cout, k, s, false}, adj{cout, cin, k, s, true};
    const auto weight = rand(fwd.weight_shape());
    const auto x = rand({b, cin, h, w});
    const auto y = rand({b, cout, h / s, w / s});
    const auto ax = ad::conv2d_circular(x, weight, ad::Tensor<double>::zeros({cout}), fwd);
    const auto aty = ad::conv_transpose2d_circular(y, weight, ad::Tensor<double>::zeros({cin}), adj);
    double lhs = 0.0, rhs = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += ax.values()[i] * y.values()[i];
    for (std::size_t i = 0; i < x.size(); ++i) {
      rhs += x.values()[i] * aty.values()[i];
      scale += std::abs(x.values()[i] * aty.values()[i]);
    }
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, scale));
  }
  return {worst <= 1e-10 && strides.size() == 2, "max scaled |<Ax,y> - <x,A*y>| " + sci(worst) + " over 40 shapes"};
}

// ------------------------------------------------------------------ 4

Outcome equivariance() {
  const UNet<double> net(UNetConfig{}, 404);
  Rng rng(404);
  std::vector<Shift> shifts;
  for (int k = 0; k < 20; ++k) shifts.push_back({8 * static_cast<int>(rng.below(16)), 8 * static_cast<int>(rng.below(16))});
  shifts.push_back({1, 0});
  const auto r = check_equivariance(net, 128, 5, shifts, 404);
  double worst = 0.0, odd = 0.0;
  std::size_t guaranteed = 0;
  for (const auto& e : r.shifts) {
    if (e.guaranteed) {
      ++guaranteed;
      worst = std::max(worst, e.max_rel_error);
    } else {
      odd = e.max_rel_error;
    }
  }
  return {guaranteed == 20 && worst <= 1e-10 && r.tolerance == 1e-10,
          "max rel error " + sci(worst) + " over 20 shifts x 5 inputs; shift (1,0) measured " + sci(odd)};
}

// ------------------------------------------------------------------ 5

Outcome lemma() {
  const auto rows = oracle::lemma_suite();
  std::size_t invariant = 0;
  bool quadrant = false, counterexample = false, ok = true;
  double worst = 0.0;
  for (const auto& r : rows) {
    if (r.check == "lemma_invariance") {
      ++invariant;
      ok = ok && r.holds && r.max_abs_error <= 1e-12;
      worst = std::max(worst, r.max_abs_error);
      quadrant = quadrant || r.case_id.rfind("quadrant16", 0) == 0;
    } else if (r.check == "lemma_counterexample_detected") {
      counterexample = counterexample || r.holds;
    }
  }
  return {ok && invariant >= 10 && quadrant && counterexample,
          std::to_string(invariant) + " invariant triples, max error " + sci(worst) +
              (counterexample ? ", counterexample detected" : ", no counterexample")};
}

// ------------------------------------------------------------------ 6

Outcome theorem() {
  auto rows = oracle::quadrant_suite();
  const auto more = oracle::theorem_suite();
  rows.insert(rows.end(), more.begin(), more.end());
  std::size_t random4 = 0;
  bool quadrant = false, ok = true;
  double worst = 0.0;
  for (const auto& r : rows) {
    if (r.check != "local_minimizer_equals_conditional_expectation") continue;
    ok = ok && r.holds && r.max_abs_error <= 1e-10;
    worst = std::max(worst, r.max_abs_error);
    if (r.case_id.rfind("random4-", 0) == 0) ++random4;
    if (r.case_id == "quadrant16") quadrant = true;
  }
  return {ok && quadrant && random4 >= 20,
          "quadrant16 + " + std::to_string(random4) + " seeded 4x4 laws, max error " + sci(worst)};
}

// ------------------------------------------------------------------ 7

Outcome ssdu() {
  for (const auto& r : oracle::ssdu_suite()) {
    if (r.case_id == "ssdu-2x2-bernoulli" && r.check == "ssdu_identity_off_overlap") {
      return {r.holds && r.max_abs_error <= 1e-10, "max error off the overlap " + sci(r.max_abs_error)};
    }
  }
  return {false, "row missing"};
}

// ------------------------------------------------------------------ 8

std::vector<Image> draw(std::size_t count, std::uint64_t seed, std::uint64_t offset) {
  std::vector<Image> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(render_quadrant_image({16, sample_placement(hash_combine(seed, offset + i))}));
  }
  return out;
}

double mse_on(const Image& pred, const Image& gt, const PixelMask& region) {
  double s = 0.0;
  std::size_t count = 0;
  for (int i2 = 1; i2 <= gt.n(); ++i2)
    for (int i1 = 1; i1 <= gt.n(); ++i1)
      if (region.at(i1, i2)) {
        s += std::pow(pred.at(i1, i2) - gt.at(i1, i2), 2);
        ++count;
      }
  return s / static_cast<double>(count);
}

Outcome end_to_end() {
  const auto design = make_sparse_dense_masks(16);
  const PixelMask outside_b = ~design.b;
  std::vector<Image> atoms;
  for (int k = 0; k < 4; ++k) atoms.push_back(render_quadrant_image({16, k}));

  Outcome o;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    // Same split sizes and per-image seeds as the default `gen` run.
    const Dataset data{draw(64, seed, 0), draw(16, seed, 64)};
    TrainConfig cfg;
    cfg.seed = seed;
    const auto sd = train(data, cfg);
    cfg.mode = TrainMode::patch_wise;
    cfg.patch = 8;
    const auto pw = train_any(data, cfg);

    double sd_worst = 0.0, sd_mean = 0.0, sd_out = 0.0, pw_out = 0.0, bl_mean = 0.0;
    for (const auto& x : atoms) {
      const Image y = apply_mask(x, design.omega);
      const Image a = restore(sd.model, y), b = restore(pw.model, y), c = bilinear_upsample(y, design.omega);
      sd_worst = std::max(sd_worst, mse(a, x));
      sd_mean += mse(a, x) / 4;
      bl_mean += mse(c, x) / 4;
      sd_out += mse_on(a, x, outside_b) / 4;
      pw_out += mse_on(b, x, outside_b) / 4;
    }
    const bool ok = sd_worst <= 1e-3 && pw_out >= 10.0 * sd_out && bl_mean >= sd_mean;
    o.pass = o.pass && ok;
    o.detail += "seed " + std::to_string(seed) + ": sd max " + sci(sd_worst) + ", off-B sd " + sci(sd_out) + " vs patch " +
                sci(pw_out) + ", bilinear " + sci(bl_mean) + " (best epoch " + std::to_string(sd.history.best_epoch) +
                "); ";
  }
  return o;
}

// ------------------------------------------------------------------ 9

Outcome budget_and_sentinel() {
  bool ratio_ok = true;
  for (int n = 4; n <= 512; n += 4) {
    const auto d = make_sparse_dense_masks(n);
    std::size_t expected = 0;
    for (int i2 = 1; i2 <= n; ++i2)
      for (int i1 = 1; i1 <= n; ++i1) expected += ((i1 % 2 == 1 && i2 % 2 == 1) || (i1 <= n / 2 && i2 <= n / 2)) ? 1 : 0;
    const std::size_t got = (d.omega | d.b).popcount();
    ratio_ok = ratio_ok && got == expected && static_cast<double>(got) / (static_cast<double>(n) * n) == 0.4375;
  }

  // Training on data whose unmeasured pixels are overwritten must give
  // bit-identical parameters.
  const auto design = make_sparse_dense_masks(16);
  const PixelMask measured = design.omega | design.b;
  const auto clean = draw(16, 9, 0);
  std::vector<Image> poisoned;
  for (const auto& x : clean) {
    std::vector<double> v(x.data().begin(), x.data().end());
    for (std::size_t k = 0; k < v.size(); ++k)
      if (!measured[k]) v[k] = kSentinel;
    poisoned.emplace_back(16, std::move(v));
  }
  bool blind = true;
  for (TrainMode mode : {TrainMode::sparse_dense, TrainMode::patch_wise}) {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.model.base_channels = 4;
    cfg.mode = mode;
    cfg.patch = 8;
    const auto a = train_any({clean, {}}, cfg), b = train_any({poisoned, {}}, cfg);
    for (std::size_t k = 0; k < a.model.parameters().size(); ++k) {
      const auto x = a.model.parameters()[k].values(), y = b.model.parameters()[k].values();
      blind = blind && std::equal(x.begin(), x.end(), y.begin(), y.end());
    }
    blind = blind && a.history.to_csv() == b.history.to_csv();
  }
  return {ratio_ok && blind, std::string("|Omega u B|/n^2 = 0.4375 for n = 4..512: ") + (ratio_ok ? "yes" : "no") +
                                 "; sentinel-poisoned training identical: " + (blind ? "yes" : "no")};
}

// ------------------------------------------------------------------ 10

Outcome determinism() {
  const auto root = scratch("determinism");
  const auto log = root / "log.txt";
  bool ok = run_cli("gen --seed 21 --out " + q(root / "gen_a"), log) == 0 &&
            run_cli("gen --seed 21 --out " + q(root / "gen_b"), log) == 0;
  std::size_t files = 0;
  if (ok) {
    for (const auto& e : fs::directory_iterator(root / "gen_a")) {
      ++files;
      ok = ok && slurp(e.path()) == slurp(root / "gen_b" / e.path().filename());
    }
  }
  const std::string train_args = "train --data " + q(root / "gen_a") + " --seed 5 --epochs 3 --base-channels 8 --out ";
  ok = ok && run_cli(train_args + q(root / "run_a"), log) == 0 && run_cli(train_args + q(root / "run_b"), log) == 0;
  const bool same_ck = ok && slurp(root / "run_a" / "checkpoint.sdck") == slurp(root / "run_b" / "checkpoint.sdck") &&
                       slurp(root / "run_a" / "history.csv") == slurp(root / "run_b" / "history.csv");
  return {ok && same_ck && files == 98,
          std::to_string(files) + " dataset files identical; checkpoints identical: " + (same_ck ? "yes" : "no")};
}

// ------------------------------------------------------------------ 11

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  return out;
}

Outcome sweep() {
  const auto root = scratch("sweep");
  const auto csv = root / "sweep.csv";
  if (run_cli("sweep --patches 8,4,2 --patchwise 8 --epochs 5 --base-channels 8 --train 16 --val 4 --test 5 --out " +
                  q(csv),
              root / "log.txt") != 0) {
    return {false, "sweep exited nonzero: " + slurp(root / "log.txt")};
  }
  std::istringstream in(slurp(csv));
  std::string line;
  std::getline(in, line);
  bool ok = line == "mode,patch,train_images,test_images,test_mse_mean,test_mse_std,best_val_loss";
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    const auto f = split_csv(line);
    if (f.size() != 7) {
      ok = false;
      continue;
    }
    seen.insert(f[0] + ":" + f[1]);
    ok = ok && f[3] == "5";
    for (std::size_t k = 4; k < 7; ++k) {
      std::size_t used = 0;
      const double v = std::stod(f[k], &used);
      ok = ok && used == f[k].size() && std::isfinite(v) && v >= 0.0;
    }
  }
  const std::set<std::string> expected{"sparse-dense:8", "sparse-dense:4", "sparse-dense:2", "patch:8"};
  ok = ok && seen == expected;
  return {ok, std::to_string(seen.size()) + " rows"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "operator algebra", 1, operator_algebra},
      {2, "gradient correctness", 120, gradients},
      {3, "adjoint transposed convolution", 10, transposed_adjoint},
      {4, "equivariance under multiples of 8", 120, equivariance},
      {5, "lemma oracle", 30, lemma},
      {6, "theorem oracle", 60, theorem},
      {7, "ssdu oracle", 60, ssdu},
      {8, "synthetic end-to-end", 900, end_to_end},
      {9, "measurement budget and sentinel", 0, budget_and_sentinel},
      {10, "determinism", 0, determinism},
      {11, "sweep machinery", 0, sweep},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.budget_seconds <= 0 || secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    char timing[64];
    if (c.budget_seconds > 0) {
      std::snprintf(timing, sizeof timing, "%.2f s of %.0f s%s", secs, c.budget_seconds, in_time ? "" : ", over budget");
    } else {
      std::snprintf(timing, sizeof timing, "%.2f s", secs);
    }
    std::printf("AC%-2d %s  %s: %s [%s]\n", c.id, pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(), timing);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
