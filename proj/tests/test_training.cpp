#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "sdr/io.hpp"
#include "sdr/quadrant.hpp"
#include "sdr/rng.hpp"
#include "sdr/training.hpp"

using namespace sdr;

namespace {

std::vector<Image> quadrant_set(std::size_t count, std::uint64_t seed) {
  std::vector<Image> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(render_quadrant_image({16, sample_placement(hash_combine(seed, i))}));
  return out;
}

TrainConfig tiny(int epochs = 2) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.model.base_channels = 2;
  cfg.seed = 3;
  return cfg;
}

bool same_params(const UNet<float>& a, const UNet<float>& b) {
  for (std::size_t k = 0; k < a.parameters().size(); ++k) {
    const auto x = a.parameters()[k].values();
    const auto y = b.parameters()[k].values();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

// Overwrites every pixel outside Ω ∪ B with a value training must never see.
Image poison(const Image& x, const PixelMask& measured, double value) {
  std::vector<double> v(x.data().begin(), x.data().end());
  for (std::size_t k = 0; k < v.size(); ++k)
    if (!measured[k]) v[k] = value;
  return Image(x.n(), std::move(v));
}

}  // namespace

TEST_CASE("measurement budget is 7/16 of the pixels") {
  for (int n = 4; n <= 256; n += 4) {
    const auto d = make_sparse_dense_masks(n);
    const PixelMask measured = d.omega | d.b;
    std::size_t count = 0, mismatches = 0;
    for (int i2 = 1; i2 <= n; ++i2)
      for (int i1 = 1; i1 <= n; ++i1) {
        const bool in_omega = i1 % 2 == 1 && i2 % 2 == 1;
        const bool in_b = i1 <= n / 2 && i2 <= n / 2;
        mismatches += measured.at(i1, i2) != (in_omega || in_b) ? 1 : 0;
        count += (in_omega || in_b) ? 1 : 0;
      }
    CHECK(mismatches == 0);
    CHECK(static_cast<double>(count) / (n * n) == 0.4375);
  }
}

TEST_CASE("training pairs: masked input, masked target, no sentinel leaks") {
  const auto d = make_sparse_dense_masks(16);
  const Image x = render_quadrant_image({16, 2});
  const auto strict = make_training_pair(x, d.omega, d.b, true);
  const auto lax = make_training_pair(x, d.omega, d.b, false);
  CHECK(strict.input == apply_mask(x, d.omega));
  CHECK(strict.target == apply_mask(x, d.b));
  CHECK(strict.input == lax.input);
  CHECK(strict.target == lax.target);
  for (std::size_t k = 0; k < x.size(); ++k) {
    CHECK(strict.input[k] != kSentinel);
    CHECK(strict.target[k] != kSentinel);
  }
}

TEST_CASE("training is blind to pixels outside the union of the masks") {
  const auto d = make_sparse_dense_masks(16);
  const PixelMask measured = d.omega | d.b;
  const auto clean = quadrant_set(8, 1);
  std::vector<Image> poisoned;
  for (const auto& x : clean) poisoned.push_back(poison(x, measured, 1e6));
  const auto cfg = tiny(2);
  const auto a = train({clean, {}}, cfg);
  const auto b = train({poisoned, {}}, cfg);
  CHECK(same_params(a.model, b.model));
  CHECK(a.history.to_csv() == b.history.to_csv());

  TrainConfig pw = cfg;
  pw.mode = TrainMode::patch_wise;
  pw.patch = 8;
  CHECK(same_params(train_any({clean, {}}, pw).model, train_any({poisoned, {}}, pw).model));
}

TEST_CASE("training is deterministic for a fixed seed and changes with the seed") {
  const auto data = Dataset{quadrant_set(8, 2), quadrant_set(4, 3)};
  auto cfg = tiny(2);
  const auto a = train(data, cfg);
  const auto b = train(data, cfg);
  CHECK(same_params(a.model, b.model));
  auto wide = cfg;
  wide.model.base_channels = 4;
  wide.epochs = 3;
  CHECK(same_params(train(data, wide).model, train(data, wide).model));
  cfg.seed = 4;
  CHECK_FALSE(same_params(a.model, train(data, cfg).model));
}

TEST_CASE("history records every epoch and the best validation loss") {
  const auto data = Dataset{quadrant_set(8, 2), quadrant_set(4, 3)};
  const auto r = train(data, tiny(3));
  REQUIRE(r.history.epochs.size() == 3);
  double best = INFINITY;
  int best_epoch = -1;
  for (const auto& e : r.history.epochs) {
    CHECK(std::isfinite(e.train_loss));
    if (e.val_loss < best) {
      best = e.val_loss;
      best_epoch = e.epoch;
    }
  }
  CHECK(r.history.best_epoch == best_epoch);
  CHECK(r.history.best_val_loss == best);
  // The returned model is the best-epoch model.
  const auto d = make_sparse_dense_masks(16);
  CHECK(validation_loss(r.model, data.val, d.omega, d.b) == doctest::Approx(best).epsilon(1e-6));
  CHECK(r.history.to_csv().rfind("epoch,train_loss,val_loss,lr\n", 0) == 0);
}

TEST_CASE("loss decreases on the quadrant data") {
  auto cfg = tiny(15);
  cfg.model.base_channels = 4;
  const auto data = Dataset{quadrant_set(16, 5), {}};
  const auto r = train(data, cfg);
  CHECK(r.history.best_val_loss < r.history.epochs.front().val_loss);
}

TEST_CASE("a non-finite loss stops training and keeps finite parameters") {
  auto cfg = tiny(5);
  cfg.lr = 1e30;
  const auto r = train({quadrant_set(8, 6), {}}, cfg);
  CHECK(r.history.diverged);
  bool finite = true;
  for (const auto& p : r.model.parameters())
    for (float v : p.values()) finite = finite && std::isfinite(v);
  CHECK(finite);
}

TEST_CASE("patch-wise training rejects patches not divisible by 8") {
  auto cfg = tiny();
  cfg.mode = TrainMode::patch_wise;
  cfg.patch = 2;
  try {
    train_any({quadrant_set(4, 1), {}}, cfg);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("three stride-2 downsamplings") != std::string::npos);
  }
  cfg.patch = 3;
  CHECK_THROWS(train_any({quadrant_set(4, 1), {}}, cfg));
}

TEST_CASE("sparse-dense training needs image sizes divisible by 8") {
  std::vector<Image> imgs{Image(12, 0.5)};
  CHECK_THROWS_AS(train({imgs, {}}, tiny()), std::invalid_argument);
}

TEST_CASE("config validation, text round trip and overrides") {
  TrainConfig cfg;
  CHECK(cfg.epochs == 80);
  CHECK(cfg.lr == 4e-4);
  cfg.epochs = 0;
  CHECK_THROWS(cfg.validate());

  TrainConfig a;
  a.seed = 17;
  a.mode = TrainMode::patch_wise;
  a.patch = 8;
  a.model.base_channels = 16;
  a.lr = 1.5e-3;
  TrainConfig b;
  const std::set<std::string> allowed(TrainConfig::keys().begin(), TrainConfig::keys().end());
  b.apply(parse_key_values(a.to_text(), allowed));
  CHECK(b.to_text() == a.to_text());
  CHECK(b.model == a.model);

  TrainConfig c;
  CHECK_THROWS(c.apply({{"epochs", "3x"}}));
  CHECK_THROWS(c.apply({{"batch_size", "-1"}}));
  CHECK_THROWS(parse_train_mode("dense"));
}

TEST_CASE("explicit masks must come together and match the image size") {
  auto cfg = tiny();
  cfg.omega = odd_lattice_mask(16);
  CHECK_THROWS(train({quadrant_set(4, 1), {}}, cfg));
  cfg.b = corner_mask(8, 4);
  CHECK_THROWS(train({quadrant_set(4, 1), {}}, cfg));
  cfg.b = corner_mask(16, 8);
  CHECK_NOTHROW(train({quadrant_set(4, 1), {}}, cfg));
}

TEST_CASE("mean and sample standard deviation") {
  const auto [m, s] = mean_std({1.0, 2.0, 3.0, 4.0});
  CHECK(m == 2.5);
  CHECK(s == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(mean_std({2.0}).second == 0.0);
}

TEST_CASE("sweep trains one model per configuration") {
  const Dataset data{quadrant_set(8, 7), quadrant_set(2, 8)};
  const auto test = quadrant_set(5, 9);
  SweepOptions opts;
  opts.patch_sizes = {8, 4};
  opts.patchwise_sizes = {8};
  opts.threads = 2;
  const auto rows = supervision_sweep(data, test, tiny(1), opts);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].mode == "sparse-dense");
  CHECK(rows[1].patch == 4);
  CHECK(rows[2].mode == "patch");
  for (const auto& r : rows) {
    CHECK(r.test_images == 5);
    CHECK(std::isfinite(r.test_mse_mean));
  }
  // Thread count does not change the results.
  opts.threads = 1;
  CHECK(sweep_to_csv(supervision_sweep(data, test, tiny(1), opts)) == sweep_to_csv(rows));

  opts.fixed_budget = true;
  opts.budget_reference_images = 2;
  const auto fixed = supervision_sweep(data, test, tiny(1), opts);
  CHECK(fixed[0].train_images == 2);
  CHECK(fixed[1].train_images == 8);
  opts.patch_sizes = {2};
  CHECK_THROWS(supervision_sweep(data, test, tiny(1), opts));
}
