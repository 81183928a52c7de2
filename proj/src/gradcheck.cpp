#include "sdr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdr/layers.hpp"
#include "sdr/rng.hpp"
#include "sdr/unet.hpp"

namespace sdr::ad {

GradCheckResult finite_difference_check(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>>& inputs,
                                        const GradCheckOptions& opts) {
  for (auto& t : inputs) t.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) {
    analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                       : std::vector<double>(t.size(), 0.0));
  }

  auto evaluate = [&](std::vector<bool>& pattern) {
    ReluPatternRecorder recorder;
    const double v = loss().item();
    pattern = recorder.take();
    return v;
  };
  std::vector<bool> base_pattern;
  evaluate(base_pattern);

  GradCheckResult result;
  Rng rng(opts.seed);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].mutable_values();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.max_coords_per_tensor != 0 && coords.size() > opts.max_coords_per_tensor) {
      rng.shuffle(coords);
      coords.resize(opts.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double orig = values[i];
      std::vector<bool> plus_pattern, minus_pattern;
      values[i] = orig + opts.step;
      const double lp = evaluate(plus_pattern);
      values[i] = orig - opts.step;
      const double lm = evaluate(minus_pattern);
      values[i] = orig;
      if (opts.skip_kinks && (plus_pattern != base_pattern || minus_pattern != base_pattern)) {
        ++result.skipped;
        continue;
      }
      const double numeric = (lp - lm) / (2.0 * opts.step);
      const double a = analytic[t][i];
      const double scale = std::abs(a) + std::abs(numeric);
      if (scale < 1e-8) ++result.floored;
      const double err = std::abs(a - numeric) / std::max(1e-8, scale);
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.checked;
    }
  }
  return result;
}

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor<double>(std::move(shape), std::move(v), requires_grad);
}

/// Values bounded away from the ReLU kink.
Tensor<double> away_from_zero(Shape shape, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(0.05, 1.0);
  return Tensor<double>(std::move(shape), std::move(v), true);
}

}  // namespace

std::vector<GradCheckCase> standard_gradchecks(std::uint64_t seed, std::size_t unet_base_channels,
                                               std::size_t unet_coords_per_tensor) {
  Rng rng(seed);
  std::vector<GradCheckCase> out;
  auto run = [&](std::string name, std::vector<Tensor<double>> inputs, const std::function<Tensor<double>()>& loss,
                 GradCheckOptions opts = {}) {
    opts.seed = rng.next();
    out.push_back({std::move(name), finite_difference_check(loss, inputs, opts)});
  };

  for (std::size_t stride : {1, 2}) {
    const ConvSpec spec{2, 3, 3, stride, false};
    auto x = random_tensor({1, 2, 8, 8}, rng);
    auto w = random_tensor(spec.weight_shape(), rng);
    auto b = random_tensor({3}, rng);
    auto r = random_tensor({1, 3, 8 / stride, 8 / stride}, rng, false);
    run("conv2d_circular stride " + std::to_string(stride), {x, w, b},
        [=] { return weighted_sum(conv2d_circular(x, w, b, spec), r); });
  }
  for (std::size_t stride : {1, 2}) {
    const ConvSpec spec{3, 2, 3, stride, true};
    auto x = random_tensor({2, 3, 4, 4}, rng);
    auto w = random_tensor(spec.weight_shape(), rng);
    auto b = random_tensor({2}, rng);
    auto r = random_tensor({2, 2, 4 * stride, 4 * stride}, rng, false);
    run("conv_transpose2d_circular stride " + std::to_string(stride), {x, w, b},
        [=] { return weighted_sum(conv_transpose2d_circular(x, w, b, spec), r); });
  }
  {
    auto x = away_from_zero({2, 3, 4, 4}, rng);
    auto r = random_tensor({2, 3, 4, 4}, rng, false);
    run("relu", {x}, [=] { return weighted_sum(relu(x), r); });
  }
  {
    auto x = random_tensor({4, 6, 4, 4}, rng);
    auto r = random_tensor({4, 6, 4, 4}, rng, false);
    const DropoutKey key{seed, 1, 2, 3};
    run("channel_dropout", {x}, [=] { return weighted_sum(channel_dropout(x, 0.5, Mode::train, key), r); });
  }
  {
    auto a = random_tensor({2, 2, 4, 4}, rng);
    auto b = random_tensor({2, 3, 4, 4}, rng);
    auto r = random_tensor({2, 5, 4, 4}, rng, false);
    run("concat_channels", {a, b}, [=] { return weighted_sum(concat_channels(a, b), r); });
  }
  {
    auto p = random_tensor({3, 1, 4, 4}, rng);
    auto t = random_tensor({3, 1, 4, 4}, rng);
    std::vector<double> mv(16);
    for (auto& v : mv) v = static_cast<double>(rng.below(2));
    const Tensor<double> m({4, 4}, mv);
    run("masked_mse", {p, t}, [=] { return masked_mse(p, t, m); });
  }
  {
    UNetConfig cfg;
    cfg.base_channels = unet_base_channels;
    UNet<double> model(cfg, rng.next());
    model.set_mode(Mode::train);
    // He-scaled draws keep activations at unit scale through all 21 layers;
    // with the training initialisation the deep encoder gradients shrink to
    // the rounding floor of a 1e-6 central difference.
    for (std::size_t l = 0; l < model.layers().size(); ++l) {
      const double bound = std::sqrt(6.0 / static_cast<double>(model.layers()[l].spec.fan_in()));
      for (auto& v : model.parameters()[2 * l].mutable_values()) v = rng.uniform(-bound, bound);
      for (auto& v : model.parameters()[2 * l + 1].mutable_values()) v = rng.uniform(-0.1, 0.1);
    }
    auto x = random_tensor({2, 1, 16, 16}, rng);
    const DropoutKey key{seed, 1, 0, 0};
    // Targets near the current output keep the loss small, so the rounding
    // error of the central difference stays proportional to the gradient.
    std::vector<double> tv(x.size());
    const auto y = model.forward(x, key).values();
    for (std::size_t k = 0; k < tv.size(); ++k) tv[k] = y[k] + rng.uniform(-0.01, 0.01);
    const Tensor<double> t(x.shape(), std::move(tv));
    std::vector<double> mv(256, 0.0);
    for (std::size_t k = 0; k < 256; ++k) mv[k] = (k / 16 < 8 && k % 16 < 8) ? 1.0 : 0.0;
    const Tensor<double> m({16, 16}, mv);
    std::vector<Tensor<double>> inputs = model.parameters();
    inputs.push_back(x);
    GradCheckOptions opts;
    opts.max_coords_per_tensor = unet_coords_per_tensor;
    run("unet masked loss", inputs, [&model, x, t, m, key] { return masked_mse(model.forward(x, key), t, m); }, opts);
  }
  return out;
}

}  // namespace sdr::ad
