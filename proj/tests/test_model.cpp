#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sdr/rng.hpp"
#include "sdr/unet.hpp"

using namespace sdr;

namespace {

// Layer-by-layer count written out by hand for widths c, 2c, 4c, 8c.
std::size_t hand_count(std::size_t c) {
  auto conv = [](std::size_t cin, std::size_t cout) { return cin * cout * 9 + cout; };
  return conv(1, c) + conv(c, c) + conv(c, 2 * c) +                      // enc0
         conv(2 * c, 2 * c) * 2 + conv(2 * c, 4 * c) +                   // enc1
         conv(4 * c, 4 * c) * 2 + conv(4 * c, 8 * c) +                   // enc2
         conv(8 * c, 8 * c) * 2 +                                        // mid
         conv(8 * c, 4 * c) * 2 + conv(4 * c, 4 * c) +                   // dec2
         conv(4 * c, 2 * c) * 2 + conv(2 * c, 2 * c) +                   // dec1
         conv(2 * c, c) * 2 + conv(c, c) +                               // dec0
         (c + 1);                                                        // 1x1 output
}

std::vector<Image> random_images(int n, std::size_t count, Rng& rng) {
  std::vector<Image> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> v(static_cast<std::size_t>(n) * n);
    for (auto& x : v) x = rng.uniform();
    out.emplace_back(n, std::move(v));
  }
  return out;
}

UNetConfig small(std::size_t c = 4) {
  UNetConfig cfg;
  cfg.base_channels = c;
  return cfg;
}

}  // namespace

TEST_CASE("the network has 21 convolution layers and the expected parameter count") {
  const UNetConfig cfg;
  const auto layers = unet_topology(cfg);
  CHECK(layers.size() == 21);
  CHECK(layers.front().name == "enc0.conv1");
  CHECK(layers.back().name == "out");
  CHECK_FALSE(layers.back().relu);
  CHECK(layers.back().spec.kernel == 1);
  CHECK(unet_parameter_count(cfg) == hand_count(32));
  CHECK(hand_count(32) == 2914657);
  CHECK(unet_parameter_count(small(2)) == hand_count(2));
  const UNet<float> net(cfg, 1);
  CHECK(net.parameter_count() == hand_count(32));
  CHECK(net.parameter_names().size() == 42);
  CHECK(net.parameter_names()[0] == "enc0.conv1.weight");
  CHECK(net.parameter_names()[1] == "enc0.conv1.bias");
}

TEST_CASE("overall stride and validation") {
  CHECK(UNetConfig{}.overall_stride() == 8);
  UNetConfig bad;
  bad.kernel = 4;
  CHECK_THROWS(bad.validate());
  bad = {};
  bad.dropout_p = 1.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("topology descriptors round-trip and reject edits") {
  const auto cfg = small(8);
  const auto text = describe_topology(cfg);
  CHECK(parse_topology(text) == cfg);
  auto edited = text;
  edited.replace(edited.find("enc0.conv2"), 10, "enc0.convX");
  CHECK_THROWS(parse_topology(edited));
  CHECK_THROWS(parse_topology("net depth=3\n"));
}

TEST_CASE("initialisation is seeded and bounded by 1/sqrt(fan_in)") {
  const UNet<double> a(small(), 3), b(small(), 3), c(small(), 4);
  CHECK(std::equal(a.parameters()[0].values().begin(), a.parameters()[0].values().end(),
                   b.parameters()[0].values().begin()));
  CHECK_FALSE(std::equal(a.parameters()[0].values().begin(), a.parameters()[0].values().end(),
                         c.parameters()[0].values().begin()));
  for (std::size_t l = 0; l < a.layers().size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(a.layers()[l].spec.fan_in()));
    for (double v : a.parameters()[2 * l].values()) CHECK(std::abs(v) <= bound);
  }
}

TEST_CASE("forward keeps the spatial size and rejects sizes not divisible by 8") {
  Rng rng(1);
  const UNet<double> net(small(), 1);
  const auto imgs = random_images(16, 2, rng);
  const auto x = images_to_tensor<double>(imgs);
  CHECK(x.shape() == ad::Shape{2, 1, 16, 16});
  CHECK(net.forward(x).shape() == ad::Shape{2, 1, 16, 16});
  const auto odd = images_to_tensor<double>(random_images(12, 1, rng));
  CHECK_THROWS(net.forward(odd));
}

TEST_CASE("image/tensor layout: row index i2-1, column index i1-1") {
  Image x(8);
  x.set(3, 5, 1.0);
  const std::vector<Image> v{x};
  const auto t = images_to_tensor<double>(v);
  CHECK(t.values()[(5 - 1) * 8 + (3 - 1)] == 1.0);
  CHECK(tensor_to_images(t)[0] == x);
  CHECK(tensor_to_images(shift_tensor(t, {2, 3}))[0] == apply_shift(x, {2, 3}));
}

TEST_CASE("eval mode is deterministic and ignores the dropout key") {
  Rng rng(2);
  const UNet<double> net(small(), 5);
  const auto x = images_to_tensor<double>(random_images(16, 1, rng));
  const auto y1 = net.forward(x, {1, 2, 3, 0});
  const auto y2 = net.forward(x, {9, 9, 9, 0});
  CHECK(std::equal(y1.values().begin(), y1.values().end(), y2.values().begin()));
}

TEST_CASE("train-mode dropout depends on the key") {
  Rng rng(3);
  UNet<double> net(small(), 5);
  net.set_mode(ad::Mode::train);
  const auto x = images_to_tensor<double>(random_images(16, 1, rng));
  const auto y1 = net.forward(x, {1, 0, 0, 0});
  const auto y2 = net.forward(x, {1, 0, 0, 0});
  const auto y3 = net.forward(x, {2, 0, 0, 0});
  CHECK(std::equal(y1.values().begin(), y1.values().end(), y2.values().begin()));
  CHECK_FALSE(std::equal(y1.values().begin(), y1.values().end(), y3.values().begin()));
}

TEST_CASE("shifts by multiples of 8 commute with the network; odd shifts need not") {
  Rng rng(4);
  const UNet<double> net(small(), 6);
  const auto x = images_to_tensor<double>(random_images(32, 1, rng));
  const auto fx = net.forward(x);
  for (const Shift s : {Shift{8, 0}, Shift{16, 24}, Shift{24, 8}}) {
    const auto lhs = net.forward(shift_tensor(x, s));
    const auto rhs = shift_tensor(fx, s);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < lhs.size(); ++k) {
      num = std::max(num, std::abs(lhs.values()[k] - rhs.values()[k]));
      den = std::max(den, std::abs(rhs.values()[k]));
    }
    CHECK(num / den <= 1e-10);
  }
  const auto lhs = net.forward(shift_tensor(x, {1, 0}));
  const auto rhs = shift_tensor(fx, {1, 0});
  double diff = 0.0;
  for (std::size_t k = 0; k < lhs.size(); ++k) diff = std::max(diff, std::abs(lhs.values()[k] - rhs.values()[k]));
  CHECK(diff > 1e-6);
}

TEST_CASE("equivariance report marks only stride multiples as guaranteed") {
  const UNet<double> net(small(), 7);
  const auto r = check_equivariance(net, 32, 2, {{8, 16}, {1, 0}, {4, 0}}, 1);
  REQUIRE(r.shifts.size() == 3);
  CHECK(r.tolerance == 1e-10);
  CHECK(r.shifts[0].guaranteed);
  CHECK(r.shifts[0].pass.value());
  CHECK_FALSE(r.shifts[1].guaranteed);
  CHECK_FALSE(r.shifts[1].pass.has_value());
  CHECK_FALSE(r.shifts[2].guaranteed);
  CHECK(r.all_guaranteed_pass());
  const auto rf = check_equivariance(net.cast<float>(), 32, 1, {{8, 8}}, 1);
  CHECK(rf.tolerance == doctest::Approx(1e-5));
  CHECK(rf.all_guaranteed_pass());
}

TEST_CASE("cast preserves values up to precision") {
  const UNet<double> d(small(), 8);
  const auto f = d.cast<float>();
  const auto back = f.cast<double>();
  for (std::size_t k = 0; k < d.parameters().size(); ++k) {
    for (std::size_t i = 0; i < d.parameters()[k].size(); ++i) {
      CHECK(back.parameters()[k].values()[i] == static_cast<double>(static_cast<float>(d.parameters()[k].values()[i])));
    }
  }
}

TEST_CASE("restore maps an image to an image of the same size") {
  const UNet<float> net(small(), 9);
  const Image y(16, 0.25);
  CHECK(restore(net, y).n() == 16);
}
