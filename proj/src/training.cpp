#include "sdr/training.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "sdr/metrics.hpp"
#include "sdr/optim.hpp"
#include "sdr/rng.hpp"

namespace sdr {
namespace {

/// Shortest text that parses back to the same double, in fixed notation
/// unless that gets long.
std::string fmt(double v) {
  char buf[400];
  const auto fixed = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
  if (fixed.ec == std::errc() && fixed.ptr - buf <= 14) return std::string(buf, fixed.ptr);
  const auto sci = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, sci.ptr);
}

/// Inputs, targets and the loss mask of one training regime, already in
/// the layout the network consumes.
struct PairSet {
  std::size_t side = 0;
  std::vector<std::vector<float>> inputs;
  std::vector<std::vector<float>> targets;
  std::vector<float> mask;

  std::size_t size() const { return inputs.size(); }
};

std::vector<float> to_floats(const Image& x) { return {x.data().begin(), x.data().end()}; }

std::vector<float> mask_floats(const PixelMask& m) {
  std::vector<float> out(m.bits().size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = m[k] ? 1.0f : 0.0f;
  return out;
}

ad::Tensor<float> stack(const PairSet& s, const std::vector<std::vector<float>>& src,
                        std::span<const std::size_t> idx) {
  const std::size_t npix = s.side * s.side;
  std::vector<float> v;
  v.reserve(idx.size() * npix);
  for (auto i : idx) v.insert(v.end(), src[i].begin(), src[i].end());
  return ad::Tensor<float>({idx.size(), 1, s.side, s.side}, std::move(v));
}

double pairset_loss(const UNet<float>& model, const PairSet& s) {
  const std::size_t npix = s.side * s.side;
  double total = 0.0;
  constexpr std::size_t kChunk = 8;
  for (std::size_t first = 0; first < s.size(); first += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, s.size() - first));
    std::iota(idx.begin(), idx.end(), first);
    const auto pred = model.forward(stack(s, s.inputs, idx));
    const auto p = pred.values();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& t = s.targets[idx[k]];
      for (std::size_t i = 0; i < npix; ++i) {
        const double d = static_cast<double>(p[k * npix + i]) - static_cast<double>(t[i]);
        total += s.mask[i] * d * d;
      }
    }
  }
  return total / static_cast<double>(s.size());
}

std::vector<std::vector<float>> snapshot(const UNet<float>& m) {
  std::vector<std::vector<float>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.values().begin(), p.values().end());
  return out;
}

TrainResult fit(const PairSet& train_set, const PairSet& val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.size() == 0) throw std::invalid_argument("training set is empty");
  UNet<float> model(cfg.model, hash_combine(cfg.seed, 0x696e6974));
  model.set_mode(ad::Mode::train);
  const ad::Tensor<float> mask({train_set.side, train_set.side}, train_set.mask);

  ad::AdamState adam;
  adam.lr = cfg.lr;
  ad::PlateauScheduler sched;
  sched.factor = cfg.scheduler_factor;
  sched.patience = cfg.scheduler_patience;
  sched.threshold = cfg.scheduler_threshold;
  sched.lr = cfg.lr;

  TrainHistory hist;
  auto best = snapshot(model);
  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(hash_combine(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    const auto before_epoch = snapshot(model);
    double loss_sum = 0.0;
    std::size_t batch = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size, ++batch) {
      const std::span<const std::size_t> idx(order.data() + first, std::min(cfg.batch_size, order.size() - first));
      model.zero_grad();
      const ad::DropoutKey key{cfg.seed, static_cast<std::uint64_t>(epoch), batch, 0};
      auto loss = ad::masked_mse(model.forward(stack(train_set, train_set.inputs, idx), key),
                                 stack(train_set, train_set.targets, idx), mask);
      const double l = loss.item();
      if (!std::isfinite(l)) {
        loss_sum = l;
        break;
      }
      loss.backward();
      ad::adam_step(model.parameters(), adam);
      loss_sum += l * static_cast<double>(idx.size());
    }
    model.zero_grad();
    const double train_loss = loss_sum / static_cast<double>(train_set.size());

    model.set_mode(ad::Mode::eval);
    const double val_loss = std::isfinite(train_loss) ? pairset_loss(model, val_set) : train_loss;
    model.set_mode(ad::Mode::train);
    if (!std::isfinite(val_loss)) {
      hist.diverged = true;
      if (hist.best_epoch < 0) best = before_epoch;
      break;
    }
    hist.epochs.push_back({epoch, train_loss, val_loss, adam.lr});
    if (val_loss < hist.best_val_loss) {
      hist.best_val_loss = val_loss;
      hist.best_epoch = epoch;
      best = snapshot(model);
    }
    adam.lr = sched.step(val_loss);
    if (val_loss < cfg.early_stop_threshold) {
      hist.early_stopped = true;
      break;
    }
  }
  model.load_values(best);
  model.set_mode(ad::Mode::eval);
  return {std::move(model), std::move(hist)};
}

std::pair<PixelMask, PixelMask> resolve_masks(int n, const TrainConfig& cfg) {
  if (cfg.omega.has_value() != cfg.b.has_value()) {
    throw std::invalid_argument("explicit masks must provide both omega and b");
  }
  if (cfg.omega) {
    if (cfg.omega->n() != n || cfg.b->n() != n) throw DimensionMismatch();
    if (cfg.b->popcount() == 0) throw std::invalid_argument("supervision mask is empty");
    return {*cfg.omega, *cfg.b};
  }
  const int patch = cfg.patch == 0 ? n / 2 : cfg.patch;
  auto d = make_generalized_masks(n, patch);
  return {d.omega, d.b};
}

int common_side(const Dataset& data) {
  if (data.train.empty()) throw std::invalid_argument("training set is empty");
  const int n = data.train.front().n();
  for (const auto* split : {&data.train, &data.val}) {
    for (const auto& x : *split) {
      if (x.n() != n) throw std::invalid_argument("all images must share one size");
    }
  }
  return n;
}

void check_divisible(int side, const UNetConfig& m, const char* what) {
  const auto s = static_cast<int>(m.overall_stride());
  if (side % s != 0) {
    throw std::invalid_argument(std::string(what) + " of " + std::to_string(side) + " pixels cannot be used: the network applies three stride-2 downsamplings, so sizes must be multiples of " + std::to_string(s));
  }
}

PairSet full_pairs(const std::vector<Image>& images, const PixelMask& omega, const PixelMask& b) {
  PairSet s;
  s.side = static_cast<std::size_t>(omega.n());
  s.mask = mask_floats(b);
  for (const auto& x : images) {
    auto p = make_training_pair(x, omega, b);
    s.inputs.push_back(to_floats(p.input));
    s.targets.push_back(to_floats(p.target));
  }
  return s;
}

Image crop(const Image& x, int p) {
  Image out(p);
  for (int i2 = 1; i2 <= p; ++i2)
    for (int i1 = 1; i1 <= p; ++i1) out.set(i1, i2, x.at(i1, i2));
  return out;
}

PairSet patch_pairs(const std::vector<Image>& images, const PixelMask& omega, const PixelMask& b, int p) {
  PairSet s;
  s.side = static_cast<std::size_t>(p);
  s.mask.assign(s.side * s.side, 1.0f);
  for (const auto& x : images) {
    auto pair = make_training_pair(x, omega, b);
    s.inputs.push_back(to_floats(crop(pair.input, p)));
    s.targets.push_back(to_floats(crop(pair.target, p)));
  }
  return s;
}

}  // namespace

std::string to_string(TrainMode m) { return m == TrainMode::sparse_dense ? "sparse-dense" : "patch"; }

TrainMode parse_train_mode(const std::string& s) {
  if (s == "sparse-dense" || s == "sparse_dense") return TrainMode::sparse_dense;
  if (s == "patch" || s == "patch-wise" || s == "patch_wise") return TrainMode::patch_wise;
  throw std::invalid_argument("unknown training mode '" + s + "' (expected sparse-dense or patch)");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be positive");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(scheduler_factor > 0.0 && scheduler_factor < 1.0)) {
    throw std::invalid_argument("scheduler_factor must lie in (0, 1)");
  }
  if (scheduler_patience < 0) throw std::invalid_argument("scheduler_patience must be >= 0");
  if (!(scheduler_threshold >= 0.0)) throw std::invalid_argument("scheduler_threshold must be >= 0");
  if (!(early_stop_threshold >= 0.0)) throw std::invalid_argument("early_stop_threshold must be >= 0");
  if (patch < 0) throw std::invalid_argument("patch must be >= 0");
  model.validate();
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = {
      "lr",   "epochs", "batch_size",  "scheduler_factor", "scheduler_patience", "scheduler_threshold",
      "early_stop_threshold", "seed", "mode", "patch", "in_channels", "out_channels",
      "base_channels", "depth", "kernel", "stride", "dropout_p"};
  return k;
}

std::string TrainConfig::to_text() const {
  std::string s;
  auto line = [&](const char* k, const std::string& v) { s += std::string(k) + " = " + v + "\n"; };
  line("lr", fmt(lr));
  line("epochs", std::to_string(epochs));
  line("batch_size", std::to_string(batch_size));
  line("scheduler_factor", fmt(scheduler_factor));
  line("scheduler_patience", std::to_string(scheduler_patience));
  line("scheduler_threshold", fmt(scheduler_threshold));
  line("early_stop_threshold", fmt(early_stop_threshold));
  line("seed", std::to_string(seed));
  line("mode", to_string(mode));
  line("patch", std::to_string(patch));
  line("in_channels", std::to_string(model.in_channels));
  line("out_channels", std::to_string(model.out_channels));
  line("base_channels", std::to_string(model.base_channels));
  line("depth", std::to_string(model.depth));
  line("kernel", std::to_string(model.kernel));
  line("stride", std::to_string(model.stride));
  line("dropout_p", fmt(model.dropout_p));
  return s;
}

void TrainConfig::apply(const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    try {
      std::size_t used = 0;
      auto whole = [&](auto parsed) {
        if (used != v.size()) throw std::invalid_argument("trailing characters");
        return parsed;
      };
      auto as_size = [&] {
        if (!v.empty() && v.front() == '-') throw std::invalid_argument("negative");
        return whole(static_cast<std::size_t>(std::stoull(v, &used)));
      };
      if (k == "lr") lr = whole(std::stod(v, &used));
      else if (k == "epochs") epochs = whole(std::stoi(v, &used));
      else if (k == "batch_size") batch_size = as_size();
      else if (k == "scheduler_factor") scheduler_factor = whole(std::stod(v, &used));
      else if (k == "scheduler_patience") scheduler_patience = whole(std::stoi(v, &used));
      else if (k == "scheduler_threshold") scheduler_threshold = whole(std::stod(v, &used));
      else if (k == "early_stop_threshold") early_stop_threshold = whole(std::stod(v, &used));
      else if (k == "seed") seed = as_size();
      else if (k == "mode") mode = parse_train_mode(v);
      else if (k == "patch") patch = whole(std::stoi(v, &used));
      else if (k == "in_channels") model.in_channels = as_size();
      else if (k == "out_channels") model.out_channels = as_size();
      else if (k == "base_channels") model.base_channels = as_size();
      else if (k == "depth") model.depth = as_size();
      else if (k == "kernel") model.kernel = as_size();
      else if (k == "stride") model.stride = as_size();
      else if (k == "dropout_p") model.dropout_p = whole(std::stod(v, &used));
      else throw std::invalid_argument("unknown key");
    } catch (const std::exception& e) {
      throw std::invalid_argument("bad value '" + v + "' for " + k + " (" + e.what() + ")");
    }
  }
}

TrainingPair make_training_pair(const Image& x, const PixelMask& omega, const PixelMask& b, bool strict) {
  if (x.n() != omega.n() || x.n() != b.n()) throw DimensionMismatch();
  if (!strict) return {apply_mask(x, omega), apply_mask(x, b)};
  const PixelMask measured = omega | b;
  std::vector<double> guarded(x.data().begin(), x.data().end());
  for (std::size_t k = 0; k < guarded.size(); ++k) {
    if (!measured[k]) guarded[k] = kSentinel;
  }
  const Image g(x.n(), std::move(guarded));
  return {apply_mask(g, omega), apply_mask(g, b)};
}

std::string TrainHistory::to_csv() const {
  std::string s = "epoch,train_loss,val_loss,lr\n";
  for (const auto& e : epochs) {
    s += std::to_string(e.epoch) + "," + fmt(e.train_loss) + "," + fmt(e.val_loss) + "," + fmt(e.lr) + "\n";
  }
  return s;
}

TrainResult train(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  const int n = common_side(data);
  check_divisible(n, cfg.model, "an image size");
  const auto [omega, b] = resolve_masks(n, cfg);
  const auto& val = data.val.empty() ? data.train : data.val;
  return fit(full_pairs(data.train, omega, b), full_pairs(val, omega, b), cfg);
}

TrainResult train_patchwise(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  const int n = common_side(data);
  if (cfg.omega || cfg.b) throw std::invalid_argument("patch-wise training uses the generated corner patch");
  const int p = cfg.patch == 0 ? n / 2 : cfg.patch;
  if (p < 1 || n % p != 0) throw std::invalid_argument("patch size must divide the image size");
  check_divisible(p, cfg.model, "a patch size");
  const auto d = make_generalized_masks(n, p);
  const auto& val = data.val.empty() ? data.train : data.val;
  return fit(patch_pairs(data.train, d.omega, d.b, p), patch_pairs(val, d.omega, d.b, p), cfg);
}

TrainResult train_any(const Dataset& data, const TrainConfig& cfg) {
  return cfg.mode == TrainMode::patch_wise ? train_patchwise(data, cfg) : train(data, cfg);
}

double validation_loss(const UNet<float>& model, const std::vector<Image>& images, const PixelMask& omega,
                       const PixelMask& b) {
  if (images.empty()) throw std::invalid_argument("validation set is empty");
  return pairset_loss(model, full_pairs(images, omega, b));
}

Image restore_observed(const UNet<float>& model, const Image& x, const PixelMask& omega) {
  return restore(model, apply_mask(x, omega));
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::vector<SweepRow> supervision_sweep(const Dataset& data, const std::vector<Image>& test, const TrainConfig& cfg,
                                        const SweepOptions& opts) {
  if (test.empty()) throw std::invalid_argument("sweep needs test images");
  const int n = common_side(data);
  struct Job {
    TrainConfig cfg;
    std::size_t images;
  };
  std::vector<Job> jobs;
  auto add = [&](TrainMode mode, int p) {
    if (p < 1 || n % p != 0) throw std::invalid_argument("patch size " + std::to_string(p) + " does not divide " + std::to_string(n));
    std::size_t count = data.train.size();
    if (opts.fixed_budget) {
      const double scale = static_cast<double>(opts.budget_reference_patch) / p;
      count = static_cast<std::size_t>(std::llround(static_cast<double>(opts.budget_reference_images) * scale * scale));
      count = std::max<std::size_t>(count, 1);
      if (count > data.train.size()) {
        throw std::invalid_argument("fixed-budget sweep needs " + std::to_string(count) + " training images, only " + std::to_string(data.train.size()) + " available");
      }
    }
    TrainConfig c = cfg;
    c.mode = mode;
    c.patch = p;
    c.omega.reset();
    c.b.reset();
    jobs.push_back({c, count});
  };
  for (int p : opts.patch_sizes) add(TrainMode::sparse_dense, p);
  for (int p : opts.patchwise_sizes) add(TrainMode::patch_wise, p);
  for (const auto& j : jobs) {
    if (j.cfg.mode == TrainMode::patch_wise) check_divisible(j.cfg.patch, j.cfg.model, "a patch size");
  }

  const PixelMask omega = odd_lattice_mask(n);
  std::vector<SweepRow> rows(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < jobs.size();) {
      try {
        const auto& j = jobs[k];
        Dataset subset{{data.train.begin(), data.train.begin() + static_cast<std::ptrdiff_t>(j.images)}, data.val};
        const auto result = train_any(subset, j.cfg);
        std::vector<double> errs;
        for (const auto& x : test) errs.push_back(mse(restore_observed(result.model, x, omega), x));
        const auto [m, s] = mean_std(errs);
        rows[k] = {to_string(j.cfg.mode), j.cfg.patch, j.images, test.size(), m, s, result.history.best_val_loss};
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(opts.threads, 1, jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::string s = "mode,patch,train_images,test_images,test_mse_mean,test_mse_std,best_val_loss\n";
  for (const auto& r : rows) {
    s += r.mode + "," + std::to_string(r.patch) + "," + std::to_string(r.train_images) + "," +
         std::to_string(r.test_images) + "," + fmt(r.test_mse_mean) + "," + fmt(r.test_mse_std) + "," +
         fmt(r.best_val_loss) + "\n";
  }
  return s;
}

}  // namespace sdr
