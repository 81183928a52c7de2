#include "commands.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <thread>

#include "sdr/gradcheck.hpp"
#include "sdr/io.hpp"
#include "sdr/metrics.hpp"
#include "sdr/quadrant.hpp"
#include "sdr/rng.hpp"
#include "sdr/suites.hpp"
#include "sdr/training.hpp"
#include "sdr/unet.hpp"

namespace sdr::cli {
namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exclusive marker file for the lifetime of a run writing into `dir`.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr) throw IoError("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

PixelMask load_or_default_omega(const std::string& path, int n) {
  if (path.empty()) return odd_lattice_mask(n);
  auto m = read_mask_sdi(path);
  if (m.n() != n) throw UsageError("mask " + path + " does not match the image size");
  return m;
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  int n = 16;
  std::size_t train = 64, val = 16, test = 16;
  std::uint64_t seed = 0;
  std::string out;
};

void add_gen(CLI::App& app, GenArgs& a, std::function<int()>& action) {
  auto* c = app.add_subcommand("gen", "Write a synthetic quadrant dataset (SDI1 files + manifest.csv)");
  c->add_option("--n", a.n, "Image side, a multiple of 4")->capture_default_str();
  c->add_option("--train", a.train, "Training images")->capture_default_str();
  c->add_option("--val", a.val, "Validation images")->capture_default_str();
  c->add_option("--test", a.test, "Test images")->capture_default_str();
  c->add_option("--seed", a.seed, "Random seed")->capture_default_str();
  c->add_option("--out", a.out, "Output directory")->required();
  c->callback([&] {
    action = [&] {
      if (a.n < 4 || a.n % 4 != 0) throw UsageError("--n must be a positive multiple of 4");
      if (a.train == 0 || a.val == 0 || a.test == 0) throw UsageError("split counts must be >= 1");
      DirLock lock(a.out);
      const auto rows = write_dataset(a.n, {a.train, a.val, a.test}, a.seed, a.out);
      write_file(fs::path(a.out) / "gen_config.txt", "n = " + std::to_string(a.n) + "\ntrain = " + std::to_string(a.train) +
                                                          "\nval = " + std::to_string(a.val) + "\ntest = " +
                                                          std::to_string(a.test) + "\nseed = " + std::to_string(a.seed) + "\n");
      std::cout << "wrote " << rows.size() << " images to " << a.out << "\n";
      return kOk;
    };
  });
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data, out, config, mode, omega_mask, b_mask;
  int patch = 0, epochs = 0;
  std::uint64_t seed = 0;
  double lr = 0.0;
  std::size_t batch_size = 0, base_channels = 0;
  CLI::App* cmd = nullptr;
};

TrainConfig resolve_train_config(const TrainArgs& a) {
  TrainConfig cfg;
  std::set<std::string> allowed(TrainConfig::keys().begin(), TrainConfig::keys().end());
  if (!a.config.empty()) cfg.apply(parse_key_values(read_file(a.config), allowed));
  auto given = [&](const char* flag) { return a.cmd->count(flag) > 0; };
  if (given("--mode")) cfg.mode = parse_train_mode(a.mode);
  if (given("--patch")) cfg.patch = a.patch;
  if (given("--epochs")) cfg.epochs = a.epochs;
  if (given("--seed")) cfg.seed = a.seed;
  if (given("--lr")) cfg.lr = a.lr;
  if (given("--batch-size")) cfg.batch_size = a.batch_size;
  if (given("--base-channels")) cfg.model.base_channels = a.base_channels;
  cfg.validate();
  return cfg;
}

void add_train(CLI::App& app, TrainArgs& a, std::function<int()>& action) {
  auto* c = app.add_subcommand("train", "Train the U-Net with sparse-dense or patch-wise supervision");
  a.cmd = c;
  c->add_option("--data", a.data, "Dataset directory with manifest.csv")->required();
  c->add_option("--out", a.out, "Output directory")->required();
  c->add_option("--config", a.config, "key = value configuration file");
  c->add_option("--mode", a.mode, "sparse-dense or patch");
  c->add_option("--patch", a.patch, "Supervision patch side (default n/2)");
  c->add_option("--epochs", a.epochs, "Epochs (default 80)");
  c->add_option("--seed", a.seed, "Random seed");
  c->add_option("--lr", a.lr, "Adam learning rate (default 0.0004)");
  c->add_option("--batch-size", a.batch_size, "Batch size (default 8)");
  c->add_option("--base-channels", a.base_channels, "U-Net base width (default 32)");
  c->add_option("--omega-mask", a.omega_mask, "Explicit sampling mask (SDI1)");
  c->add_option("--b-mask", a.b_mask, "Explicit supervision mask (SDI1)");
  c->callback([&] {
    action = [&] {
      TrainConfig cfg;
      Dataset data;
      try {
        cfg = resolve_train_config(a);
        data.train = load_split(a.data, "train");
        data.val = load_split(a.data, "val");
        if (data.train.empty()) throw UsageError("dataset " + a.data + " has no training images");
        if (!a.omega_mask.empty() || !a.b_mask.empty()) {
          if (a.omega_mask.empty() || a.b_mask.empty()) throw UsageError("--omega-mask and --b-mask go together");
          cfg.omega = load_or_default_omega(a.omega_mask, data.train.front().n());
          cfg.b = read_mask_sdi(a.b_mask);
        }
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      } catch (const FormatError& e) {
        throw UsageError(e.what());
      }

      DirLock lock(a.out);
      const fs::path out(a.out);
      const std::string config_text = cfg.to_text();
      write_file(out / "config.txt", config_text);
      std::ofstream log(out / "train.log", std::ios::app);
      log << timestamp() << " start mode=" << to_string(cfg.mode) << " images=" << data.train.size() << "\n";

      TrainResult result = [&] {
        try {
          return train_any(data, cfg);
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
      }();
      write_checkpoint(out / "checkpoint.sdck", make_checkpoint(result.model, config_text));
      write_file(out / "history.csv", result.history.to_csv());
      for (const auto& e : result.history.epochs) {
        log << "epoch " << e.epoch << " train_loss=" << fmt(e.train_loss) << " val_loss=" << fmt(e.val_loss)
            << " lr=" << fmt(e.lr) << "\n";
      }
      log << timestamp() << " done best_epoch=" << result.history.best_epoch
          << " best_val_loss=" << fmt(result.history.best_val_loss) << "\n";
      std::cout << "best epoch " << result.history.best_epoch << ", validation loss "
                << fmt(result.history.best_val_loss) << "\n";
      if (result.history.diverged) {
        std::cerr << "training diverged (non-finite loss); kept the last good parameters\n";
        return kRuntime;
      }
      return kOk;
    };
  });
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string data, split = "test", model, patch_model, out, omega_mask;
};

void add_eval(CLI::App& app, EvalArgs& a, std::function<int()>& action) {
  auto* c = app.add_subcommand("eval", "Evaluate checkpoints and the bilinear baseline on a dataset split");
  c->add_option("--data", a.data, "Dataset directory")->required();
  c->add_option("--split", a.split, "Split to evaluate")->capture_default_str();
  c->add_option("--model", a.model, "Sparse-dense checkpoint")->required();
  c->add_option("--patch-model", a.patch_model, "Patch-wise checkpoint");
  c->add_option("--omega-mask", a.omega_mask, "Explicit sampling mask (SDI1)");
  c->add_option("--out", a.out, "Output directory")->required();
  c->callback([&] {
    action = [&] {
      const auto testset = load_split(a.data, a.split);
      if (testset.empty()) throw UsageError("split '" + a.split + "' is empty");
      const int n = testset.front().n();
      const PixelMask omega = load_or_default_omega(a.omega_mask, n);
      const UNet<float> sd = read_checkpoint(a.model).to_model();
      std::optional<UNet<float>> pw;
      if (!a.patch_model.empty()) pw = read_checkpoint(a.patch_model).to_model();

      std::vector<Method> methods;
      methods.push_back({"bilinear", [&](const Image& y) { return bilinear_upsample(y, omega); }});
      if (pw) methods.push_back({"patch-wise", [&](const Image& y) { return restore(*pw, y); }});
      methods.push_back({"sparse-dense", [&](const Image& y) { return restore(sd, y); }});
      const auto report = evaluate(methods, testset, omega);

      DirLock lock(a.out);
      const fs::path out(a.out);
      write_file(out / "metrics.csv", report.to_csv());
      for (std::size_t i = 0; i < testset.size(); ++i) {
        const Image observed = apply_mask(testset[i], omega);
        const Image sd_out = restore(sd, observed);
        const Image third = pw ? restore(*pw, observed) : bilinear_upsample(observed, omega);
        char name[64];
        std::snprintf(name, sizeof name, "panel_%04zu.pgm", i);
        write_pgm(out / name, {testset[i], observed, third, sd_out});
        std::snprintf(name, sizeof name, "sparse_dense_%04zu.sdi", i);
        write_sdi(out / name, sd_out);
      }
      std::cout << report.to_csv();
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
      for (const auto& m : report.methods) {
        for (const auto& f : m.failures) std::cerr << m.label << " failed on image " << f.image << ": " << f.message << "\n";
      }
      return kOk;
    };
  });
}

// ---------------------------------------------------------------- verify

struct VerifyArgs {
  std::string which = "all", csv;
  std::size_t cap = oracle::kDefaultEnumerationCap;
  std::uint64_t seed = 0;
  int random_distributions = 20;
};

void add_verify(CLI::App& app, VerifyArgs& a, std::function<int()>& action) {
  auto* c = app.add_subcommand("verify", "Run the exact enumeration checks");
  c->add_option("--case", a.which, "all, lemma, theorem, quadrant or ssdu-2x2")
      ->capture_default_str()
      ->check(CLI::IsMember(oracle::suite_names()));
  c->add_option("--csv", a.csv, "Also write the rows as CSV");
  c->add_option("--cap", a.cap, "Enumeration cap on joint atoms")->capture_default_str();
  c->add_option("--seed", a.seed, "Seed for randomised distributions")->capture_default_str();
  c->add_option("--random-distributions", a.random_distributions, "Seeded 4x4 laws in the theorem suite")
      ->capture_default_str();
  c->callback([&] {
    action = [&] {
      oracle::SuiteOptions opts{a.cap, a.random_distributions, a.seed};
      const auto rows = oracle::run_suite(a.which, opts);
      std::cout << oracle::reports_to_text(rows);
      if (!a.csv.empty()) write_file(a.csv, oracle::reports_to_csv(rows));
      const bool ok = std::all_of(rows.begin(), rows.end(), [](const oracle::CheckRow& r) { return r.holds; });
      std::cout << (ok ? "all checks hold\n" : "some checks FAILED\n");
      return ok ? kOk : kRuntime;
    };
  });
}

// ---------------------------------------------------------------- check-equivariance

struct EquivArgs {
  int n = 128, trials = 5, shifts = 20;
  std::uint64_t seed = 0;
  std::size_t base_channels = 32;
  std::string checkpoint, precision = "double";
};

template <typename T>
int report_equivariance(const UNet<T>& model, const EquivArgs& a, const std::vector<Shift>& shifts) {
  const auto r = check_equivariance(model, a.n, a.trials, shifts, a.seed);
  std::cout << "tolerance " << fmt(r.tolerance) << "\n";
  for (const auto& e : r.shifts) {
    std::cout << "shift (" << e.shift.a << "," << e.shift.b << ") max_rel_error " << fmt(e.max_rel_error) << " "
              << (e.pass ? (*e.pass ? "PASS" : "FAIL") : "measured") << "\n";
  }
  return r.all_guaranteed_pass() ? kOk : kRuntime;
}

void add_equivariance(CLI::App& app, EquivArgs& a, std::function<int()>& action) {
  auto* c = app.add_subcommand("check-equivariance", "Measure forward(shift(x)) - shift(forward(x))");
  c->add_option("--n", a.n, "Image side (multiple of 8)")->capture_default_str();
  c->add_option("--trials", a.trials, "Random inputs")->capture_default_str();
  c->add_option("--shifts", a.shifts, "Random multiple-of-8 shifts")->capture_default_str();
  c->add_option("--seed", a.seed, "Seed")->capture_default_str();
  c->add_option("--base-channels", a.base_channels, "Width of a freshly initialised model")->capture_default_str();
  c->add_option("--checkpoint", a.checkpoint, "Use a trained checkpoint instead");
  c->add_option("--precision", a.precision, "double or float")
      ->capture_default_str()
      ->check(CLI::IsMember({"double", "float"}));
  c->callback([&] {
    action = [&] {
      if (a.n < 8 || a.n % 8 != 0) throw UsageError("--n must be a positive multiple of 8");
      Rng rng(hash_combine(a.seed, 0x5348));
      const int cells = a.n / 8;
      std::vector<Shift> shifts;
      for (int k = 0; k < a.shifts; ++k) {
        shifts.push_back({8 * static_cast<int>(rng.below(cells)), 8 * static_cast<int>(rng.below(cells))});
      }
      shifts.push_back({1, 0});
      UNet<float> base = a.checkpoint.empty() ? [&] {
        UNetConfig cfg;
        cfg.base_channels = a.base_channels;
        return UNet<float>(cfg, a.seed);
      }()
                                               : read_checkpoint(a.checkpoint).to_model();
      if (a.checkpoint.empty() && a.precision == "double") {
        UNetConfig cfg;
        cfg.base_channels = a.base_channels;
        UNet<double> model(cfg, a.seed);
        return report_equivariance(model, a, shifts);
      }
      base.set_mode(ad::Mode::eval);
      if (a.precision == "double") return report_equivariance(base.cast<double>(), a, shifts);
      return report_equivariance(base, a, shifts);
    };
  });
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
  std::string data, out;
  int n = 16, epochs = 80;
  std::size_t train = 64, val = 16, test = 5, base_channels = 32, budget_images = 8;
  std::uint64_t seed = 0;
  std::vector<int> patches{8, 4, 2};
  std::vector<int> patchwise{8};
  bool fixed_budget = false;
};

void add_sweep(CLI::App& app, SweepArgs& a, std::function<int()>& action) {
  auto* c = app.add_subcommand("sweep", "Train one model per supervision patch size and report test MSE");
  c->add_option("--data", a.data, "Dataset directory (otherwise quadrant data is generated)");
  c->add_option("--out", a.out, "CSV output path")->required();
  c->add_option("--n", a.n, "Generated image side")->capture_default_str();
  c->add_option("--train", a.train, "Generated training images")->capture_default_str();
  c->add_option("--val", a.val, "Generated validation images")->capture_default_str();
  c->add_option("--test", a.test, "Generated test images (>= 5)")->capture_default_str();
  c->add_option("--epochs", a.epochs, "Epochs per run")->capture_default_str();
  c->add_option("--base-channels", a.base_channels, "U-Net base width")->capture_default_str();
  c->add_option("--seed", a.seed, "Seed")->capture_default_str();
  c->add_option("--patches", a.patches, "Sparse-dense supervision patch sizes")->delimiter(',')->capture_default_str();
  c->add_option("--patchwise", a.patchwise, "Patch sizes also trained patch-wise")->delimiter(',')->capture_default_str();
  c->add_flag("--fixed-budget", a.fixed_budget, "Scale training images inversely with |B|");
  c->add_option("--budget-images", a.budget_images, "Images at the reference patch size 8")->capture_default_str();
  c->callback([&] {
    action = [&] {
      Dataset data;
      std::vector<Image> test;
      SweepOptions opts;
      opts.patch_sizes = a.patches;
      opts.patchwise_sizes = a.patchwise;
      opts.fixed_budget = a.fixed_budget;
      opts.budget_reference_images = a.budget_images;
      opts.threads = worker_threads();
      if (!a.data.empty()) {
        data.train = load_split(a.data, "train");
        data.val = load_split(a.data, "val");
        test = load_split(a.data, "test");
      } else {
        std::size_t train_count = a.train;
        if (a.fixed_budget) {
          for (int p : a.patches) {
            if (p <= 0) throw UsageError("patch sizes must be positive");
            const double s = 8.0 / p;
            train_count = std::max<std::size_t>(train_count, static_cast<std::size_t>(std::llround(a.budget_images * s * s)));
          }
        }
        auto draw = [&](std::size_t count, std::uint64_t stream) {
          std::vector<Image> v;
          for (std::size_t i = 0; i < count; ++i) {
            v.push_back(render_quadrant_image({a.n, sample_placement(hash_combine(hash_combine(a.seed, stream), i))}));
          }
          return v;
        };
        data.train = draw(train_count, 1);
        data.val = draw(a.val, 2);
        test = draw(a.test, 3);
      }
      if (test.size() < 5) throw UsageError("the sweep reports means over at least 5 test images");
      TrainConfig cfg;
      cfg.epochs = a.epochs;
      cfg.seed = a.seed;
      cfg.model.base_channels = a.base_channels;
      std::vector<SweepRow> rows;
      try {
        rows = supervision_sweep(data, test, cfg, opts);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const std::string csv = sweep_to_csv(rows);
      write_file(a.out, csv);
      std::cout << csv;
      return kOk;
    };
  });
}

// ---------------------------------------------------------------- gradcheck

struct GradArgs {
  std::uint64_t seed = 0;
  std::size_t base_channels = 2, coords = 40;
  double tolerance = 1e-4;
};

void add_gradcheck(CLI::App& app, GradArgs& a, std::function<int()>& action) {
  auto* c = app.add_subcommand("gradcheck", "Central finite differences against reverse mode (64-bit)");
  c->add_option("--seed", a.seed, "Seed")->capture_default_str();
  c->add_option("--base-channels", a.base_channels, "U-Net width for the full-model check")->capture_default_str();
  c->add_option("--coords", a.coords, "Sampled coordinates per U-Net tensor (0 = all)")->capture_default_str();
  c->callback([&] {
    action = [&] {
      bool ok = true;
      for (const auto& r : ad::standard_gradchecks(a.seed, a.base_channels, a.coords)) {
        const bool pass = r.result.max_rel_error <= a.tolerance;
        ok = ok && pass;
        std::printf("%-36s max_rel_error %.3e checked %zu skipped %zu %s\n", r.name.c_str(), r.result.max_rel_error,
                    r.result.checked, r.result.skipped, pass ? "PASS" : "FAIL");
      }
      return ok ? kOk : kRuntime;
    };
  });
}

}  // namespace

std::size_t worker_threads() {
  if (const char* d = std::getenv("SD_DETERMINISTIC"); d != nullptr && std::string(d) == "1") return 1;
  if (const char* t = std::getenv("SD_THREADS"); t != nullptr) {
    try {
      const long v = std::stol(t);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring invalid SD_THREADS='" << t << "'\n";
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

int run(int argc, char** argv) {
  CLI::App app{"Sparse-dense locally supervised image restoration"};
  app.require_subcommand(1);
  std::function<int()> action;
  GenArgs gen;
  TrainArgs train;
  EvalArgs eval;
  VerifyArgs verify;
  EquivArgs equiv;
  SweepArgs sweep;
  GradArgs grad;
  add_gen(app, gen, action);
  add_train(app, train, action);
  add_eval(app, eval, action);
  add_verify(app, verify, action);
  add_equivariance(app, equiv, action);
  add_sweep(app, sweep, action);
  add_gradcheck(app, grad, action);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  try {
    return action ? action() : kUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const oracle::EnumerationCapExceeded& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kResourceCap;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}

}  // namespace sdr::cli
