#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sdr/sampling.hpp"
#include "sdr/unet.hpp"

namespace sdr {

enum class TrainMode { sparse_dense, patch_wise };

std::string to_string(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
  double lr = 4e-4;
  int epochs = 80;
  std::size_t batch_size = 8;
  double scheduler_factor = 0.5;
  int scheduler_patience = 8;
  double scheduler_threshold = 1e-6;
  double early_stop_threshold = 1e-10;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::sparse_dense;
  /// Side of the square supervision patch B; 0 means n/2 (the sparse-dense
  /// quadrant).
  int patch = 0;
  UNetConfig model;
  /// Explicit masks replace the generated odd lattice and corner patch.
  std::optional<PixelMask> omega;
  std::optional<PixelMask> b;

  void validate() const;
  /// Resolved `key = value` text (masks excluded).
  std::string to_text() const;
  /// Applies parsed key/value overrides; unknown keys are rejected earlier
  /// by the parser.
  void apply(const std::map<std::string, std::string>& kv);
  static const std::vector<std::string>& keys();
};

struct TrainingPair {
  Image input;
  Image target;
};

/// Value written over unmeasured pixels before pairing in strict mode.
inline constexpr double kSentinel = -12345.0;

/// input = Ω-masked x (zero filled), target = B-masked x. In strict mode the
/// pair is built from a copy of x whose pixels outside Ω ∪ B hold kSentinel,
/// so any read of an unmeasured pixel would surface in the output.
TrainingPair make_training_pair(const Image& x, const PixelMask& omega, const PixelMask& b, bool strict = true);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
  bool diverged = false;

  std::string to_csv() const;
};

struct TrainResult {
  UNet<float> model;
  TrainHistory history;
};

struct Dataset {
  std::vector<Image> train;
  /// Validation images; when empty the training images are used.
  std::vector<Image> val;
};

/// Minimises the B-cropped squared error of model(Ω-masked x) against x.
/// Returns the parameters with the lowest validation loss. A non-finite
/// training loss stops the run and keeps the last good parameters.
TrainResult train(const Dataset& data, const TrainConfig& cfg);

/// Patch-wise baseline: the network sees only the Ω-masked B patch and is
/// supervised on the same patch. Inference still runs on full images.
TrainResult train_patchwise(const Dataset& data, const TrainConfig& cfg);

/// Dispatches on cfg.mode.
TrainResult train_any(const Dataset& data, const TrainConfig& cfg);

/// B-cropped loss of `model` on `images`, averaged over images, in eval mode.
double validation_loss(const UNet<float>& model, const std::vector<Image>& images, const PixelMask& omega,
                       const PixelMask& b);

/// Full-image restoration of the Ω-masked observation.
Image restore_observed(const UNet<float>& model, const Image& x, const PixelMask& omega);

struct SweepOptions {
  std::vector<int> patch_sizes{8, 4, 2};
  /// Patch sizes also trained in patch-wise mode.
  std::vector<int> patchwise_sizes{8};
  /// Scale the training-set size by (reference_patch / patch)^2 so every
  /// run sees the same number of supervised pixels.
  bool fixed_budget = false;
  int budget_reference_patch = 8;
  std::size_t budget_reference_images = 8;
  /// Independent runs executed concurrently; 1 keeps everything serial.
  std::size_t threads = 1;
};

struct SweepRow {
  std::string mode;
  int patch = 0;
  std::size_t train_images = 0;
  std::size_t test_images = 0;
  double test_mse_mean = 0.0;
  double test_mse_std = 0.0;
  double best_val_loss = 0.0;
};

/// Trains one model per configuration and reports full-image test MSE.
/// For the fixed-budget variant the first k images of `data.train` are used.
std::vector<SweepRow> supervision_sweep(const Dataset& data, const std::vector<Image>& test, const TrainConfig& cfg,
                                        const SweepOptions& opts);

std::string sweep_to_csv(const std::vector<SweepRow>& rows);

/// Mean and sample standard deviation (0 for a single value).
std::pair<double, double> mean_std(const std::vector<double>& v);

}  // namespace sdr
