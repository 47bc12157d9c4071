#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "gazekit/core.hpp"

namespace gazekit::readout {

// One 1x1-convolution block. Hidden blocks also carry per-channel
// normalization scale/shift; the final (width 1) block does not.
struct LayerParams {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // out x in, row-major
  std::vector<double> bias;
  std::vector<double> norm_scale;
  std::vector<double> norm_shift;
};

// Trainable parameters. Flattened order: for each layer weight, bias,
// norm_scale, norm_shift; then blur_rho, then centerbias_weight.
struct Parameters {
  std::vector<LayerParams> layers;
  double blur_rho = 0.0;           // sigma_blur = softplus(rho)
  double centerbias_weight = 0.0;  // alpha

  std::size_t size() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  // Same layout, all zero.
  Parameters zeros_like() const;
};

inline constexpr double kNormEpsilon = 1e-5;

double softplus(double x);
double sigmoid(double x);
// rho with softplus(rho) == sigma.
double inverse_softplus(double sigma);

// {C, 16, 32, 1}. Every normalized hidden layer is at least 16 wide.
std::vector<std::size_t> default_widths(std::size_t channels);

class ReadoutModel {
 public:
  // widths = {C, h1, ..., 1}. Weights and biases ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in))
  // from `seed`; scale 1, shift 0, alpha 1, sigma_blur 2 px.
  static ReadoutModel initialize(std::vector<std::size_t> widths, DensityGrid centerbias, std::uint64_t seed);

  ReadoutModel(Parameters params, DensityGrid centerbias);

  const std::vector<std::size_t>& widths() const { return widths_; }
  const Parameters& params() const { return params_; }
  Parameters& params() { return params_; }
  const DensityGrid& centerbias() const { return centerbias_; }
  double blur_sigma() const { return softplus(params_.blur_rho); }

 private:
  std::vector<std::size_t> widths_;
  Parameters params_;
  DensityGrid centerbias_;
};

// Pre-blur readout map (one value per pixel), exposed for the pointwise property.
std::vector<double> readout_map(const ReadoutModel& model, const FeatureVolume& features);

// Network -> blur(sigma_blur) -> + alpha * log centerbias -> spatial softmax.
DensityGrid forward(const ReadoutModel& model, const FeatureVolume& features);

struct TrainingImage {
  std::string image_id;
  FeatureVolume features;
  std::vector<std::size_t> fixated_pixels;
};

// -(1/N) sum_i log2 p(x_i | I_i) over every fixation of every image.
double nll(const ReadoutModel& model, std::span<const TrainingImage> images);

struct LossAndGradient {
  double loss = 0.0;
  Parameters gradient;
};

// Exact gradient of nll() by reverse-mode differentiation.
LossAndGradient gradients(const ReadoutModel& model, std::span<const TrainingImage> images);

struct TrainConfig {
  double initial_lr = 0.001;
  double decay_factor = 10.0;
  std::vector<std::size_t> milestones;  // epochs at which lr is divided
  std::size_t epochs = 0;
  std::size_t batch_size = 1;  // images per step
  std::uint64_t seed = 0;
  double momentum = 0.9;

  void validate() const;
  double lr_at(std::size_t epoch) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double nll = 0.0;  // bits/fixation on the full training set after the epoch
};

struct TrainResult {
  ReadoutModel model;
  std::vector<EpochRecord> trace;
};

// SGD with momentum (v <- mu v + g; theta <- theta - lr v), images shuffled
// each epoch from `seed`. Diverged if the loss stops being finite.
TrainResult train(ReadoutModel model, std::span<const TrainingImage> images, const TrainConfig& config);

// Checkpoint file: one-line JSON header, '\n', then the f64le blob
// (Parameters::flatten() order, followed by the centerbias log-densities).
std::vector<std::uint8_t> write_checkpoint(const ReadoutModel& model, const TrainConfig& config);
ReadoutModel read_checkpoint(std::span<const std::uint8_t> bytes);

// Ten-fold rotation scheme: fold r tests, fold r + 1 (mod folds) validates,
// the rest train.
class FoldAssignment {
 public:
  enum class Role { Train, Validation, Test };

  FoldAssignment(std::vector<std::vector<std::string>> folds) : folds_(std::move(folds)) {}

  std::size_t fold_count() const { return folds_.size(); }
  const std::vector<std::vector<std::string>>& folds() const { return folds_; }
  Role role(std::size_t rotation, std::size_t fold) const;
  std::vector<std::string> images(std::size_t rotation, Role role) const;
  nlohmann::json to_json() const;

 private:
  std::vector<std::vector<std::string>> folds_;
};

// Ids are sorted, shuffled with `seed`, and dealt round-robin, so fold sizes
// differ by at most one.
FoldAssignment make_folds(std::vector<std::string> image_ids, std::size_t folds, std::uint64_t seed);

struct SynthSpec {
  std::size_t channels = 8;
  Shape shape{64, 64};
  std::size_t blobs_per_channel = 3;
  double blob_sigma_min = 2.0;
  double blob_sigma_max = 8.0;
  double feature_weight_scale = 0.8;       // std of the generator's per-channel weights
  double centerbias_weight = 1.0;          // generator alpha
  double centerbias_sigma_fraction = 0.3;  // of the shorter side
};

struct SynthImage {
  FeatureVolume features;
  DensityGrid true_density;
};

// Center-bias prior shared by every synthetic image of this shape.
DensityGrid synth_centerbias(const SynthSpec& spec);

// Deterministic per (spec, weights seed, image seed). Even channels are
// sums of Gaussian blobs, odd channels smooth edges; the true density is
// softmax(alpha log cb + sum_c a_c f_c) with a_c drawn from weights_seed.
SynthImage synth_features(const SynthSpec& spec, std::uint64_t weights_seed, std::uint64_t image_seed);

}  // namespace gazekit::readout
