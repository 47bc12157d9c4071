#include <cmath>
#include <numbers>

#include "gazekit/readout.hpp"

namespace gazekit::readout {

namespace {

double standard_normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void validate(const SynthSpec& spec) {
  if (spec.channels == 0 || spec.shape.size() == 0) throw Error(ErrorCode::BadDimensions, "empty synthetic volume");
  if (!(spec.blob_sigma_min > 0.0) || spec.blob_sigma_max < spec.blob_sigma_min) {
    throw Error(ErrorCode::BadArgument, "blob sigma range is invalid");
  }
  if (!(spec.centerbias_sigma_fraction > 0.0)) throw Error(ErrorCode::BadArgument, "centerbias sigma must be positive");
}

}  // namespace

DensityGrid synth_centerbias(const SynthSpec& spec) {
  validate(spec);
  const double h = static_cast<double>(spec.shape.height);
  const double w = static_cast<double>(spec.shape.width);
  const double sigma = spec.centerbias_sigma_fraction * std::min(h, w);
  std::vector<double> log_values(spec.shape.size());
  for (std::size_t r = 0; r < spec.shape.height; ++r) {
    for (std::size_t c = 0; c < spec.shape.width; ++c) {
      const double dy = (static_cast<double>(r) + 0.5 - h / 2) / sigma;
      const double dx = (static_cast<double>(c) + 0.5 - w / 2) / sigma;
      log_values[spec.shape.index(r, c)] = -0.5 * (dx * dx + dy * dy);
    }
  }
  return DensityGrid::from_unnormalized_log(spec.shape, std::move(log_values));
}

SynthImage synth_features(const SynthSpec& spec, std::uint64_t weights_seed, std::uint64_t image_seed) {
  validate(spec);
  const Shape shape = spec.shape;
  const std::size_t n = shape.size();
  const double h = static_cast<double>(shape.height);
  const double w = static_cast<double>(shape.width);

  std::mt19937_64 weight_rng(weights_seed);
  std::vector<double> a(spec.channels);
  for (double& v : a) v = spec.feature_weight_scale * standard_normal(weight_rng);

  std::mt19937_64 rng(image_seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<double> values(spec.channels * n, 0.0);
  for (std::size_t ch = 0; ch < spec.channels; ++ch) {
    double* f = values.data() + ch * n;
    if (ch % 2 == 0) {
      for (std::size_t b = 0; b < spec.blobs_per_channel; ++b) {
        const double cy = uniform01(rng) * h;
        const double cx = uniform01(rng) * w;
        const double s = spec.blob_sigma_min + uniform01(rng) * (spec.blob_sigma_max - spec.blob_sigma_min);
        for (std::size_t r = 0; r < shape.height; ++r) {
          for (std::size_t c = 0; c < shape.width; ++c) {
            const double dy = (static_cast<double>(r) + 0.5 - cy) / s;
            const double dx = (static_cast<double>(c) + 0.5 - cx) / s;
            f[shape.index(r, c)] += std::exp(-0.5 * (dx * dx + dy * dy));
          }
        }
      }
    } else {
      const double theta = uniform01(rng) * 2.0 * std::numbers::pi;
      const double offset = (uniform01(rng) - 0.5) * 0.5 * std::min(h, w);
      const double width = spec.blob_sigma_min + uniform01(rng) * (spec.blob_sigma_max - spec.blob_sigma_min);
      for (std::size_t r = 0; r < shape.height; ++r) {
        for (std::size_t c = 0; c < shape.width; ++c) {
          const double y = static_cast<double>(r) + 0.5 - h / 2;
          const double x = static_cast<double>(c) + 0.5 - w / 2;
          f[shape.index(r, c)] = std::tanh((x * std::cos(theta) + y * std::sin(theta) - offset) / width);
        }
      }
    }
  }

  const DensityGrid cb = synth_centerbias(spec);
  std::vector<double> log_values(n);
  for (std::size_t i = 0; i < n; ++i) {
    double z = spec.centerbias_weight * cb.log_at(i);
    for (std::size_t ch = 0; ch < spec.channels; ++ch) z += a[ch] * values[ch * n + i];
    log_values[i] = z;
  }
  return SynthImage{FeatureVolume(spec.channels, shape, std::move(values)),
                    DensityGrid::from_unnormalized_log(shape, std::move(log_values))};
}

}  // namespace gazekit::readout
