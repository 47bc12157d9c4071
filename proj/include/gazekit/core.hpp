#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gazekit/error.hpp"

namespace gazekit {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLn2 = std::numbers::ln2;

struct Shape {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return height * width; }
  std::size_t index(std::size_t row, std::size_t col) const { return row * width + col; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& shape);

// ln(e^a + e^b), exact for -inf operands.
double log_add(double a, double b);

// ln(sum_i e^{x_i}). Returns -inf for an empty span or all -inf entries.
double logsumexp(std::span<const double> values);

// Discrete probability distribution over the pixels of one image, held as
// natural-log mass per pixel (row-major). Immutable once constructed.
class DensityGrid {
 public:
  // Validates that logsumexp(log_p) == 0 within `tolerance`.
  static DensityGrid from_log(Shape shape, std::vector<double> log_p, double tolerance = 1e-9);
  // Subtracts logsumexp first; any finite/-inf grid with one finite entry works.
  static DensityGrid from_unnormalized_log(Shape shape, std::vector<double> log_values);
  static DensityGrid uniform(Shape shape);

  const Shape& shape() const { return shape_; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t size() const { return log_p_.size(); }

  std::span<const double> log_p() const { return log_p_; }
  double log_at(std::size_t pixel) const { return log_p_[pixel]; }
  double log_at(std::size_t row, std::size_t col) const { return log_p_[shape_.index(row, col)]; }
  double prob(std::size_t pixel) const { return std::exp(log_p_[pixel]); }
  std::vector<double> probabilities() const;

 private:
  DensityGrid(Shape shape, std::vector<double> log_p) : shape_(shape), log_p_(std::move(log_p)) {}

  Shape shape_;
  std::vector<double> log_p_;
};

// values / sum(values) in log domain. AllZero or BadValue on bad input.
DensityGrid normalize(Shape shape, std::span<const double> values);

// Unnormalized per-pixel scores; only finite values allowed.
class SaliencyMap {
 public:
  SaliencyMap(Shape shape, std::vector<double> values);
  static SaliencyMap from_density(const DensityGrid& density);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t pixel) const { return values_[pixel]; }

 private:
  Shape shape_;
  std::vector<double> values_;
};

struct Fixation {
  std::string image_id;
  std::string subject_id;
  double x = 0.0;
  double y = 0.0;

  std::size_t row() const { return static_cast<std::size_t>(std::floor(y)); }
  std::size_t col() const { return static_cast<std::size_t>(std::floor(x)); }
  std::size_t pixel(const Shape& shape) const { return shape.index(row(), col()); }
};

using FixationSet = std::vector<Fixation>;

// image_id -> fixations on that image, in input order. std::map keeps the
// image order sorted, which every reduction relies on.
std::map<std::string, std::vector<Fixation>> group_by_image(const FixationSet& fixations);

std::vector<std::size_t> pixel_indices(std::span<const Fixation> fixations, const Shape& shape);

// image_id -> density, one model.
using DensityMap = std::map<std::string, DensityGrid>;

class Dataset {
 public:
  void add_image(const std::string& image_id, Shape shape);
  // Validates bounds against the registry (UnknownImage / OutOfBounds).
  void attach_fixations(FixationSet fixations);
  void add_density(const std::string& model, const std::string& image_id, DensityGrid density);

  const std::map<std::string, Shape>& images() const { return images_; }
  const Shape& shape_of(const std::string& image_id) const;
  const FixationSet& fixations() const { return fixations_; }
  const std::map<std::string, DensityMap>& models() const { return densities_; }
  const DensityMap& model(const std::string& name) const;
  bool has_model(const std::string& name) const { return densities_.count(name) > 0; }

 private:
  std::map<std::string, Shape> images_;
  FixationSet fixations_;
  std::map<std::string, DensityMap> densities_;
};

// C x H x W feature stack, (c, h, w) order.
class FeatureVolume {
 public:
  FeatureVolume(std::size_t channels, Shape shape, std::vector<double> values);

  std::size_t channels() const { return channels_; }
  const Shape& shape() const { return shape_; }
  std::span<const double> values() const { return values_; }
  double at(std::size_t channel, std::size_t pixel) const { return values_[channel * shape_.size() + pixel]; }

 private:
  std::size_t channels_;
  Shape shape_;
  std::vector<double> values_;
};

// Uniform double in [0, 1) with 53 random bits; independent of the standard
// library's distribution implementations so seeded output is portable.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Draws pixel indices i.i.d. from the density (inverse CDF).
std::vector<std::size_t> sample_pixels(const DensityGrid& density, std::size_t count, std::mt19937_64& rng);

// Same, returned as fixations with a uniform position inside each pixel.
FixationSet sample_fixations(const DensityGrid& density, const std::string& image_id, std::size_t count,
                             std::mt19937_64& rng);

}  // namespace gazekit
