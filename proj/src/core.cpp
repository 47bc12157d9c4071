#include "gazekit/core.hpp"

#include <algorithm>

namespace gazekit {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::AllZero:
      return "AllZero";
    case ErrorCode::BadValue:
      return "BadValue";
    case ErrorCode::BadMagic:
      return "BadMagic";
    case ErrorCode::BadDimensions:
      return "BadDimensions";
    case ErrorCode::NotNormalized:
      return "NotNormalized";
    case ErrorCode::ParseError:
      return "ParseError";
    case ErrorCode::OutOfBounds:
      return "OutOfBounds";
    case ErrorCode::UnknownImage:
      return "UnknownImage";
    case ErrorCode::ShapeMismatch:
      return "ShapeMismatch";
    case ErrorCode::ZeroDensityAtFixation:
      return "ZeroDensityAtFixation";
    case ErrorCode::MissingDensity:
      return "MissingDensity";
    case ErrorCode::NoFixations:
      return "NoFixations";
    case ErrorCode::EmptyNonfixPool:
      return "EmptyNonfixPool";
    case ErrorCode::ZeroVariance:
      return "ZeroVariance";
    case ErrorCode::SingleImagePool:
      return "SingleImagePool";
    case ErrorCode::TooFewFixations:
      return "TooFewFixations";
    case ErrorCode::NonpositiveGold:
      return "NonpositiveGold";
    case ErrorCode::BadWeights:
      return "BadWeights";
    case ErrorCode::MissingInstance:
      return "MissingInstance";
    case ErrorCode::TooFewPixels:
      return "TooFewPixels";
    case ErrorCode::TooFewImages:
      return "TooFewImages";
    case ErrorCode::Diverged:
      return "Diverged";
    case ErrorCode::BadArgument:
      return "BadArgument";
    case ErrorCode::Io:
      return "Io";
  }
  return "Unknown";
}

std::string to_string(const Shape& shape) { return std::to_string(shape.height) + "x" + std::to_string(shape.width); }

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  const double lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

double logsumexp(std::span<const double> values) {
  double max_value = kNegInf;
  for (double v : values) max_value = std::max(max_value, v);
  if (max_value == kNegInf) return kNegInf;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - max_value);
  return max_value + std::log(sum);
}

namespace {

void check_shape(const Shape& shape, std::size_t count) {
  if (shape.height == 0 || shape.width == 0) {
    throw Error(ErrorCode::BadDimensions, "grid " + to_string(shape) + " has a zero dimension");
  }
  if (shape.size() != count) {
    throw Error(ErrorCode::ShapeMismatch, "grid " + to_string(shape) + " expects " + std::to_string(shape.size()) +
                                              " values, got " + std::to_string(count));
  }
}

void check_log_entries(std::span<const double> log_p) {
  bool any_finite = false;
  for (double v : log_p) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw Error(ErrorCode::BadValue, "log-density entries must be finite or -inf");
    }
    any_finite = any_finite || v != kNegInf;
  }
  if (!any_finite) throw Error(ErrorCode::AllZero, "density has no positive mass");
}

}  // namespace

DensityGrid DensityGrid::from_log(Shape shape, std::vector<double> log_p, double tolerance) {
  check_shape(shape, log_p.size());
  check_log_entries(log_p);
  const double total = logsumexp(log_p);
  if (!(std::abs(total) <= tolerance)) {
    throw Error(ErrorCode::NotNormalized, "log mass sums to " + std::to_string(total));
  }
  return DensityGrid(shape, std::move(log_p));
}

DensityGrid DensityGrid::from_unnormalized_log(Shape shape, std::vector<double> log_values) {
  check_shape(shape, log_values.size());
  check_log_entries(log_values);
  const double total = logsumexp(log_values);
  for (double& v : log_values) v -= total;
  return DensityGrid(shape, std::move(log_values));
}

DensityGrid DensityGrid::uniform(Shape shape) {
  check_shape(shape, shape.size());
  return DensityGrid(shape, std::vector<double>(shape.size(), -std::log(static_cast<double>(shape.size()))));
}

std::vector<double> DensityGrid::probabilities() const {
  std::vector<double> out(log_p_.size());
  std::transform(log_p_.begin(), log_p_.end(), out.begin(), [](double v) { return std::exp(v); });
  return out;
}

DensityGrid normalize(Shape shape, std::span<const double> values) {
  check_shape(shape, values.size());
  double sum = 0.0;
  for (double v : values) {
    if (!std::isfinite(v) || v < 0.0) throw Error(ErrorCode::BadValue, "values must be finite and nonnegative");
    sum += v;
  }
  if (sum <= 0.0) throw Error(ErrorCode::AllZero, "all values are zero");
  const double log_sum = std::log(sum);
  std::vector<double> log_p(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    log_p[i] = values[i] > 0.0 ? std::log(values[i]) - log_sum : kNegInf;
  }
  return DensityGrid::from_log(shape, std::move(log_p));
}

SaliencyMap::SaliencyMap(Shape shape, std::vector<double> values) : shape_(shape), values_(std::move(values)) {
  check_shape(shape_, values_.size());
  for (double v : values_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::BadValue, "saliency values must be finite");
  }
}

SaliencyMap SaliencyMap::from_density(const DensityGrid& density) {
  return SaliencyMap(density.shape(), density.probabilities());
}

std::map<std::string, std::vector<Fixation>> group_by_image(const FixationSet& fixations) {
  std::map<std::string, std::vector<Fixation>> grouped;
  for (const auto& f : fixations) grouped[f.image_id].push_back(f);
  return grouped;
}

std::vector<std::size_t> pixel_indices(std::span<const Fixation> fixations, const Shape& shape) {
  std::vector<std::size_t> out;
  out.reserve(fixations.size());
  for (const auto& f : fixations) {
    if (!(f.x >= 0.0 && f.y >= 0.0 && f.x < static_cast<double>(shape.width) &&
          f.y < static_cast<double>(shape.height))) {
      throw Error(ErrorCode::OutOfBounds, "fixation (" + std::to_string(f.x) + ", " + std::to_string(f.y) +
                                              ") on image '" + f.image_id + "' outside " + to_string(shape));
    }
    out.push_back(f.pixel(shape));
  }
  return out;
}

void Dataset::add_image(const std::string& image_id, Shape shape) {
  check_shape(shape, shape.size());
  auto [it, inserted] = images_.emplace(image_id, shape);
  if (!inserted && it->second != shape) {
    throw Error(ErrorCode::ShapeMismatch,
                "image '" + image_id + "' registered as " + to_string(it->second) + " and " + to_string(shape));
  }
}

const Shape& Dataset::shape_of(const std::string& image_id) const {
  auto it = images_.find(image_id);
  if (it == images_.end()) throw Error(ErrorCode::UnknownImage, "image '" + image_id + "' is not registered");
  return it->second;
}

void Dataset::attach_fixations(FixationSet fixations) {
  for (std::size_t i = 0; i < fixations.size(); ++i) {
    const auto& f = fixations[i];
    const Shape& shape = shape_of(f.image_id);
    if (!(f.x >= 0.0 && f.y >= 0.0 && f.x < static_cast<double>(shape.width) &&
          f.y < static_cast<double>(shape.height))) {
      throw Error(ErrorCode::OutOfBounds, "record " + std::to_string(i + 1) + " (" + f.image_id + "," + f.subject_id +
                                              "," + std::to_string(f.x) + "," + std::to_string(f.y) + ") outside " +
                                              to_string(shape));
    }
  }
  fixations_.insert(fixations_.end(), std::make_move_iterator(fixations.begin()),
                    std::make_move_iterator(fixations.end()));
}

void Dataset::add_density(const std::string& model, const std::string& image_id, DensityGrid density) {
  const Shape& shape = shape_of(image_id);
  if (density.shape() != shape) {
    throw Error(ErrorCode::ShapeMismatch, "density of model '" + model + "' for image '" + image_id + "' is " +
                                              to_string(density.shape()) + ", image is " + to_string(shape));
  }
  auto& per_image = densities_[model];
  per_image.insert_or_assign(image_id, std::move(density));
}

const DensityMap& Dataset::model(const std::string& name) const {
  auto it = densities_.find(name);
  if (it == densities_.end()) throw Error(ErrorCode::MissingDensity, "no densities for model '" + name + "'");
  return it->second;
}

FeatureVolume::FeatureVolume(std::size_t channels, Shape shape, std::vector<double> values)
    : channels_(channels), shape_(shape), values_(std::move(values)) {
  if (channels_ == 0) throw Error(ErrorCode::BadDimensions, "feature volume needs at least one channel");
  check_shape(shape_, shape_.size());
  if (values_.size() != channels_ * shape_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "feature volume size does not match C*H*W");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::BadValue, "feature values must be finite");
  }
}

std::vector<std::size_t> sample_pixels(const DensityGrid& density, std::size_t count, std::mt19937_64& rng) {
  std::vector<double> cdf(density.size());
  double running = 0.0;
  for (std::size_t i = 0; i < density.size(); ++i) {
    running += density.prob(i);
    cdf[i] = running;
  }
  std::vector<std::size_t> out(count);
  for (auto& pixel : out) {
    const double u = uniform01(rng) * running;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t idx = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf.begin(), cdf.size() - 1));
    // upper_bound cannot land on a zero-mass pixel unless u hits the final
    // plateau through rounding; walk back to the last massive pixel.
    while (idx > 0 && density.log_at(idx) == kNegInf) --idx;
    pixel = idx;
  }
  return out;
}

FixationSet sample_fixations(const DensityGrid& density, const std::string& image_id, std::size_t count,
                             std::mt19937_64& rng) {
  FixationSet out;
  out.reserve(count);
  for (std::size_t pixel : sample_pixels(density, count, rng)) {
    const double row = static_cast<double>(pixel / density.width());
    const double col = static_cast<double>(pixel % density.width());
    const double dx = uniform01(rng);
    const double dy = uniform01(rng);
    out.push_back(Fixation{image_id, "s" + std::to_string(out.size() % 15), col + dx, row + dy});
  }
  return out;
}

}  // namespace gazekit
