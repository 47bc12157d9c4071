#include "gazekit/baselines.hpp"

#include <algorithm>
#include <numeric>

#include "gazekit/blur.hpp"
#include "gazekit/parallel.hpp"

namespace gazekit::baselines {

void KdeSpec::validate() const {
  if (bandwidth && !(*bandwidth > 0.0 && std::isfinite(*bandwidth))) {
    throw Error(ErrorCode::BadArgument, "KDE bandwidth must be positive");
  }
  if (!bandwidth) {
    if (bandwidth_grid.empty()) throw Error(ErrorCode::BadArgument, "KDE bandwidth grid is empty");
    for (std::size_t i = 0; i < bandwidth_grid.size(); ++i) {
      if (!(bandwidth_grid[i] > 0.0) || (i > 0 && !(bandwidth_grid[i] > bandwidth_grid[i - 1]))) {
        throw Error(ErrorCode::BadArgument, "KDE bandwidth grid must be positive and strictly ascending");
      }
    }
  }
  if (!(regularizer_eps >= 0.0 && regularizer_eps < 1.0)) {
    throw Error(ErrorCode::BadArgument, "KDE regularizer eps must lie in [0, 1)");
  }
}

namespace {

// Gaussian factors of one point along one axis, at centers i + 0.5.
void axis_factors(double coord, std::size_t n, double sigma, std::vector<double>& out) {
  out.resize(n);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) + 0.5 - coord;
    out[i] = std::exp(-d * d * inv);
  }
}

double kernel_at(const Point& p, std::size_t row, std::size_t col, double sigma) {
  const double dy = static_cast<double>(row) + 0.5 - p.y;
  const double dx = static_cast<double>(col) + 0.5 - p.x;
  return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
}

// Total mass of one point's kernel over the grid (separable).
double kernel_mass(const Point& p, const Shape& shape, double sigma) {
  std::vector<double> f;
  axis_factors(p.y, shape.height, sigma, f);
  const double rows = std::accumulate(f.begin(), f.end(), 0.0);
  axis_factors(p.x, shape.width, sigma, f);
  return rows * std::accumulate(f.begin(), f.end(), 0.0);
}

std::size_t pixel_of(const Point& p, const Shape& shape) {
  const auto clamp_axis = [](double v, std::size_t n) {
    const double f = std::floor(v);
    if (f <= 0.0) return std::size_t{0};
    return std::min(static_cast<std::size_t>(f), n - 1);
  };
  return shape.index(clamp_axis(p.y, shape.height), clamp_axis(p.x, shape.width));
}

// (1 - eps) * kde / total + eps / n, as a natural log.
double mixed_log(double kde_value, double total, double eps, std::size_t n_pixels) {
  const double p =
      (1.0 - eps) * (total > 0.0 ? std::max(kde_value, 0.0) / total : 0.0) + eps / static_cast<double>(n_pixels);
  return p > 0.0 ? std::log(p) : kNegInf;
}

DensityGrid mixed_density(std::span<const double> kde, const Shape& shape, double eps) {
  const double total = std::accumulate(kde.begin(), kde.end(), 0.0);
  if (!(total > 0.0)) {
    throw Error(ErrorCode::AllZero, "KDE underflowed to zero mass; bandwidth too small for this grid");
  }
  std::vector<double> values(kde.size());
  for (std::size_t i = 0; i < kde.size(); ++i) {
    values[i] = (1.0 - eps) * kde[i] / total + eps / static_cast<double>(kde.size());
  }
  return normalize(shape, values);
}

// Mean leave-one-fixation-out log2 likelihood of `points` under a KDE of the
// same points.
double lofo_score(std::span<const Point> points, std::span<const std::size_t> pixels, const Shape& shape, double sigma,
                  double eps) {
  const std::vector<double> kde = kde_grid(points, shape, sigma);
  const double total = std::accumulate(kde.begin(), kde.end(), 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::size_t pix = pixels[i];
    const double own = kernel_at(points[i], pix / shape.width, pix % shape.width, sigma);
    acc += mixed_log(kde[pix] - own, total - kernel_mass(points[i], shape, sigma), eps, shape.size()) / kLn2;
  }
  return acc / static_cast<double>(points.size());
}

// Picks the best candidate; strict improvement required, so ties keep the
// smaller sigma.
std::size_t argmax_first(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

}  // namespace

std::vector<double> kde_grid(std::span<const Point> points, const Shape& shape, double sigma) {
  std::vector<double> grid(shape.size(), 0.0);
  std::vector<double> rows, cols;
  for (const Point& p : points) {
    axis_factors(p.y, shape.height, sigma, rows);
    axis_factors(p.x, shape.width, sigma, cols);
    for (std::size_t r = 0; r < shape.height; ++r) {
      if (rows[r] == 0.0) continue;
      double* line = grid.data() + r * shape.width;
      for (std::size_t c = 0; c < shape.width; ++c) line[c] += rows[r] * cols[c];
    }
  }
  return grid;
}

Point map_point(const Fixation& fixation, const Shape& from, const Shape& to) {
  return Point{fixation.x * static_cast<double>(to.width) / static_cast<double>(from.width),
               fixation.y * static_cast<double>(to.height) / static_cast<double>(from.height)};
}

KdeResult centerbias(const FixationSet& train_fixations, const std::map<std::string, Shape>& shapes,
                     const Shape& target, const KdeSpec& spec) {
  spec.validate();
  if (train_fixations.empty()) throw Error(ErrorCode::NoFixations, "center bias needs training fixations");
  const auto by_image = group_by_image(train_fixations);

  // Mapped points, grouped per source image in sorted image order.
  std::vector<Point> points;
  std::vector<std::size_t> pixels;
  std::vector<std::size_t> group_start;
  for (const auto& [id, fix] : by_image) {
    auto it = shapes.find(id);
    if (it == shapes.end()) throw Error(ErrorCode::UnknownImage, "image '" + id + "' is not registered");
    pixel_indices(fix, it->second);  // bounds check
    group_start.push_back(points.size());
    for (const auto& f : fix) {
      points.push_back(map_point(f, it->second, target));
      pixels.push_back(pixel_of(points.back(), target));
    }
  }
  group_start.push_back(points.size());

  KdeResult result{DensityGrid::uniform(target), 0.0, {}};
  if (spec.bandwidth) {
    result.bandwidth = *spec.bandwidth;
  } else {
    const auto& grid = spec.bandwidth_grid;
    result.cv_scores.assign(grid.size(), 0.0);
    const std::size_t groups = group_start.size() - 1;
    parallel_for(grid.size(), [&](std::size_t g) {
      const double sigma = grid[g];
      if (groups < 2) {
        result.cv_scores[g] = lofo_score(points, pixels, target, sigma, spec.regularizer_eps);
        return;
      }
      const std::vector<double> kde = kde_grid(points, target, sigma);
      const double total = std::accumulate(kde.begin(), kde.end(), 0.0);
      double acc = 0.0;
      for (std::size_t k = 0; k < groups; ++k) {
        const std::size_t begin = group_start[k], end = group_start[k + 1];
        double own_total = 0.0;
        for (std::size_t j = begin; j < end; ++j) own_total += kernel_mass(points[j], target, sigma);
        for (std::size_t i = begin; i < end; ++i) {
          const std::size_t pix = pixels[i];
          double own = 0.0;
          for (std::size_t j = begin; j < end; ++j) {
            own += kernel_at(points[j], pix / target.width, pix % target.width, sigma);
          }
          acc += mixed_log(kde[pix] - own, total - own_total, spec.regularizer_eps, target.size()) / kLn2;
        }
      }
      result.cv_scores[g] = acc / static_cast<double>(points.size());
    });
    result.bandwidth = grid[argmax_first(result.cv_scores)];
  }
  result.density = mixed_density(kde_grid(points, target, result.bandwidth), target, spec.regularizer_eps);
  return result;
}

GoldStandard::GoldStandard(std::span<const Fixation> fixations, const Shape& shape, const KdeSpec& spec)
    : shape_(shape), eps_(spec.regularizer_eps), bandwidth_(0.0), kde_total_(0.0) {
  spec.validate();
  if (fixations.size() < 2) {
    throw Error(ErrorCode::TooFewFixations, "gold standard needs at least two fixations on the image");
  }
  pixels_ = pixel_indices(fixations, shape_);
  points_.reserve(fixations.size());
  for (const auto& f : fixations) points_.push_back(Point{f.x, f.y});

  if (spec.bandwidth) {
    bandwidth_ = *spec.bandwidth;
  } else {
    cv_scores_.assign(spec.bandwidth_grid.size(), 0.0);
    parallel_for(cv_scores_.size(), [&](std::size_t g) {
      cv_scores_[g] = lofo_score(points_, pixels_, shape_, spec.bandwidth_grid[g], eps_);
    });
    bandwidth_ = spec.bandwidth_grid[argmax_first(cv_scores_)];
  }
  kde_ = kde_grid(points_, shape_, bandwidth_);
  kde_total_ = std::accumulate(kde_.begin(), kde_.end(), 0.0);
  density_ = mixed_density(kde_, shape_, eps_);
}

double GoldStandard::leave_one_out_log_prob(std::size_t i) const {
  const std::size_t pix = pixels_[i];
  const double own = kernel_at(points_[i], pix / shape_.width, pix % shape_.width, bandwidth_);
  return mixed_log(kde_[pix] - own, kde_total_ - kernel_mass(points_[i], shape_, bandwidth_), eps_, shape_.size());
}

std::vector<double> GoldStandard::log2_likelihoods(GoldMode mode) const {
  std::vector<double> out(points_.size());
  for (std::size_t i = 0; i < points_.size(); ++i) {
    out[i] = (mode == GoldMode::LeaveOneOut ? leave_one_out_log_prob(i) : density_->log_at(pixels_[i])) / kLn2;
  }
  return out;
}

DensityGrid empirical_map(std::span<const Fixation> fixations, const Shape& shape, double sigma) {
  if (fixations.empty()) throw Error(ErrorCode::NoFixations, "empirical map needs at least one fixation");
  std::vector<double> histogram(shape.size(), 0.0);
  for (std::size_t p : pixel_indices(fixations, shape)) histogram[p] += 1.0;
  std::vector<double> blurred = gaussian_blur(histogram, shape, sigma);
  for (double& v : blurred) v = std::max(v, 0.0);
  return normalize(shape, blurred);
}

double relative_score(double ig_model, double ig_gold) {
  if (!(ig_gold > 0.0)) throw Error(ErrorCode::NonpositiveGold, "gold-standard IG must be positive");
  return 100.0 * (ig_model / ig_gold);
}

}  // namespace gazekit::baselines
