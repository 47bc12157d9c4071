#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gazekit/core.hpp"

namespace gazekit::baselines {

// Isotropic Gaussian KDE settings. With `bandwidth` set the KDE uses it
// directly; otherwise sigma is picked from `bandwidth_grid` by
// cross-validated log-likelihood (ties go to the smaller sigma).
struct KdeSpec {
  std::optional<double> bandwidth;
  std::vector<double> bandwidth_grid{1.0, 2.0, 4.0, 8.0, 16.0, 32.0};
  double regularizer_eps = 1e-4;

  void validate() const;
};

// A fixation in continuous pixel coordinates of some grid.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

// Unnormalized KDE: sum of Gaussians evaluated at pixel centers (col + 0.5,
// row + 0.5). No boundary correction.
std::vector<double> kde_grid(std::span<const Point> points, const Shape& shape, double sigma);

// Relative-position mapping of continuous coordinates: x * W_to / W_from.
Point map_point(const Fixation& fixation, const Shape& from, const Shape& to);

struct KdeResult {
  DensityGrid density;
  double bandwidth = 0.0;
  // Mean cross-validated log-likelihood (bits/fixation) per grid candidate,
  // empty when the bandwidth was fixed.
  std::vector<double> cv_scores;
};

// Image-invariant center bias on `target`, from fixations of any registered
// images mapped by relative position. Bandwidth selection maximizes
// leave-one-image-out likelihood; with a single training image it falls back
// to leave-one-fixation-out.
KdeResult centerbias(const FixationSet& train_fixations, const std::map<std::string, Shape>& shapes,
                     const Shape& target, const KdeSpec& spec);

enum class GoldMode { LeaveOneOut, Pooled };

// Per-image KDE of that image's own fixations; bandwidth chosen by
// leave-one-fixation-out likelihood.
class GoldStandard {
 public:
  GoldStandard(std::span<const Fixation> fixations, const Shape& shape, const KdeSpec& spec);

  const DensityGrid& density() const { return *density_; }
  double bandwidth() const { return bandwidth_; }
  const std::vector<double>& cv_scores() const { return cv_scores_; }

  // Natural-log probability at fixation i's pixel with fixation i's own kernel
  // removed from the KDE (eps mixing kept).
  double leave_one_out_log_prob(std::size_t i) const;
  // Per-fixation log2 likelihoods in input order.
  std::vector<double> log2_likelihoods(GoldMode mode) const;
  std::size_t fixation_count() const { return points_.size(); }

 private:
  Shape shape_;
  std::vector<Point> points_;
  std::vector<std::size_t> pixels_;
  double eps_;
  double bandwidth_;
  std::vector<double> cv_scores_;
  std::vector<double> kde_;  // unnormalized, at bandwidth_
  double kde_total_;
  std::optional<DensityGrid> density_;
};

// Fixed-bandwidth Gaussian blur (blur.hpp kernel) of the fixation histogram,
// renormalized. Ground truth for CC / KLDiv / SIM.
DensityGrid empirical_map(std::span<const Fixation> fixations, const Shape& shape, double sigma);

// 100 * ig_model / ig_gold.
double relative_score(double ig_model, double ig_gold);

}  // namespace gazekit::baselines
