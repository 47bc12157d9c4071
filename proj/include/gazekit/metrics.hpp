#pragma once

#include <json.hpp>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gazekit/core.hpp"

namespace gazekit::metrics {

enum class Metric { IG, LL, AUC, sAUC, NSS, CC, KLDiv, SIM };

std::string_view to_string(Metric metric);
// Case-insensitive; BadArgument on unknown names.
Metric parse_metric(std::string_view name);
// Whether the aggregate weights images by fixation count (IG, LL, AUC, sAUC,
// NSS) or averages images equally (CC, KLDiv, SIM).
bool is_fixation_weighted(Metric metric);

struct MetricReport {
  Metric metric = Metric::IG;
  std::map<std::string, double> per_image;
  double aggregate = 0.0;
  std::size_t n_fixations = 0;

  // {"metric", "aggregate", "per_image", "n_fixations"}
  nlohmann::json to_json() const;
};

// Mean log2 p(x_i | I_i) over all fixations, bits/fixation.
MetricReport log_likelihood(const DensityMap& model, const FixationSet& fixations);

// LL(model) - LL(baseline), computed from the two log-likelihood reports so
// the identity holds bit-for-bit.
MetricReport information_gain(const DensityMap& model, const DensityMap& baseline, const FixationSet& fixations);

struct IgDifference {
  std::map<std::string, double> per_image;
  double mean = 0.0;
  double stddev = 0.0;  // population std across images
};

// Per-image IG(A) - IG(B) against a shared baseline.
IgDifference per_image_ig_difference(const DensityMap& model_a, const DensityMap& model_b, const DensityMap& baseline,
                                     const FixationSet& fixations);

// Tie-aware Mann-Whitney U / (n_pos * n_neg). Ties count 1/2.
double mann_whitney_auc(std::span<const double> positives, std::span<const double> negatives);

// Positives: saliency at fixated pixels (with multiplicity); negatives: all pixels.
double auc(const SaliencyMap& saliency, std::span<const std::size_t> fixated_pixels);

// Negatives: the nonfixation pool, already mapped onto this image.
double sauc(const SaliencyMap& saliency, std::span<const std::size_t> fixated_pixels,
            std::span<const std::size_t> nonfix_pool);

// Relative-position mapping of a pixel between grids:
// row' = round(row * (H_to - 1) / (H_from - 1)), 0 when H_from == 1; same for columns.
std::size_t map_pixel(std::size_t pixel, const Shape& from, const Shape& to);

// Fixated pixels of every image other than `target`, mapped onto the target's shape.
std::vector<std::size_t> nonfixation_pool(const std::map<std::string, std::vector<Fixation>>& by_image,
                                          const std::map<std::string, Shape>& shapes, const std::string& target);

double nss(const SaliencyMap& saliency, std::span<const std::size_t> fixated_pixels);

// Distribution-level metrics against the empirical fixation density.
double cc(const SaliencyMap& prediction, const DensityGrid& empirical);
double kldiv(const SaliencyMap& prediction, const DensityGrid& empirical);
double sim(const SaliencyMap& prediction, const DensityGrid& empirical);

inline constexpr double kKlEpsilon = 1e-20;
inline constexpr double kSaucClamp = 1e-20;

// The saliency map a probabilistic model should report for `metric`:
// the density for IG/LL/NSS/AUC, the density blurred with the empirical-map
// Gaussian for CC/KLDiv/SIM, and density / mean(other images' densities) for
// sAUC. Other images are resampled by nearest neighbor on relative position.
std::map<std::string, SaliencyMap> optimal_saliency_maps(const DensityMap& model, Metric metric,
                                                         double sigma_empirical);

// Scores per-image saliency maps for one saliency metric (AUC, sAUC, NSS, CC,
// KLDiv, SIM) and aggregates per is_fixation_weighted(). `empirical` is needed
// for CC/KLDiv/SIM and `shapes` for sAUC pooling.
MetricReport evaluate_saliency(Metric metric, const std::map<std::string, SaliencyMap>& maps,
                               const FixationSet& fixations, const std::map<std::string, Shape>& shapes,
                               const DensityMap& empirical);

}  // namespace gazekit::metrics
