#pragma once

#include <cstdint>
#include <json.hpp>
#include <span>
#include <string_view>
#include <vector>

#include "gazekit/core.hpp"

namespace gazekit::calibration {

enum class Verdict { Calibrated, Overconfident, Underconfident };

std::string_view to_string(Verdict verdict);

// Equal-probability-mass partition of a density into K bins. Pixels are
// walked in ascending probability (ties by row-major index); a pixel joins
// bin j while the mass accumulated before it is < (j + 1) / K. Bin 0 holds
// the least probable pixels.
struct Partition {
  std::vector<std::uint32_t> bin_of_pixel;
  std::vector<double> bin_mass;
};

Partition quantile_partition(const DensityGrid& density, std::size_t k);

struct CalibrationHistogram {
  std::vector<std::uint64_t> bins;  // observed fixations per bin
  std::vector<double> bin_masses;   // mean predicted mass per bin across images
  std::vector<double> expected;     // sum over images of n_image * bin mass
  std::uint64_t n_fixations = 0;
  double chi_square = 0.0;
  double critical_value = 0.0;  // chi-square 0.95 quantile, K - 1 dof
  double spearman = 0.0;        // bin index vs observed / expected
  Verdict verdict = Verdict::Calibrated;

  // {"bins", "bin_masses", "expected", "chi_square", "critical_value",
  //  "spearman", "verdict", "n_fixations"}
  nlohmann::json to_json() const;
  // Plot data: bin,observed,expected,ratio
  std::string to_csv() const;
};

// Pearson chi-square. Bins with zero expectation and zero observations are
// skipped; a positive count in a zero-expectation bin gives +inf.
double chi_square(std::span<const double> observed, std::span<const double> expected);

// 0.95 quantile of the chi-square distribution with `dof` degrees of freedom.
double chi_square_critical_95(std::size_t dof);

// Spearman rank correlation with average ranks for ties; 0 if either side is constant.
double spearman(std::span<const double> a, std::span<const double> b);

// Fixations of every image counted into that image's partition. Verdict:
// calibrated unless chi-square exceeds the 0.95 critical value, then the
// sign of Spearman(bin index, observed / expected): negative means fewer
// fixations than promised in high-probability bins (overconfident).
CalibrationHistogram calibration_histogram(const DensityMap& model, const FixationSet& fixations, std::size_t k);

// Verdict rule on already-aggregated counts.
void finalize(CalibrationHistogram& histogram);

}  // namespace gazekit::calibration
