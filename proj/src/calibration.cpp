#include "gazekit/calibration.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <numeric>
#include <sstream>

#include "gazekit/parallel.hpp"

namespace gazekit::calibration {

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::Calibrated:
      return "calibrated";
    case Verdict::Overconfident:
      return "overconfident";
    case Verdict::Underconfident:
      return "underconfident";
  }
  return "?";
}

Partition quantile_partition(const DensityGrid& density, std::size_t k) {
  if (k < 2) throw Error(ErrorCode::BadArgument, "calibration needs K >= 2");
  if (density.size() < k) {
    throw Error(ErrorCode::TooFewPixels,
                "density has " + std::to_string(density.size()) + " pixels, K = " + std::to_string(k));
  }
  std::vector<std::uint32_t> order(density.size());
  std::iota(order.begin(), order.end(), 0u);
  const auto log_p = density.log_p();
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return log_p[a] < log_p[b]; });

  Partition out{std::vector<std::uint32_t>(density.size()), std::vector<double>(k, 0.0)};
  const double bins = static_cast<double>(k);
  double before = 0.0;
  std::size_t j = 0;
  for (std::uint32_t pixel : order) {
    while (j + 1 < k && !(before < static_cast<double>(j + 1) / bins)) ++j;
    out.bin_of_pixel[pixel] = static_cast<std::uint32_t>(j);
    const double p = density.prob(pixel);
    out.bin_mass[j] += p;
    before += p;
  }
  return out;
}

double chi_square(std::span<const double> observed, std::span<const double> expected) {
  double chi = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (expected[i] > 0.0) {
      const double d = observed[i] - expected[i];
      chi += d * d / expected[i];
    } else if (observed[i] > 0.0) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return chi;
}

double chi_square_critical_95(std::size_t dof) {
  boost::math::chi_squared dist(static_cast<double>(dof));
  return boost::math::quantile(dist, 0.95);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = rank;
    i = j;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

void finalize(CalibrationHistogram& h) {
  const std::size_t k = h.bins.size();
  std::vector<double> observed(h.bins.begin(), h.bins.end());
  h.chi_square = chi_square(observed, h.expected);
  h.critical_value = chi_square_critical_95(k - 1);
  std::vector<double> index(k), ratio(k);
  for (std::size_t j = 0; j < k; ++j) {
    index[j] = static_cast<double>(j);
    // Empty-expectation bins carry no information about the trend.
    ratio[j] = h.expected[j] > 0.0 ? observed[j] / h.expected[j] : 1.0;
  }
  h.spearman = spearman(index, ratio);
  if (!(h.chi_square > h.critical_value) || h.spearman == 0.0) {
    h.verdict = Verdict::Calibrated;
  } else {
    h.verdict = h.spearman < 0.0 ? Verdict::Overconfident : Verdict::Underconfident;
  }
}

CalibrationHistogram calibration_histogram(const DensityMap& model, const FixationSet& fixations, std::size_t k) {
  if (k < 2 || k > 100) throw Error(ErrorCode::BadArgument, "K must lie in [2, 100]");
  if (fixations.empty()) throw Error(ErrorCode::NoFixations, "calibration needs fixations");
  const auto by_image = group_by_image(fixations);
  std::vector<std::string> ids;
  for (const auto& [id, _] : by_image) ids.push_back(id);

  std::vector<std::vector<std::uint64_t>> counts(ids.size());
  std::vector<std::vector<double>> masses(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    auto it = model.find(ids[i]);
    if (it == model.end()) throw Error(ErrorCode::MissingDensity, "no density for image '" + ids[i] + "'");
    const Partition part = quantile_partition(it->second, k);
    counts[i].assign(k, 0);
    for (std::size_t pixel : pixel_indices(by_image.at(ids[i]), it->second.shape())) {
      ++counts[i][part.bin_of_pixel[pixel]];
    }
    masses[i] = part.bin_mass;
  });

  CalibrationHistogram h;
  h.bins.assign(k, 0);
  h.bin_masses.assign(k, 0.0);
  h.expected.assign(k, 0.0);
  h.n_fixations = fixations.size();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double n_image = static_cast<double>(by_image.at(ids[i]).size());
    for (std::size_t j = 0; j < k; ++j) {
      h.bins[j] += counts[i][j];
      h.bin_masses[j] += masses[i][j] / static_cast<double>(ids.size());
      h.expected[j] += n_image * masses[i][j];
    }
  }
  finalize(h);
  return h;
}

nlohmann::json CalibrationHistogram::to_json() const {
  return {{"bins", bins},
          {"bin_masses", bin_masses},
          {"expected", expected},
          {"n_fixations", n_fixations},
          {"chi_square", chi_square},
          {"critical_value", critical_value},
          {"spearman", spearman},
          {"verdict", std::string(to_string(verdict))}};
}

std::string CalibrationHistogram::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "bin,observed,expected,ratio\n";
  for (std::size_t j = 0; j < bins.size(); ++j) {
    const double ratio = expected[j] > 0.0 ? static_cast<double>(bins[j]) / expected[j] : 0.0;
    os << j << ',' << bins[j] << ',' << expected[j] << ',' << ratio << '\n';
  }
  return os.str();
}

}  // namespace gazekit::calibration
