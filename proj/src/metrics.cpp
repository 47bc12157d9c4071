#include "gazekit/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>

#include "gazekit/blur.hpp"
#include "gazekit/parallel.hpp"

namespace gazekit::metrics {

std::string_view to_string(Metric metric) {
  switch (metric) {
    case Metric::IG:
      return "IG";
    case Metric::LL:
      return "LL";
    case Metric::AUC:
      return "AUC";
    case Metric::sAUC:
      return "sAUC";
    case Metric::NSS:
      return "NSS";
    case Metric::CC:
      return "CC";
    case Metric::KLDiv:
      return "KLDiv";
    case Metric::SIM:
      return "SIM";
  }
  return "?";
}

Metric parse_metric(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (Metric m :
       {Metric::IG, Metric::LL, Metric::AUC, Metric::sAUC, Metric::NSS, Metric::CC, Metric::KLDiv, Metric::SIM}) {
    std::string candidate(to_string(m));
    std::transform(candidate.begin(), candidate.end(), candidate.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (candidate == lower) return m;
  }
  throw Error(ErrorCode::BadArgument, "unknown metric '" + std::string(name) + "'");
}

bool is_fixation_weighted(Metric metric) {
  return metric != Metric::CC && metric != Metric::KLDiv && metric != Metric::SIM;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [id, v] : per_image) per[id] = v;
  return {{"metric", std::string(to_string(metric))},
          {"aggregate", aggregate},
          {"per_image", per},
          {"n_fixations", n_fixations}};
}

namespace {

const DensityGrid& density_for(const DensityMap& model, const std::string& image_id) {
  auto it = model.find(image_id);
  if (it == model.end()) throw Error(ErrorCode::MissingDensity, "no density for image '" + image_id + "'");
  return it->second;
}

template <typename Map>
std::vector<std::string> keys_of(const Map& m) {
  std::vector<std::string> out;
  out.reserve(m.size());
  for (const auto& kv : m) out.push_back(kv.first);
  return out;
}

double population_mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_std(std::span<const double> v, double mean) {
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

std::vector<double> normalized_nonnegative(const SaliencyMap& prediction) {
  std::vector<double> p(prediction.values().begin(), prediction.values().end());
  double sum = 0.0;
  for (double v : p) {
    if (v < 0.0) throw Error(ErrorCode::BadValue, "prediction must be nonnegative to normalize as a density");
    sum += v;
  }
  if (sum <= 0.0) throw Error(ErrorCode::AllZero, "prediction has zero total mass");
  for (double& v : p) v /= sum;
  return p;
}

void require_same_shape(const Shape& a, const Shape& b) {
  if (a != b) throw Error(ErrorCode::ShapeMismatch, "grids " + to_string(a) + " and " + to_string(b) + " differ");
}

}  // namespace

MetricReport log_likelihood(const DensityMap& model, const FixationSet& fixations) {
  if (fixations.empty()) throw Error(ErrorCode::NoFixations, "log-likelihood needs at least one fixation");
  const auto by_image = group_by_image(fixations);
  const auto ids = keys_of(by_image);
  std::vector<double> sums(ids.size());
  parallel_for(ids.size(), [&](std::size_t k) {
    const auto& fix = by_image.at(ids[k]);
    const DensityGrid& density = density_for(model, ids[k]);
    double sum = 0.0;
    for (const auto& f : fix) {
      const std::size_t pixel = pixel_indices(std::span(&f, 1), density.shape()).front();
      const double lp = density.log_at(pixel);
      if (lp == kNegInf) {
        throw Error(ErrorCode::ZeroDensityAtFixation, "image '" + ids[k] + "' pixel (" + std::to_string(f.row()) +
                                                          ", " + std::to_string(f.col()) + ") has zero mass");
      }
      sum += lp / kLn2;
    }
    sums[k] = sum;
  });
  MetricReport report{Metric::LL, {}, 0.0, fixations.size()};
  double total = 0.0;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    report.per_image[ids[k]] = sums[k] / static_cast<double>(by_image.at(ids[k]).size());
    total += sums[k];
  }
  report.aggregate = total / static_cast<double>(fixations.size());
  return report;
}

MetricReport information_gain(const DensityMap& model, const DensityMap& baseline, const FixationSet& fixations) {
  const MetricReport m = log_likelihood(model, fixations);
  const MetricReport b = log_likelihood(baseline, fixations);
  MetricReport report{Metric::IG, {}, m.aggregate - b.aggregate, fixations.size()};
  for (const auto& [id, v] : m.per_image) report.per_image[id] = v - b.per_image.at(id);
  return report;
}

IgDifference per_image_ig_difference(const DensityMap& model_a, const DensityMap& model_b, const DensityMap& baseline,
                                     const FixationSet& fixations) {
  const MetricReport a = information_gain(model_a, baseline, fixations);
  const MetricReport b = information_gain(model_b, baseline, fixations);
  IgDifference out;
  std::vector<double> diffs;
  for (const auto& [id, v] : a.per_image) {
    const double d = v - b.per_image.at(id);
    out.per_image[id] = d;
    diffs.push_back(d);
  }
  out.mean = population_mean(diffs);
  out.stddev = population_std(diffs, out.mean);
  return out;
}

double mann_whitney_auc(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty()) throw Error(ErrorCode::NoFixations, "AUC needs at least one positive");
  if (negatives.empty()) throw Error(ErrorCode::EmptyNonfixPool, "AUC needs at least one negative");
  std::vector<double> sorted(negatives.begin(), negatives.end());
  std::sort(sorted.begin(), sorted.end());
  // Count in half-units so the sum stays an exact integer.
  std::uint64_t twice_u = 0;
  for (double s : positives) {
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), s);
    const auto hi = std::upper_bound(lo, sorted.end(), s);
    twice_u += 2 * static_cast<std::uint64_t>(lo - sorted.begin()) + static_cast<std::uint64_t>(hi - lo);
  }
  return static_cast<double>(twice_u) /
         (2.0 * static_cast<double>(positives.size()) * static_cast<double>(negatives.size()));
}

double auc(const SaliencyMap& saliency, std::span<const std::size_t> fixated_pixels) {
  if (fixated_pixels.empty()) throw Error(ErrorCode::NoFixations, "AUC needs at least one fixation");
  std::vector<double> pos;
  pos.reserve(fixated_pixels.size());
  for (std::size_t p : fixated_pixels) pos.push_back(saliency[p]);
  return mann_whitney_auc(pos, saliency.values());
}

double sauc(const SaliencyMap& saliency, std::span<const std::size_t> fixated_pixels,
            std::span<const std::size_t> nonfix_pool) {
  if (nonfix_pool.empty()) throw Error(ErrorCode::EmptyNonfixPool, "shuffled AUC needs nonfixations");
  if (fixated_pixels.empty()) throw Error(ErrorCode::NoFixations, "shuffled AUC needs at least one fixation");
  std::vector<double> pos, neg;
  pos.reserve(fixated_pixels.size());
  neg.reserve(nonfix_pool.size());
  for (std::size_t p : fixated_pixels) pos.push_back(saliency[p]);
  for (std::size_t p : nonfix_pool) neg.push_back(saliency[p]);
  return mann_whitney_auc(pos, neg);
}

std::size_t map_pixel(std::size_t pixel, const Shape& from, const Shape& to) {
  auto axis = [](std::size_t i, std::size_t n_from, std::size_t n_to) -> std::size_t {
    if (n_from <= 1) return 0;
    const double scaled = static_cast<double>(i) * static_cast<double>(n_to - 1) / static_cast<double>(n_from - 1);
    return std::min(static_cast<std::size_t>(std::llround(scaled)), n_to - 1);
  };
  const std::size_t row = pixel / from.width;
  const std::size_t col = pixel % from.width;
  return to.index(axis(row, from.height, to.height), axis(col, from.width, to.width));
}

std::vector<std::size_t> nonfixation_pool(const std::map<std::string, std::vector<Fixation>>& by_image,
                                          const std::map<std::string, Shape>& shapes, const std::string& target) {
  const Shape& to = shapes.at(target);
  std::vector<std::size_t> pool;
  for (const auto& [id, fix] : by_image) {
    if (id == target) continue;
    const Shape& from = shapes.at(id);
    for (std::size_t p : pixel_indices(fix, from)) pool.push_back(map_pixel(p, from, to));
  }
  return pool;
}

double nss(const SaliencyMap& saliency, std::span<const std::size_t> fixated_pixels) {
  if (fixated_pixels.empty()) throw Error(ErrorCode::NoFixations, "NSS needs at least one fixation");
  const double mean = population_mean(saliency.values());
  const double sd = population_std(saliency.values(), mean);
  if (!(sd > 0.0)) throw Error(ErrorCode::ZeroVariance, "saliency map is constant");
  double acc = 0.0;
  for (std::size_t p : fixated_pixels) acc += (saliency[p] - mean) / sd;
  return acc / static_cast<double>(fixated_pixels.size());
}

double cc(const SaliencyMap& prediction, const DensityGrid& empirical) {
  require_same_shape(prediction.shape(), empirical.shape());
  const std::vector<double> q = empirical.probabilities();
  const auto p = prediction.values();
  const double mp = population_mean(p);
  const double mq = population_mean(q);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double dx = p[i] - mp;
    const double dy = q[i] - mq;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw Error(ErrorCode::ZeroVariance, "CC of a constant grid is undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double kldiv(const SaliencyMap& prediction, const DensityGrid& empirical) {
  require_same_shape(prediction.shape(), empirical.shape());
  const std::vector<double> p = normalized_nonnegative(prediction);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = empirical.prob(i);
    if (q > 0.0) acc += q * std::log2((q + kKlEpsilon) / (p[i] + kKlEpsilon));
  }
  return acc;
}

double sim(const SaliencyMap& prediction, const DensityGrid& empirical) {
  require_same_shape(prediction.shape(), empirical.shape());
  const std::vector<double> p = normalized_nonnegative(prediction);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::min(p[i], empirical.prob(i));
  return std::min(acc, 1.0);
}

std::map<std::string, SaliencyMap> optimal_saliency_maps(const DensityMap& model, Metric metric,
                                                         double sigma_empirical) {
  std::map<std::string, SaliencyMap> out;
  switch (metric) {
    case Metric::IG:
    case Metric::LL:
    case Metric::NSS:
    case Metric::AUC:
      for (const auto& [id, d] : model) out.emplace(id, SaliencyMap::from_density(d));
      return out;
    case Metric::CC:
    case Metric::KLDiv:
    case Metric::SIM:
      for (const auto& [id, d] : model) {
        out.emplace(id, SaliencyMap(d.shape(), gaussian_blur(d.probabilities(), d.shape(), sigma_empirical)));
      }
      return out;
    case Metric::sAUC:
      break;
  }
  if (model.size() < 2) throw Error(ErrorCode::SingleImagePool, "shuffled-AUC maps need at least two images");
  const auto ids = keys_of(model);
  std::vector<std::vector<double>> maps(ids.size());
  parallel_for(ids.size(), [&](std::size_t k) {
    const DensityGrid& target = model.at(ids[k]);
    std::vector<double> mean(target.size(), 0.0);
    for (const auto& [other_id, other] : model) {
      if (other_id == ids[k]) continue;
      for (std::size_t p = 0; p < target.size(); ++p) {
        mean[p] += other.prob(map_pixel(p, target.shape(), other.shape()));
      }
    }
    const double n_other = static_cast<double>(model.size() - 1);
    for (std::size_t p = 0; p < target.size(); ++p) {
      mean[p] = target.prob(p) / std::max(mean[p] / n_other, kSaucClamp);
    }
    maps[k] = std::move(mean);
  });
  for (std::size_t k = 0; k < ids.size(); ++k) out.emplace(ids[k], SaliencyMap(model.at(ids[k]).shape(), maps[k]));
  return out;
}

MetricReport evaluate_saliency(Metric metric, const std::map<std::string, SaliencyMap>& maps,
                               const FixationSet& fixations, const std::map<std::string, Shape>& shapes,
                               const DensityMap& empirical) {
  if (metric == Metric::IG || metric == Metric::LL) {
    throw Error(ErrorCode::BadArgument, "IG and LL are density metrics, not saliency metrics");
  }
  if (fixations.empty()) throw Error(ErrorCode::NoFixations, "evaluation needs at least one fixation");
  const auto by_image = group_by_image(fixations);
  const auto ids = keys_of(by_image);
  std::vector<double> values(ids.size());
  parallel_for(ids.size(), [&](std::size_t k) {
    const std::string& id = ids[k];
    auto it = maps.find(id);
    if (it == maps.end()) throw Error(ErrorCode::MissingDensity, "no saliency map for image '" + id + "'");
    const SaliencyMap& map = it->second;
    const auto pixels = pixel_indices(by_image.at(id), map.shape());
    switch (metric) {
      case Metric::AUC:
        values[k] = auc(map, pixels);
        break;
      case Metric::sAUC:
        values[k] = sauc(map, pixels, nonfixation_pool(by_image, shapes, id));
        break;
      case Metric::NSS:
        values[k] = nss(map, pixels);
        break;
      case Metric::CC:
        values[k] = cc(map, density_for(empirical, id));
        break;
      case Metric::KLDiv:
        values[k] = kldiv(map, density_for(empirical, id));
        break;
      case Metric::SIM:
        values[k] = sim(map, density_for(empirical, id));
        break;
      default:
        break;
    }
  });
  MetricReport report{metric, {}, 0.0, fixations.size()};
  double total = 0.0;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    report.per_image[ids[k]] = values[k];
    total += is_fixation_weighted(metric) ? values[k] * static_cast<double>(by_image.at(ids[k]).size()) : values[k];
  }
  report.aggregate = total / static_cast<double>(is_fixation_weighted(metric) ? fixations.size() : ids.size());
  return report;
}

}  // namespace gazekit::metrics
