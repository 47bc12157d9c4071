#include "gazekit/ensemble.hpp"

#include <algorithm>
#include <charconv>
#include <limits>
#include <optional>

#include "gazekit/metrics.hpp"
#include "gazekit/parallel.hpp"

namespace gazekit::ensemble {

void MixtureSpec::validate() const {
  if (members.empty()) throw Error(ErrorCode::BadWeights, "mixture needs at least one member");
  double sum = 0.0;
  for (const auto& m : members) {
    if (!(m.weight >= 0.0) || !std::isfinite(m.weight)) {
      throw Error(ErrorCode::BadWeights, "weight of '" + m.model + "' must be finite and nonnegative");
    }
    sum += m.weight;
  }
  if (!(std::abs(sum - 1.0) <= 1e-12)) throw Error(ErrorCode::BadWeights, "weights sum to " + std::to_string(sum));
}

MixtureSpec MixtureSpec::equal(const std::vector<std::string>& models) {
  MixtureSpec spec;
  for (const auto& m : models) spec.members.push_back({m, 1.0 / static_cast<double>(models.size())});
  return spec;
}

namespace {

void check_weights(std::span<const double> weights, std::size_t count) {
  if (count == 0) throw Error(ErrorCode::BadWeights, "mixture needs at least one density");
  if (weights.size() != count) throw Error(ErrorCode::BadWeights, "one weight per density required");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::BadWeights, "weights must be nonnegative");
    sum += w;
  }
  if (!(std::abs(sum - 1.0) <= 1e-12)) throw Error(ErrorCode::BadWeights, "weights sum to " + std::to_string(sum));
}

}  // namespace

DensityGrid mix(std::span<const DensityGrid* const> densities, std::span<const double> weights) {
  check_weights(weights, densities.size());
  const Shape& shape = densities.front()->shape();
  for (const auto* d : densities) {
    if (d->shape() != shape) {
      throw Error(ErrorCode::ShapeMismatch, "cannot mix " + to_string(shape) + " with " + to_string(d->shape()));
    }
  }
  std::vector<double> log_w(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k) log_w[k] = weights[k] > 0.0 ? std::log(weights[k]) : kNegInf;

  std::vector<double> out(shape.size());
  std::vector<double> terms;
  terms.reserve(densities.size());
  for (std::size_t p = 0; p < shape.size(); ++p) {
    terms.clear();
    for (std::size_t k = 0; k < densities.size(); ++k) {
      if (log_w[k] != kNegInf) terms.push_back(log_w[k] + densities[k]->log_at(p));
    }
    out[p] = logsumexp(terms);
  }
  // A convex combination of normalized grids stays normalized, so the
  // result is validated rather than renormalized.
  return DensityGrid::from_log(shape, std::move(out));
}

DensityGrid mix(std::span<const DensityGrid> densities, std::span<const double> weights) {
  std::vector<const DensityGrid*> ptrs;
  ptrs.reserve(densities.size());
  for (const auto& d : densities) ptrs.push_back(&d);
  return mix(std::span<const DensityGrid* const>(ptrs), weights);
}

DensityMap mix_models(const std::map<std::string, DensityMap>& models, const MixtureSpec& spec) {
  spec.validate();
  std::vector<const DensityMap*> members;
  std::vector<double> weights;
  for (const auto& m : spec.members) {
    auto it = models.find(m.model);
    if (it == models.end()) throw Error(ErrorCode::MissingDensity, "no densities for model '" + m.model + "'");
    members.push_back(&it->second);
    weights.push_back(m.weight);
  }
  std::vector<std::string> ids;
  for (const auto& [id, _] : *members.front()) ids.push_back(id);
  std::vector<std::optional<DensityGrid>> mixed(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    std::vector<const DensityGrid*> grids;
    for (std::size_t k = 0; k < members.size(); ++k) {
      auto it = members[k]->find(ids[i]);
      if (it == members[k]->end()) {
        throw Error(ErrorCode::MissingDensity,
                    "model '" + spec.members[k].model + "' has no density for image '" + ids[i] + "'");
      }
      grids.push_back(&it->second);
    }
    mixed[i] = mix(std::span<const DensityGrid* const>(grids), weights);
  });
  DensityMap out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.emplace(ids[i], std::move(*mixed[i]));
  return out;
}

std::vector<SweepPoint> weight_sweep(const DensityMap& model_a, const DensityMap& model_b, const DensityMap& baseline,
                                     const FixationSet& fixations, std::size_t steps) {
  if (steps < 3) throw Error(ErrorCode::BadArgument, "weight sweep needs at least 3 steps");
  const std::map<std::string, DensityMap> models{{"a", model_a}, {"b", model_b}};
  std::vector<SweepPoint> out;
  for (std::size_t s = 0; s < steps; ++s) {
    // Endpoints are set exactly so they reproduce the single models.
    const double w = s == 0 ? 0.0 : s + 1 == steps ? 1.0 : static_cast<double>(s) / static_cast<double>(steps - 1);
    MixtureSpec spec{{{"a", 1.0 - w}, {"b", w}}};
    const DensityMap mixed = mix_models(models, spec);
    double ig = -std::numeric_limits<double>::infinity();
    try {
      ig = metrics::information_gain(mixed, baseline, fixations).aggregate;
    } catch (const Error& e) {
      // A mixture with zero mass at a fixated pixel has IG -inf.
      if (e.code() != ErrorCode::ZeroDensityAtFixation) throw;
    }
    out.push_back({w, ig});
  }
  return out;
}

std::vector<std::string> instance_names(const std::map<std::string, DensityMap>& models, const std::string& model,
                                        std::size_t k) {
  const std::string prefix = model + "#";
  std::vector<std::pair<long long, std::string>> found;
  for (const auto& [name, _] : models) {
    if (name.size() <= prefix.size() || name.compare(0, prefix.size(), prefix) != 0) continue;
    long long index = 0;
    const char* first = name.data() + prefix.size();
    const char* last = name.data() + name.size();
    auto [ptr, ec] = std::from_chars(first, last, index);
    if (ec == std::errc{} && ptr == last) found.emplace_back(index, name);
  }
  std::sort(found.begin(), found.end());
  if (found.size() < k) {
    throw Error(ErrorCode::MissingInstance, "model '" + model + "' has " + std::to_string(found.size()) +
                                                " instances, " + std::to_string(k) + " requested");
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(found[i].second);
  return out;
}

DensityMap build_dsre(const std::map<std::string, DensityMap>& models, const std::vector<std::string>& model_names,
                      std::size_t instances_per_model) {
  if (model_names.empty() || instances_per_model == 0) {
    throw Error(ErrorCode::BadArgument, "DSRE needs at least one model and one instance per model");
  }
  std::vector<std::string> all;
  for (const auto& m : model_names) {
    for (auto& name : instance_names(models, m, instances_per_model)) all.push_back(std::move(name));
  }
  return mix_models(models, MixtureSpec::equal(all));
}

double entropy_bits(const DensityGrid& density) {
  double h = 0.0;
  for (double lp : density.log_p()) {
    if (lp != kNegInf) h -= std::exp(lp) * lp;
  }
  return h / kLn2;
}

double jensen_shannon_bits(std::span<const DensityGrid* const> densities) {
  if (densities.size() < 2) throw Error(ErrorCode::BadArgument, "JS divergence needs at least two densities");
  const std::vector<double> w(densities.size(), 1.0 / static_cast<double>(densities.size()));
  const DensityGrid mean = mix(densities, w);
  double mean_h = 0.0;
  for (const auto* d : densities) mean_h += entropy_bits(*d);
  mean_h /= static_cast<double>(densities.size());
  const double js = entropy_bits(mean) - mean_h;
  return std::clamp(js, 0.0, std::log2(static_cast<double>(densities.size())));
}

std::vector<Disagreement> disagreement_ranking(const std::vector<const DensityMap*>& models) {
  if (models.size() < 2) throw Error(ErrorCode::BadArgument, "disagreement needs at least two models");
  std::vector<std::string> ids;
  for (const auto& [id, _] : *models.front()) ids.push_back(id);
  std::vector<double> js(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    std::vector<const DensityGrid*> grids;
    for (const auto* m : models) {
      auto it = m->find(ids[i]);
      if (it == m->end()) throw Error(ErrorCode::MissingDensity, "no density for image '" + ids[i] + "'");
      grids.push_back(&it->second);
    }
    js[i] = jensen_shannon_bits(grids);
  });
  std::vector<Disagreement> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({ids[i], js[i]});
  std::sort(out.begin(), out.end(), [](const Disagreement& a, const Disagreement& b) {
    return a.js_bits != b.js_bits ? a.js_bits > b.js_bits : a.image_id < b.image_id;
  });
  return out;
}

}  // namespace gazekit::ensemble
