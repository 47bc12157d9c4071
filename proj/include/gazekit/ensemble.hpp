#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gazekit/core.hpp"

namespace gazekit::ensemble {

struct MixtureMember {
  std::string model;
  double weight = 0.0;
};

// Nonempty, weights >= 0 summing to 1 within 1e-12.
struct MixtureSpec {
  std::vector<MixtureMember> members;

  void validate() const;
  static MixtureSpec equal(const std::vector<std::string>& models);
};

// Linear opinion pool sum_k w_k p_k, evaluated as a weighted logsumexp.
// Zero-weight members are skipped, so a one-hot weight vector returns that
// member's density bit-for-bit.
DensityGrid mix(std::span<const DensityGrid> densities, std::span<const double> weights);
DensityGrid mix(std::span<const DensityGrid* const> densities, std::span<const double> weights);

// Per-image mixture of the named models in `models`. Images are those of the
// first member; every member must cover them.
DensityMap mix_models(const std::map<std::string, DensityMap>& models, const MixtureSpec& spec);

struct SweepPoint {
  double weight = 0.0;  // weight of model B; 0 is model A alone
  double information_gain = 0.0;
};

// IG of (1 - w) A + w B for w = 0, 1/(steps-1), ..., 1. A weight whose mixture
// has zero mass at some fixation gets -inf.
std::vector<SweepPoint> weight_sweep(const DensityMap& model_a, const DensityMap& model_b, const DensityMap& baseline,
                                     const FixationSet& fixations, std::size_t steps);

// Instances are stored as "<model>#<index>"; returns the first k by index.
std::vector<std::string> instance_names(const std::map<std::string, DensityMap>& models, const std::string& model,
                                        std::size_t k);

// Equal-weight mixture over k instances of each named model (DSRE; k = 3
// gives the three-instances-per-backbone composition).
DensityMap build_dsre(const std::map<std::string, DensityMap>& models, const std::vector<std::string>& model_names,
                      std::size_t instances_per_model);

// Shannon entropy in bits.
double entropy_bits(const DensityGrid& density);

// Equal-weight generalized Jensen-Shannon divergence in bits:
// H(mean density) - mean H(p_k), clamped to [0, log2 M].
double jensen_shannon_bits(std::span<const DensityGrid* const> densities);

struct Disagreement {
  std::string image_id;
  double js_bits = 0.0;
};

// Per-image JS divergence across models, sorted descending with ties broken
// by image id. Images are those of the first model.
std::vector<Disagreement> disagreement_ranking(const std::vector<const DensityMap*>& models);

}  // namespace gazekit::ensemble
