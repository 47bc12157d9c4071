#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gazekit/baselines.hpp"
#include "gazekit/core.hpp"
#include "gazekit/ensemble.hpp"
#include "gazekit/metrics.hpp"
#include "gazekit/readout.hpp"

namespace gazekit::harness {

namespace fs = std::filesystem;

inline constexpr const char* kComputedCenterbias = "centerbias";

struct NamedMixture {
  std::string name;
  ensemble::MixtureSpec spec;
};

struct DsreConfig {
  std::string name;
  std::vector<std::string> models;
  std::size_t instances = 1;
};

struct TrainSection {
  std::optional<std::vector<std::size_t>> widths;  // default: readout::default_widths(C)
  readout::TrainConfig schedule;
  std::uint64_t init_seed = 0;
  std::optional<std::size_t> rotation;  // train on one fold rotation instead of every image
};

// Everything a subcommand needs. Relative paths are resolved against the
// directory holding the config file.
struct RunConfig {
  fs::path fixations;
  fs::path images;
  std::map<std::string, fs::path> models;  // name -> directory of <image_id>.fdf
  std::optional<fs::path> features;        // directory of <image_id>.ffv
  std::string baseline = kComputedCenterbias;
  bool crossvalidate_cb = false;
  std::vector<metrics::Metric> metrics{metrics::Metric::IG,  metrics::Metric::AUC, metrics::Metric::sAUC,
                                       metrics::Metric::NSS, metrics::Metric::CC,  metrics::Metric::KLDiv,
                                       metrics::Metric::SIM};
  std::size_t k = 4;
  baselines::KdeSpec kde;
  double sigma_empirical = 2.0;
  std::vector<NamedMixture> mixtures;
  std::optional<DsreConfig> dsre;
  std::uint64_t fold_seed = 0;
  std::size_t folds = 10;
  TrainSection train;
  fs::path output = "out";

  static RunConfig from_json(const nlohmann::json& doc, const fs::path& base_dir);
  static RunConfig load(const fs::path& path);
  // Io if a referenced path is missing; BadArgument for invalid values.
  void validate() const;
};

// Registry, fixations and every configured model directory.
Dataset load_dataset(const RunConfig& config);

// The configured baseline: a named model, or the KDE center bias fitted on
// the fixations (leave-one-image-out per image with crossvalidate_cb).
struct BaselineFit {
  DensityMap densities;
  std::map<std::string, double> bandwidths;
  std::map<std::string, std::vector<double>> cv_scores;
};
BaselineFit fit_centerbias(const Dataset& dataset, const RunConfig& config);
DensityMap baseline_densities(const Dataset& dataset, const RunConfig& config);

// Models, mixtures, gold standard and center bias scored on every
// configured metric (IG always included); each metric uses its
// metric-optimal saliency map. Rows sorted by IG descending, ties by name.
nlohmann::json full_report(const Dataset& dataset, const RunConfig& config);

// Entry point of the gazekit executable. 0 success, 1 validation or usage
// error, 2 I/O error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gazekit::harness
