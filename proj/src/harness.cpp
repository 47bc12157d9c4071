#include "gazekit/harness.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>

#include "gazekit/calibration.hpp"
#include "gazekit/io.hpp"
#include "gazekit/json_writer.hpp"
#include "gazekit/parallel.hpp"

namespace gazekit::harness {

using metrics::Metric;
using nlohmann::json;

namespace {

[[noreturn]] void rethrow_with(const Error& e, const std::string& context) {
  std::string message = e.what();
  const std::string prefix = std::string(to_string(e.code())) + ": ";
  if (message.rfind(prefix, 0) == 0) message.erase(0, prefix.size());
  throw Error(e.code(), context + ": " + message);
}

template <class F>
auto with_context(const std::string& context, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    rethrow_with(e, context);
  }
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorCode::BadArgument, where + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw Error(ErrorCode::BadArgument, "unknown key '" + key + "' in " + where);
    }
  }
}

std::vector<Metric> canonical_metrics(std::vector<Metric> list) {
  list.push_back(Metric::IG);
  std::sort(list.begin(), list.end());
  list.erase(std::unique(list.begin(), list.end()), list.end());
  return list;
}

void write_json(const fs::path& path, const json& doc, std::ostream& out) {
  io::write_file_atomic(path, dump_json(doc));
  out << "wrote " << path.string() << '\n';
}

void write_text(const fs::path& path, const std::string& text, std::ostream& out) {
  io::write_file_atomic(path, text);
  out << "wrote " << path.string() << '\n';
}

void write_density_dir(const fs::path& dir, const DensityMap& densities) {
  for (const auto& [id, d] : densities) io::write_file_atomic(dir / (id + ".fdf"), io::write_density(d));
}

}  // namespace

RunConfig RunConfig::from_json(const json& doc, const fs::path& base_dir) {
  RunConfig c;
  try {
    check_keys(doc,
               {"fixations", "images", "models", "features", "baseline", "crossvalidate_cb", "metrics", "k", "kde",
                "sigma_empirical", "mixtures", "dsre", "fold_seed", "folds", "train", "output"},
               "config");
    if (!doc.contains("fixations") || !doc.contains("images")) {
      throw Error(ErrorCode::BadArgument, "config needs 'fixations' and 'images'");
    }
    c.fixations = resolve(base_dir, doc.at("fixations").get<std::string>());
    c.images = resolve(base_dir, doc.at("images").get<std::string>());
    if (doc.contains("models")) {
      for (const auto& [name, dir] : doc.at("models").items())
        c.models[name] = resolve(base_dir, dir.get<std::string>());
    }
    if (doc.contains("features")) c.features = resolve(base_dir, doc.at("features").get<std::string>());
    c.baseline = doc.value("baseline", c.baseline);
    c.crossvalidate_cb = doc.value("crossvalidate_cb", false);
    if (doc.contains("metrics")) {
      c.metrics.clear();
      for (const auto& m : doc.at("metrics")) c.metrics.push_back(metrics::parse_metric(m.get<std::string>()));
    }
    c.k = doc.value("k", c.k);
    if (doc.contains("kde")) {
      const json& kde = doc.at("kde");
      check_keys(kde, {"bandwidth", "bandwidth_grid", "regularizer_eps"}, "kde");
      if (kde.contains("bandwidth") && !kde.at("bandwidth").is_null())
        c.kde.bandwidth = kde.at("bandwidth").get<double>();
      if (kde.contains("bandwidth_grid")) c.kde.bandwidth_grid = kde.at("bandwidth_grid").get<std::vector<double>>();
      c.kde.regularizer_eps = kde.value("regularizer_eps", c.kde.regularizer_eps);
    }
    c.sigma_empirical = doc.value("sigma_empirical", c.sigma_empirical);
    if (doc.contains("mixtures")) {
      for (const auto& m : doc.at("mixtures")) {
        check_keys(m, {"name", "weights"}, "mixture");
        NamedMixture mixture{m.at("name").get<std::string>(), {}};
        for (const auto& [model, w] : m.at("weights").items()) mixture.spec.members.push_back({model, w.get<double>()});
        c.mixtures.push_back(std::move(mixture));
      }
    }
    if (doc.contains("dsre")) {
      const json& d = doc.at("dsre");
      check_keys(d, {"name", "models", "instances"}, "dsre");
      DsreConfig dsre;
      dsre.models = d.at("models").get<std::vector<std::string>>();
      dsre.instances = d.value("instances", std::size_t{1});
      dsre.name = d.value("name", "DSREx" + std::to_string(dsre.instances));
      c.dsre = std::move(dsre);
    }
    c.fold_seed = doc.value("fold_seed", c.fold_seed);
    c.folds = doc.value("folds", c.folds);
    if (doc.contains("train")) {
      const json& t = doc.at("train");
      check_keys(t,
                 {"widths", "epochs", "milestones", "initial_lr", "decay_factor", "batch_size", "momentum", "seed",
                  "init_seed", "rotation"},
                 "train");
      if (t.contains("widths")) c.train.widths = t.at("widths").get<std::vector<std::size_t>>();
      auto& s = c.train.schedule;
      s.epochs = t.value("epochs", s.epochs);
      s.milestones = t.value("milestones", s.milestones);
      s.initial_lr = t.value("initial_lr", s.initial_lr);
      s.decay_factor = t.value("decay_factor", s.decay_factor);
      s.batch_size = t.value("batch_size", s.batch_size);
      s.momentum = t.value("momentum", s.momentum);
      s.seed = t.value("seed", s.seed);
      c.train.init_seed = t.value("init_seed", c.train.init_seed);
      if (t.contains("rotation")) c.train.rotation = t.at("rotation").get<std::size_t>();
    }
    c.output = resolve(base_dir, doc.value("output", std::string("out")));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadArgument, std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  const std::string text = io::read_text_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return from_json(doc, path.parent_path());
}

void RunConfig::validate() const {
  auto need_file = [](const fs::path& p, const char* what) {
    if (!fs::is_regular_file(p)) throw Error(ErrorCode::Io, std::string(what) + " not found: " + p.string());
  };
  need_file(fixations, "fixation file");
  need_file(images, "image registry");
  for (const auto& [name, dir] : models) {
    if (!fs::is_directory(dir))
      throw Error(ErrorCode::Io, "density directory of '" + name + "' not found: " + dir.string());
  }
  if (features && !fs::is_directory(*features)) {
    throw Error(ErrorCode::Io, "feature directory not found: " + features->string());
  }
  if (k < 2 || k > 100) throw Error(ErrorCode::BadArgument, "k must lie in [2, 100]");
  kde.validate();
  if (!(sigma_empirical > 0.0)) throw Error(ErrorCode::BadArgument, "sigma_empirical must be positive");
  for (const auto& m : mixtures) m.spec.validate();
  if (dsre && (dsre->models.empty() || dsre->instances == 0)) {
    throw Error(ErrorCode::BadArgument, "dsre needs models and instances >= 1");
  }
  if (folds < 3) throw Error(ErrorCode::BadArgument, "folds must be >= 3");
  if (baseline != kComputedCenterbias && !models.count(baseline)) {
    throw Error(ErrorCode::BadArgument, "baseline '" + baseline + "' is neither a model nor 'centerbias'");
  }
  train.schedule.validate();
  if (train.rotation && *train.rotation >= folds) throw Error(ErrorCode::BadArgument, "rotation must be < folds");
}

Dataset load_dataset(const RunConfig& config) {
  Dataset dataset;
  const auto registry =
      with_context(config.images.string(), [&] { return io::read_image_registry(io::read_text_file(config.images)); });
  for (const auto& [id, shape] : registry) dataset.add_image(id, shape);
  with_context(config.fixations.string(),
               [&] { dataset.attach_fixations(io::read_fixations(io::read_text_file(config.fixations))); });
  for (const auto& [name, dir] : config.models) {
    for (const auto& [id, shape] : registry) {
      const fs::path file = dir / (id + ".fdf");
      if (!fs::exists(file)) continue;
      with_context(file.string(), [&] { dataset.add_density(name, id, io::read_density(io::read_file(file))); });
    }
  }
  return dataset;
}

BaselineFit fit_centerbias(const Dataset& dataset, const RunConfig& config) {
  BaselineFit fit;
  const auto& shapes = dataset.images();
  if (!config.crossvalidate_cb) {
    std::map<std::pair<std::size_t, std::size_t>, baselines::KdeResult> by_shape;
    for (const auto& [id, shape] : shapes) {
      const auto key = std::make_pair(shape.height, shape.width);
      auto it = by_shape.find(key);
      if (it == by_shape.end()) {
        it = by_shape.emplace(key, baselines::centerbias(dataset.fixations(), shapes, shape, config.kde)).first;
      }
      fit.densities.emplace(id, it->second.density);
      fit.bandwidths[id] = it->second.bandwidth;
      fit.cv_scores[id] = it->second.cv_scores;
    }
    return fit;
  }
  for (const auto& [id, shape] : shapes) {
    FixationSet others;
    for (const auto& f : dataset.fixations()) {
      if (f.image_id != id) others.push_back(f);
    }
    auto result = with_context("center bias for image '" + id + "'",
                               [&] { return baselines::centerbias(others, shapes, shape, config.kde); });
    fit.densities.emplace(id, std::move(result.density));
    fit.bandwidths[id] = result.bandwidth;
    fit.cv_scores[id] = std::move(result.cv_scores);
  }
  return fit;
}

DensityMap baseline_densities(const Dataset& dataset, const RunConfig& config) {
  if (dataset.has_model(config.baseline)) return dataset.model(config.baseline);
  if (config.baseline == kComputedCenterbias) return fit_centerbias(dataset, config).densities;
  throw Error(ErrorCode::MissingDensity, "baseline model '" + config.baseline + "' has no densities");
}

namespace {

struct ScoringContext {
  const FixationSet& fixations;
  const std::map<std::string, Shape>& shapes;
  const DensityMap& baseline;
  const metrics::MetricReport& baseline_ll;
  DensityMap empirical;
  double sigma_empirical;
  std::vector<Metric> columns;
};

struct Row {
  std::string name;
  std::string kind;
  std::map<Metric, metrics::MetricReport> reports;
  json extra = json::object();
};

std::map<Metric, metrics::MetricReport> score_density(const DensityMap& model, const ScoringContext& ctx) {
  std::map<Metric, metrics::MetricReport> out;
  for (Metric m : ctx.columns) {
    if (m == Metric::IG) {
      out[m] = metrics::information_gain(model, ctx.baseline, ctx.fixations);
    } else if (m == Metric::LL) {
      out[m] = metrics::log_likelihood(model, ctx.fixations);
    } else {
      const auto maps = metrics::optimal_saliency_maps(model, m, ctx.sigma_empirical);
      out[m] = metrics::evaluate_saliency(m, maps, ctx.fixations, ctx.shapes, ctx.empirical);
    }
  }
  return out;
}

// Likelihood columns use leave-one-out KDE; map-based columns use the
// pooled KDE density.
Row gold_standard_row(const ScoringContext& ctx, const baselines::KdeSpec& kde) {
  const auto by_image = group_by_image(ctx.fixations);
  std::vector<std::string> ids;
  for (const auto& [id, _] : by_image) ids.push_back(id);
  std::vector<std::optional<baselines::GoldStandard>> gold(ids.size());
  std::vector<double> loo_sums(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    with_context("gold standard for image '" + ids[i] + "'", [&] {
      gold[i].emplace(by_image.at(ids[i]), ctx.shapes.at(ids[i]), kde);
      const auto ll = gold[i]->log2_likelihoods(baselines::GoldMode::LeaveOneOut);
      double s = 0.0;
      for (double v : ll) s += v;
      loo_sums[i] = s;
    });
  });

  Row row{"gold_standard", "gold_standard", {}, json::object()};
  DensityMap pooled;
  json bandwidths = json::object();
  metrics::MetricReport ll{Metric::LL, {}, 0.0, ctx.fixations.size()};
  metrics::MetricReport ig{Metric::IG, {}, 0.0, ctx.fixations.size()};
  double total = 0.0, base_total = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double n = static_cast<double>(by_image.at(ids[i]).size());
    pooled.emplace(ids[i], gold[i]->density());
    bandwidths[ids[i]] = gold[i]->bandwidth();
    ll.per_image[ids[i]] = loo_sums[i] / n;
    ig.per_image[ids[i]] = loo_sums[i] / n - ctx.baseline_ll.per_image.at(ids[i]);
    total += loo_sums[i];
    base_total += ctx.baseline_ll.per_image.at(ids[i]) * n;
  }
  const double big_n = static_cast<double>(ctx.fixations.size());
  ll.aggregate = total / big_n;
  ig.aggregate = total / big_n - ctx.baseline_ll.aggregate;
  for (Metric m : ctx.columns) {
    if (m == Metric::IG) {
      row.reports[m] = ig;
    } else if (m == Metric::LL) {
      row.reports[m] = ll;
    } else {
      const auto maps = metrics::optimal_saliency_maps(pooled, m, ctx.sigma_empirical);
      row.reports[m] = metrics::evaluate_saliency(m, maps, ctx.fixations, ctx.shapes, ctx.empirical);
    }
  }
  row.extra["bandwidths"] = bandwidths;
  return row;
}

}  // namespace

json full_report(const Dataset& dataset, const RunConfig& config) {
  const FixationSet& fixations = dataset.fixations();
  if (fixations.empty()) throw Error(ErrorCode::NoFixations, "report needs fixations");
  const auto& shapes = dataset.images();
  const bool computed_cb = !dataset.has_model(config.baseline);
  const DensityMap baseline = baseline_densities(dataset, config);
  const auto baseline_ll =
      with_context("baseline '" + config.baseline + "'", [&] { return metrics::log_likelihood(baseline, fixations); });

  ScoringContext ctx{
      fixations, shapes, baseline, baseline_ll, {}, config.sigma_empirical, canonical_metrics(config.metrics)};
  for (const auto& [id, fs] : group_by_image(fixations)) {
    ctx.empirical.emplace(id, baselines::empirical_map(fs, shapes.at(id), config.sigma_empirical));
  }

  std::vector<Row> rows;
  auto add = [&](const std::string& name, const std::string& kind, const DensityMap& densities) {
    rows.push_back({name, kind, with_context("model '" + name + "'", [&] { return score_density(densities, ctx); }),
                    json::object()});
  };
  for (const auto& [name, densities] : dataset.models()) add(name, "model", densities);
  for (const auto& m : config.mixtures) {
    add(m.name, "mixture",
        with_context("mixture '" + m.name + "'", [&] { return ensemble::mix_models(dataset.models(), m.spec); }));
  }
  if (config.dsre) {
    add(config.dsre->name, "mixture", with_context("mixture '" + config.dsre->name + "'", [&] {
          return ensemble::build_dsre(dataset.models(), config.dsre->models, config.dsre->instances);
        }));
  }
  if (computed_cb) add(kComputedCenterbias, "centerbias", baseline);
  rows.push_back(gold_standard_row(ctx, config.kde));
  const double gold_ig = rows.back().reports.at(Metric::IG).aggregate;

  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    const double ia = a.reports.at(Metric::IG).aggregate, ib = b.reports.at(Metric::IG).aggregate;
    if (ia != ib) return ia > ib;
    return a.name < b.name;
  });

  json columns = json::array();
  for (Metric m : ctx.columns) columns.push_back(std::string(metrics::to_string(m)));
  json out_rows = json::array();
  for (const Row& row : rows) {
    json scores = json::object(), per_image = json::object();
    for (const auto& [m, report] : row.reports) {
      scores[std::string(metrics::to_string(m))] = report.aggregate;
      per_image[std::string(metrics::to_string(m))] = report.per_image;
    }
    json r = {{"model", row.name},
              {"kind", row.kind},
              {"scores", scores},
              {"per_image", per_image},
              {"relative_score", baselines::relative_score(row.reports.at(Metric::IG).aggregate, gold_ig)}};
    for (const auto& [key, value] : row.extra.items()) r[key] = value;
    out_rows.push_back(std::move(r));
  }
  return {{"columns", columns},
          {"baseline", config.baseline},
          {"sigma_empirical", config.sigma_empirical},
          {"n_fixations", fixations.size()},
          {"n_images", group_by_image(fixations).size()},
          {"rows", out_rows}};
}

namespace {

std::string report_csv(const json& report) {
  std::ostringstream os;
  os << "model,kind";
  for (const auto& c : report.at("columns")) os << ',' << c.get<std::string>();
  os << ",relative_score\n";
  for (const auto& row : report.at("rows")) {
    os << row.at("model").get<std::string>() << ',' << row.at("kind").get<std::string>();
    for (const auto& c : report.at("columns"))
      os << ',' << num(row.at("scores").at(c.get<std::string>()).get<double>());
    os << ',' << num(row.at("relative_score").get<double>()) << '\n';
  }
  return os.str();
}

ensemble::MixtureSpec parse_weights(const std::string& text) {
  ensemble::MixtureSpec spec;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.rfind('=');
    if (eq == std::string::npos || eq == 0)
      throw Error(ErrorCode::BadArgument, "--weights expects name=weight, got '" + item + "'");
    double w = 0.0;
    try {
      std::size_t used = 0;
      w = std::stod(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error(ErrorCode::BadArgument, "--weights: bad weight in '" + item + "'");
    }
    spec.members.push_back({item.substr(0, eq), w});
  }
  spec.validate();
  return spec;
}

std::vector<std::string> base_model_names(const Dataset& dataset) {
  std::set<std::string> names;
  for (const auto& [name, _] : dataset.models()) names.insert(name.substr(0, name.find('#')));
  return {names.begin(), names.end()};
}

json ensemble_summary(const Dataset& dataset, const RunConfig& config, const std::string& name,
                      const ensemble::MixtureSpec& spec, const DensityMap& mixture) {
  json members = json::object();
  for (const auto& m : spec.members) members[m.model] = m.weight;
  json js = json::object();
  double js_total = 0.0;
  for (const auto& [id, _] : mixture) {
    std::vector<const DensityGrid*> grids;
    for (const auto& m : spec.members) grids.push_back(&dataset.model(m.model).at(id));
    const double v = ensemble::jensen_shannon_bits(grids);
    js[id] = v;
    js_total += v;
  }
  json doc = {{"name", name},
              {"members", members},
              {"js_bits", js},
              {"mean_js_bits", mixture.empty() ? 0.0 : js_total / static_cast<double>(mixture.size())}};
  if (!dataset.fixations().empty()) {
    const DensityMap baseline = baseline_densities(dataset, config);
    json before = json::object();
    for (const auto& m : spec.members) {
      before[m.model] = metrics::information_gain(dataset.model(m.model), baseline, dataset.fixations()).aggregate;
    }
    doc["ig_before"] = before;
    doc["ig_after"] = metrics::information_gain(mixture, baseline, dataset.fixations()).aggregate;
  }
  return doc;
}

void cmd_synth(const fs::path& dir, std::size_t images, std::size_t size, std::size_t channels,
               std::size_t fixations_per_image, std::uint64_t seed, std::ostream& out) {
  if (images < 3 || size == 0 || channels == 0 || fixations_per_image < 2) {
    throw Error(ErrorCode::BadArgument, "synth needs >= 3 images, size >= 1, channels >= 1, >= 2 fixations");
  }
  readout::SynthSpec spec;
  spec.channels = channels;
  spec.shape = {size, size};
  const DensityGrid cb = readout::synth_centerbias(spec);
  std::mt19937_64 rng(seed);
  std::map<std::string, Shape> registry;
  FixationSet fixations;
  for (std::size_t i = 0; i < images; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "img%03zu", i);
    const auto s = readout::synth_features(spec, seed, seed * 1000003ULL + i + 1);
    registry[id] = spec.shape;
    const auto fs = sample_fixations(s.true_density, id, fixations_per_image, rng);
    fixations.insert(fixations.end(), fs.begin(), fs.end());
    std::vector<double> sharp(s.true_density.size()), flat(s.true_density.size());
    for (std::size_t p = 0; p < sharp.size(); ++p) {
      sharp[p] = 2.0 * s.true_density.log_at(p);
      flat[p] = 0.5 * s.true_density.log_at(p);
    }
    io::write_file_atomic(dir / "features" / (std::string(id) + ".ffv"), io::write_features(s.features));
    io::write_file_atomic(dir / "models" / "truth" / (std::string(id) + ".fdf"), io::write_density(s.true_density));
    io::write_file_atomic(dir / "models" / "sharp" / (std::string(id) + ".fdf"),
                          io::write_density(DensityGrid::from_unnormalized_log(spec.shape, std::move(sharp))));
    io::write_file_atomic(dir / "models" / "flat" / (std::string(id) + ".fdf"),
                          io::write_density(DensityGrid::from_unnormalized_log(spec.shape, std::move(flat))));
    io::write_file_atomic(dir / "models" / "prior" / (std::string(id) + ".fdf"), io::write_density(cb));
  }
  io::write_file_atomic(dir / "images.csv", io::write_image_registry(registry));
  io::write_file_atomic(dir / "fixations.csv", io::write_fixations(fixations));
  const json config = {
      {"fixations", "fixations.csv"},
      {"images", "images.csv"},
      {"features", "features"},
      {"models",
       {{"truth", "models/truth"}, {"sharp", "models/sharp"}, {"flat", "models/flat"}, {"prior", "models/prior"}}},
      {"mixtures", json::array({{{"name", "truth+flat"}, {"weights", {{"truth", 0.5}, {"flat", 0.5}}}}})},
      {"folds", std::min<std::size_t>(10, images)},
      {"train", {{"epochs", 10}, {"milestones", {6, 8}}}},
      {"output", "out"}};
  write_json(dir / "config.json", config, out);
}

std::vector<readout::TrainingImage> training_images(const Dataset& dataset, const RunConfig& config,
                                                    const std::vector<std::string>& ids) {
  const auto by_image = group_by_image(dataset.fixations());
  std::vector<readout::TrainingImage> out;
  for (const auto& id : ids) {
    auto it = by_image.find(id);
    if (it == by_image.end()) continue;
    const fs::path file = *config.features / (id + ".ffv");
    auto features = with_context(file.string(), [&] { return io::read_features(io::read_file(file)); });
    if (!(features.shape() == dataset.shape_of(id))) {
      throw Error(ErrorCode::ShapeMismatch, file.string() + ": features are " + to_string(features.shape()) +
                                                ", image is " + to_string(dataset.shape_of(id)));
    }
    auto pixels = pixel_indices(it->second, dataset.shape_of(id));
    out.push_back({id, std::move(features), std::move(pixels)});
  }
  return out;
}

void cmd_train(const Dataset& dataset, const RunConfig& config, const fs::path& out_dir, std::ostream& out) {
  if (!config.features) throw Error(ErrorCode::BadArgument, "train needs a 'features' directory in the config");
  std::vector<std::string> all_ids;
  for (const auto& [id, _] : dataset.images()) all_ids.push_back(id);
  std::vector<std::string> train_ids = all_ids, val_ids, test_ids;
  json split = json::object();
  if (config.train.rotation) {
    const auto folds = readout::make_folds(all_ids, config.folds, config.fold_seed);
    using Role = readout::FoldAssignment::Role;
    train_ids = folds.images(*config.train.rotation, Role::Train);
    val_ids = folds.images(*config.train.rotation, Role::Validation);
    test_ids = folds.images(*config.train.rotation, Role::Test);
    split = {{"rotation", *config.train.rotation}, {"train", train_ids}, {"validation", val_ids}, {"test", test_ids}};
  }
  const auto train_set = training_images(dataset, config, train_ids);
  if (train_set.empty()) throw Error(ErrorCode::NoFixations, "no training image has both fixations and features");
  const Shape shape = dataset.shape_of(train_set.front().image_id);
  FixationSet train_fix;
  for (const auto& im : train_set) {
    if (!(dataset.shape_of(im.image_id) == shape)) {
      throw Error(ErrorCode::ShapeMismatch, "readout training needs one image size; '" + im.image_id + "' differs");
    }
  }
  for (const auto& f : dataset.fixations()) {
    if (std::binary_search(train_ids.begin(), train_ids.end(), f.image_id)) train_fix.push_back(f);
  }
  const auto cb = baselines::centerbias(train_fix, dataset.images(), shape, config.kde);
  const std::size_t channels = train_set.front().features.channels();
  const auto widths = config.train.widths.value_or(readout::default_widths(channels));
  auto model = readout::ReadoutModel::initialize(widths, cb.density, config.train.init_seed);
  auto result = readout::train(std::move(model), train_set, config.train.schedule);

  std::ostringstream trace;
  trace << "epoch,lr,nll\n";
  json trace_json = json::array();
  for (const auto& e : result.trace) {
    trace << e.epoch << ',' << num(e.lr) << ',' << num(e.nll) << '\n';
    trace_json.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"nll", e.nll}});
  }
  json summary = {{"widths", widths},
                  {"centerbias_bandwidth", cb.bandwidth},
                  {"sigma_blur", result.model.blur_sigma()},
                  {"alpha", result.model.params().centerbias_weight},
                  {"trace", trace_json},
                  {"train_nll", readout::nll(result.model, train_set)}};
  if (!split.empty()) summary["split"] = split;
  for (const auto& [key, ids] : {std::pair{"validation_nll", &val_ids}, std::pair{"test_nll", &test_ids}}) {
    const auto set = training_images(dataset, config, *ids);
    if (!set.empty()) summary[key] = readout::nll(result.model, set);
  }
  io::write_file_atomic(out_dir / "checkpoint.bin", readout::write_checkpoint(result.model, config.train.schedule));
  out << "wrote " << (out_dir / "checkpoint.bin").string() << '\n';
  write_text(out_dir / "loss_trace.csv", trace.str(), out);
  for (const auto& id : all_ids) {
    if (!(dataset.shape_of(id) == shape)) continue;
    const fs::path file = *config.features / (id + ".ffv");
    if (!fs::exists(file)) continue;
    const auto features = with_context(file.string(), [&] { return io::read_features(io::read_file(file)); });
    io::write_file_atomic(out_dir / "predictions" / (id + ".fdf"),
                          io::write_density(readout::forward(result.model, features)));
  }
  write_json(out_dir / "train.json", summary, out);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Evaluate, calibrate and ensemble fixation densities; train a pointwise readout head.", "gazekit"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string config_path, out_override, weights, mixture_name, model_a, model_b, only_model;
  std::vector<std::string> metric_names, model_list;
  bool plot_data = false, crossvalidate_cb = false;
  std::size_t k = 0, dsre = 0, steps = 11, folds = 0;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rotation;
  std::size_t synth_images = 12, synth_size = 32, synth_channels = 8, synth_fix = 200;
  std::uint64_t synth_seed = 0;

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "Run configuration (JSON)")->required();
    sub->add_option("-o,--out", out_override, "Output directory (overrides the config)");
    return sub;
  };
  auto* evaluate = with_config(app.add_subcommand("evaluate", "Score models on the configured metrics"));
  evaluate->add_option("-m,--metric", metric_names, "Metric(s): IG LL AUC sAUC NSS CC KLDiv SIM")->delimiter(',');
  evaluate->add_flag("--crossvalidate-cb", crossvalidate_cb, "Fit the center bias without the evaluated image");
  evaluate->add_flag("--plot-data", plot_data, "Also write report.csv");
  auto* baseline = with_config(app.add_subcommand("baseline", "Fit center-bias and gold-standard KDEs"));
  baseline->add_flag("--crossvalidate-cb", crossvalidate_cb, "Fit the center bias without the evaluated image");
  auto* ens = with_config(app.add_subcommand("ensemble", "Mix model densities"));
  ens->add_option("-w,--weights", weights, "name=weight,... (weights sum to 1)");
  ens->add_option("--dsre", dsre, "Equal mixture of K instances (name#0 ... name#K-1) per model");
  ens->add_option("--models", model_list, "Models for --dsre (default: config or all)")->delimiter(',');
  ens->add_option("--name", mixture_name, "Name of the mixture");
  auto* calibrate = with_config(app.add_subcommand("calibrate", "Equal-mass calibration histogram"));
  calibrate->add_option("-k", k, "Number of bins (2..100)");
  calibrate->add_option("--model", only_model, "Only this model");
  calibrate->add_flag("--plot-data", plot_data, "Also write bar-height CSVs");
  auto* disagree = with_config(app.add_subcommand("disagree", "Rank images by Jensen-Shannon disagreement"));
  disagree->add_option("--models", model_list, "Models to compare (default: all)")->delimiter(',');
  disagree->add_flag("--plot-data", plot_data, "Also write disagreement.csv");
  auto* sweep = with_config(app.add_subcommand("sweep", "IG of (1-w) A + w B over a weight grid"));
  sweep->add_option("-a", model_a, "Model A")->required();
  sweep->add_option("-b", model_b, "Model B")->required();
  sweep->add_option("--steps", steps, "Grid points including both ends (>= 3)");
  sweep->add_flag("--crossvalidate-cb", crossvalidate_cb, "Fit the center bias without the evaluated image");
  sweep->add_flag("--plot-data", plot_data, "Also write the sweep CSV");
  auto* train = with_config(app.add_subcommand("train", "Train the readout head on feature volumes"));
  train->add_option("--rotation", rotation, "Train on one fold rotation");
  auto* folds_cmd = with_config(app.add_subcommand("folds", "Deterministic train/validation/test rotations"));
  folds_cmd->add_option("--folds", folds, "Number of folds (>= 3)");
  folds_cmd->add_option("--seed", seed, "Shuffle seed (overrides fold_seed)");
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset with known densities");
  synth->add_option("-o,--out", out_override, "Target directory")->required();
  synth->add_option("--images", synth_images, "Number of images");
  synth->add_option("--size", synth_size, "Image side length");
  synth->add_option("--channels", synth_channels, "Feature channels");
  synth->add_option("--fixations", synth_fix, "Fixations per image");
  synth->add_option("--seed", synth_seed, "Generator seed");

  if (!args.empty() && !args.front().empty() && args.front().front() != '-' &&
      app.get_subcommand_no_throw(args.front()) == nullptr) {
    err << "ERROR: unknown subcommand '" << args.front() << "'\n" << app.help();
    return 1;
  }

  std::vector<const char*> argv{"gazekit"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      cmd_synth(out_override, synth_images, synth_size, synth_channels, synth_fix, synth_seed, out);
      return 0;
    }
    RunConfig config = RunConfig::load(config_path);
    if (!out_override.empty()) config.output = out_override;
    if (!metric_names.empty()) {
      config.metrics.clear();
      for (const auto& m : metric_names) config.metrics.push_back(metrics::parse_metric(m));
    }
    if (crossvalidate_cb) config.crossvalidate_cb = true;
    if (k != 0) config.k = k;
    if (folds != 0) config.folds = folds;
    if (seed) config.fold_seed = *seed;
    if (rotation) config.train.rotation = rotation;
    config.validate();
    const fs::path& out_dir = config.output;

    if (folds_cmd->parsed()) {
      std::vector<std::string> ids;
      for (const auto& [id, _] : io::read_image_registry(io::read_text_file(config.images))) ids.push_back(id);
      write_json(out_dir / "folds.json", readout::make_folds(ids, config.folds, config.fold_seed).to_json(), out);
      return 0;
    }

    const Dataset dataset = load_dataset(config);
    if (evaluate->parsed()) {
      const json report = full_report(dataset, config);
      write_json(out_dir / "report.json", report, out);
      if (plot_data) write_text(out_dir / "report.csv", report_csv(report), out);
    } else if (baseline->parsed()) {
      const BaselineFit cb = fit_centerbias(dataset, config);
      write_density_dir(out_dir / "baseline" / "centerbias", cb.densities);
      json gold = json::object();
      DensityMap gold_maps;
      for (const auto& [id, fs] : group_by_image(dataset.fixations())) {
        with_context("gold standard for image '" + id + "'", [&] {
          const baselines::GoldStandard g(fs, dataset.shape_of(id), config.kde);
          gold[id] = {{"bandwidth", g.bandwidth()}, {"cv_scores", g.cv_scores()}};
          gold_maps.emplace(id, g.density());
        });
      }
      write_density_dir(out_dir / "baseline" / "gold_standard", gold_maps);
      json centerbias = json::object();
      for (const auto& [id, bw] : cb.bandwidths)
        centerbias[id] = {{"bandwidth", bw}, {"cv_scores", cb.cv_scores.at(id)}};
      write_json(out_dir / "baseline.json",
                 {{"crossvalidate_cb", config.crossvalidate_cb}, {"centerbias", centerbias}, {"gold_standard", gold}},
                 out);
    } else if (ens->parsed()) {
      ensemble::MixtureSpec spec;
      std::string name = mixture_name;
      DensityMap mixture;
      if (!weights.empty() && dsre != 0) throw Error(ErrorCode::BadArgument, "use either --weights or --dsre");
      if (!weights.empty()) {
        spec = parse_weights(weights);
        if (name.empty()) name = "mixture";
        mixture = ensemble::mix_models(dataset.models(), spec);
      } else if (dsre != 0) {
        std::vector<std::string> names = model_list;
        if (names.empty() && config.dsre) names = config.dsre->models;
        if (names.empty()) names = base_model_names(dataset);
        std::vector<std::string> instances;
        for (const auto& n : names) {
          for (auto& inst : ensemble::instance_names(dataset.models(), n, dsre)) instances.push_back(std::move(inst));
        }
        spec = ensemble::MixtureSpec::equal(instances);
        if (name.empty()) name = "DSREx" + std::to_string(dsre);
        mixture = ensemble::build_dsre(dataset.models(), names, dsre);
      } else if (!config.mixtures.empty()) {
        spec = config.mixtures.front().spec;
        name = config.mixtures.front().name;
        mixture = ensemble::mix_models(dataset.models(), spec);
      } else {
        throw Error(ErrorCode::BadArgument, "ensemble needs --weights, --dsre or a configured mixture");
      }
      write_density_dir(out_dir / name, mixture);
      write_json(out_dir / ("ensemble_" + name + ".json"), ensemble_summary(dataset, config, name, spec, mixture), out);
    } else if (calibrate->parsed()) {
      std::vector<std::string> names;
      if (!only_model.empty()) {
        names.push_back(only_model);
      } else {
        for (const auto& [n, _] : dataset.models()) names.push_back(n);
      }
      if (names.empty()) throw Error(ErrorCode::BadArgument, "no model to calibrate");
      for (const auto& n : names) {
        const auto h = with_context("model '" + n + "'", [&] {
          return calibration::calibration_histogram(dataset.model(n), dataset.fixations(), config.k);
        });
        write_json(out_dir / ("calibration_" + n + ".json"), h.to_json(), out);
        if (plot_data) write_text(out_dir / ("calibration_" + n + ".csv"), h.to_csv(), out);
        out << n << ": " << calibration::to_string(h.verdict) << '\n';
      }
    } else if (disagree->parsed()) {
      std::vector<std::string> names = model_list;
      if (names.empty()) {
        for (const auto& [n, _] : dataset.models()) names.push_back(n);
      }
      std::vector<const DensityMap*> maps;
      for (const auto& n : names) maps.push_back(&dataset.model(n));
      const auto ranking = ensemble::disagreement_ranking(maps);
      json rows = json::array();
      std::ostringstream csv;
      csv << "rank,image_id,js_bits\n";
      for (std::size_t i = 0; i < ranking.size(); ++i) {
        rows.push_back({{"image_id", ranking[i].image_id}, {"js_bits", ranking[i].js_bits}});
        csv << i << ',' << ranking[i].image_id << ',' << num(ranking[i].js_bits) << '\n';
      }
      write_json(out_dir / "disagreement.json", {{"models", names}, {"ranking", rows}}, out);
      if (plot_data) write_text(out_dir / "disagreement.csv", csv.str(), out);
    } else if (sweep->parsed()) {
      const DensityMap base = baseline_densities(dataset, config);
      const auto points =
          ensemble::weight_sweep(dataset.model(model_a), dataset.model(model_b), base, dataset.fixations(), steps);
      json pts = json::array();
      std::ostringstream csv;
      csv << "weight,information_gain\n";
      std::size_t best = 0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        pts.push_back({{"weight", points[i].weight}, {"information_gain", points[i].information_gain}});
        csv << num(points[i].weight) << ',' << num(points[i].information_gain) << '\n';
        if (points[i].information_gain > points[best].information_gain) best = i;
      }
      const std::string stem = "sweep_" + model_a + "_" + model_b;
      write_json(out_dir / (stem + ".json"),
                 {{"a", model_a}, {"b", model_b}, {"points", pts}, {"best_weight", points[best].weight}}, out);
      if (plot_data) write_text(out_dir / (stem + ".csv"), csv.str(), out);
    } else if (train->parsed()) {
      cmd_train(dataset, config, out_dir / "train", out);
    }
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::Io ? 2 : 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: Io: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace gazekit::harness
