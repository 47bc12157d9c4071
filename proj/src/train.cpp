#include <algorithm>
#include <bit>
#include <numeric>

#include "gazekit/json_writer.hpp"
#include "gazekit/readout.hpp"
#include "readout_internal.hpp"

namespace gazekit::readout {

void TrainConfig::validate() const {
  if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) throw Error(ErrorCode::BadArgument, "lr must be positive");
  if (!(decay_factor > 0.0)) throw Error(ErrorCode::BadArgument, "decay factor must be positive");
  if (batch_size == 0) throw Error(ErrorCode::BadArgument, "batch size must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorCode::BadArgument, "momentum must lie in [0, 1)");
  for (std::size_t i = 1; i < milestones.size(); ++i) {
    if (milestones[i] <= milestones[i - 1]) {
      throw Error(ErrorCode::BadArgument, "milestones must be strictly increasing");
    }
  }
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double lr = initial_lr;
  for (std::size_t m : milestones) {
    if (epoch >= m) lr /= decay_factor;
  }
  return lr;
}

TrainResult train(ReadoutModel model, std::span<const TrainingImage> images, const TrainConfig& config) {
  config.validate();
  if (images.empty()) throw Error(ErrorCode::NoFixations, "training set is empty");
  std::vector<const TrainingImage*> all;
  for (const auto& im : images) all.push_back(&im);

  std::mt19937_64 rng(config.seed);
  std::vector<double> params = model.params().flatten();
  std::vector<double> velocity(params.size(), 0.0);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result{model, {}};
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr_at(epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::vector<const TrainingImage*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        if (!all[order[i]]->fixated_pixels.empty()) batch.push_back(all[order[i]]);
      }
      if (batch.empty()) continue;
      const LossAndGradient lg = detail::batch_pass(model, batch, true);
      const std::vector<double> g = lg.gradient.flatten();
      for (std::size_t k = 0; k < params.size(); ++k) {
        velocity[k] = config.momentum * velocity[k] + g[k];
        params[k] -= lr * velocity[k];
      }
      const bool finite = std::all_of(params.begin(), params.end(), [](double v) { return std::isfinite(v); });
      if (!finite || !(softplus(params[params.size() - 2]) > 0.0)) {
        throw Error(ErrorCode::Diverged,
                    "parameters left the representable range during epoch " + std::to_string(epoch));
      }
      model.params().assign(params);
    }
    const double loss = detail::batch_pass(model, all, false).loss;
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::Diverged, "training loss is not finite after epoch " + std::to_string(epoch));
    }
    result.trace.push_back({epoch, lr, loss});
  }
  result.model = std::move(model);
  return result;
}

namespace {

constexpr const char* kCheckpointFormat = "gazekit-readout-1";

}  // namespace

std::vector<std::uint8_t> write_checkpoint(const ReadoutModel& model, const TrainConfig& config) {
  const std::vector<double> flat = model.params().flatten();
  nlohmann::json header = {
      {"format", kCheckpointFormat},
      {"widths", model.widths()},
      {"alpha", model.params().centerbias_weight},
      {"rho", model.params().blur_rho},
      {"sigma_blur", model.blur_sigma()},
      {"seed", config.seed},
      {"schedule",
       {{"initial_lr", config.initial_lr},
        {"decay_factor", config.decay_factor},
        {"milestones", config.milestones},
        {"epochs", config.epochs},
        {"batch_size", config.batch_size},
        {"momentum", config.momentum}}},
      {"centerbias_shape", {model.centerbias().height(), model.centerbias().width()}},
      {"parameter_count", flat.size()},
  };
  std::string text = dump_json(header, -1);  // ends in '\n'
  std::vector<std::uint8_t> out(text.begin(), text.end());
  auto put = [&](double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  };
  for (double v : flat) put(v);
  for (double v : model.centerbias().log_p()) put(v);
  return out;
}

ReadoutModel read_checkpoint(std::span<const std::uint8_t> bytes) {
  const auto nl = std::find(bytes.begin(), bytes.end(), std::uint8_t{'\n'});
  if (nl == bytes.end()) throw Error(ErrorCode::BadMagic, "checkpoint header is not terminated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(std::string(bytes.begin(), nl));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadMagic, std::string("checkpoint header: ") + e.what());
  }
  if (header.value("format", "") != kCheckpointFormat) throw Error(ErrorCode::BadMagic, "not a readout checkpoint");
  const auto widths = header.at("widths").get<std::vector<std::size_t>>();
  const Shape shape{header.at("centerbias_shape").at(0).get<std::size_t>(),
                    header.at("centerbias_shape").at(1).get<std::size_t>()};
  ReadoutModel skeleton = ReadoutModel::initialize(widths, DensityGrid::uniform(shape), 0);
  const std::size_t n_params = skeleton.params().size();
  const auto blob = bytes.subspan(static_cast<std::size_t>(nl - bytes.begin()) + 1);
  if (blob.size() != 8 * (n_params + shape.size())) {
    throw Error(ErrorCode::BadDimensions, "checkpoint blob size does not match the header");
  }
  std::vector<double> values(n_params + shape.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(blob[8 * i + b]) << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
  Parameters params = skeleton.params();
  params.assign(std::span<const double>(values).first(n_params));
  std::vector<double> cb(values.begin() + static_cast<std::ptrdiff_t>(n_params), values.end());
  return ReadoutModel(std::move(params), DensityGrid::from_log(shape, std::move(cb)));
}

FoldAssignment::Role FoldAssignment::role(std::size_t rotation, std::size_t fold) const {
  const std::size_t n = folds_.size();
  if (fold == rotation % n) return Role::Test;
  if (fold == (rotation + 1) % n) return Role::Validation;
  return Role::Train;
}

std::vector<std::string> FoldAssignment::images(std::size_t rotation, Role which) const {
  std::vector<std::string> out;
  for (std::size_t f = 0; f < folds_.size(); ++f) {
    if (role(rotation, f) == which) out.insert(out.end(), folds_[f].begin(), folds_[f].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json FoldAssignment::to_json() const {
  nlohmann::json rotations = nlohmann::json::array();
  for (std::size_t r = 0; r < folds_.size(); ++r) {
    rotations.push_back({{"rotation", r},
                         {"train", images(r, Role::Train)},
                         {"validation", images(r, Role::Validation)},
                         {"test", images(r, Role::Test)}});
  }
  return {{"folds", folds_}, {"rotations", rotations}};
}

FoldAssignment make_folds(std::vector<std::string> image_ids, std::size_t folds, std::uint64_t seed) {
  if (folds < 3) throw Error(ErrorCode::BadArgument, "need at least 3 folds for train/validation/test");
  std::sort(image_ids.begin(), image_ids.end());
  if (std::adjacent_find(image_ids.begin(), image_ids.end()) != image_ids.end()) {
    throw Error(ErrorCode::BadArgument, "duplicate image ids");
  }
  if (image_ids.size() < folds) {
    throw Error(ErrorCode::TooFewImages,
                std::to_string(image_ids.size()) + " images for " + std::to_string(folds) + " folds");
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = image_ids.size(); i > 1; --i) {
    const std::size_t j = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)), i - 1);
    std::swap(image_ids[i - 1], image_ids[j]);
  }
  std::vector<std::vector<std::string>> out(folds);
  for (std::size_t i = 0; i < image_ids.size(); ++i) out[i % folds].push_back(image_ids[i]);
  for (auto& f : out) std::sort(f.begin(), f.end());
  return FoldAssignment(std::move(out));
}

}  // namespace gazekit::readout
