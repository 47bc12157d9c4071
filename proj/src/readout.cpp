#include "gazekit/readout.hpp"

#include <algorithm>
#include <optional>

#include "gazekit/blur.hpp"
#include "gazekit/parallel.hpp"
#include "readout_internal.hpp"

namespace gazekit::readout {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double inverse_softplus(double sigma) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::BadValue, "softplus output must be positive");
  return sigma > 30.0 ? sigma : std::log(std::expm1(sigma));
}

std::size_t Parameters::size() const {
  std::size_t n = 2;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size() + l.norm_scale.size() + l.norm_shift.size();
  return n;
}

std::vector<double> Parameters::flatten() const {
  std::vector<double> out;
  out.reserve(size());
  for (const auto& l : layers) {
    out.insert(out.end(), l.weight.begin(), l.weight.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
    out.insert(out.end(), l.norm_scale.begin(), l.norm_scale.end());
    out.insert(out.end(), l.norm_shift.begin(), l.norm_shift.end());
  }
  out.push_back(blur_rho);
  out.push_back(centerbias_weight);
  return out;
}

void Parameters::assign(std::span<const double> flat) {
  if (flat.size() != size()) throw Error(ErrorCode::ShapeMismatch, "parameter vector has the wrong length");
  std::size_t at = 0;
  auto take = [&](std::vector<double>& dst) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at),
              flat.begin() + static_cast<std::ptrdiff_t>(at + dst.size()), dst.begin());
    at += dst.size();
  };
  for (auto& l : layers) {
    take(l.weight);
    take(l.bias);
    take(l.norm_scale);
    take(l.norm_shift);
  }
  blur_rho = flat[at++];
  centerbias_weight = flat[at++];
}

Parameters Parameters::zeros_like() const {
  Parameters z = *this;
  for (auto& l : z.layers) {
    std::fill(l.weight.begin(), l.weight.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
    std::fill(l.norm_scale.begin(), l.norm_scale.end(), 0.0);
    std::fill(l.norm_shift.begin(), l.norm_shift.end(), 0.0);
  }
  z.blur_rho = 0.0;
  z.centerbias_weight = 0.0;
  return z;
}

namespace {

std::vector<std::size_t> widths_of(const Parameters& p) {
  if (p.layers.empty()) throw Error(ErrorCode::BadArgument, "readout needs at least one layer");
  std::vector<std::size_t> w{p.layers.front().in};
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const auto& l = p.layers[i];
    const bool last = i + 1 == p.layers.size();
    if (l.in != w.back() || l.weight.size() != l.in * l.out || l.bias.size() != l.out ||
        l.norm_scale.size() != (last ? 0 : l.out) || l.norm_shift.size() != (last ? 0 : l.out)) {
      throw Error(ErrorCode::ShapeMismatch, "inconsistent readout layer " + std::to_string(i));
    }
    w.push_back(l.out);
  }
  if (w.back() != 1) throw Error(ErrorCode::ShapeMismatch, "readout must end in a single channel");
  return w;
}

}  // namespace

ReadoutModel::ReadoutModel(Parameters params, DensityGrid centerbias)
    : widths_(widths_of(params)), params_(std::move(params)), centerbias_(std::move(centerbias)) {
  for (double v : centerbias_.log_p()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::BadValue, "readout center bias must be strictly positive");
  }
}

std::vector<std::size_t> default_widths(std::size_t channels) { return {channels, 16, 32, 1}; }

ReadoutModel ReadoutModel::initialize(std::vector<std::size_t> widths, DensityGrid centerbias, std::uint64_t seed) {
  if (widths.size() < 2 || widths.back() != 1 || std::count(widths.begin(), widths.end(), 0u) > 0) {
    throw Error(ErrorCode::BadArgument, "widths must be positive and end in 1");
  }
  std::mt19937_64 rng(seed);
  Parameters p;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    LayerParams l;
    l.in = widths[i];
    l.out = widths[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    auto draw = [&] { return (2.0 * uniform01(rng) - 1.0) * bound; };
    l.weight.resize(l.in * l.out);
    for (double& w : l.weight) w = draw();
    l.bias.resize(l.out);
    for (double& b : l.bias) b = draw();
    if (i + 2 < widths.size()) {
      l.norm_scale.assign(l.out, 1.0);
      l.norm_shift.assign(l.out, 0.0);
    }
    p.layers.push_back(std::move(l));
  }
  p.blur_rho = inverse_softplus(2.0);
  p.centerbias_weight = 1.0;
  return ReadoutModel(std::move(p), std::move(centerbias));
}

namespace {

// Per-pixel activations kept for the backward pass.
struct PixelCache {
  std::vector<std::vector<double>> inputs;      // input of every layer
  std::vector<std::vector<double>> normalized;  // hidden layers
  std::vector<std::vector<double>> pre_act;     // scale * n + shift
  std::vector<double> inv_std;
};

void check_inputs(const ReadoutModel& model, const FeatureVolume& features) {
  if (features.channels() != model.widths().front()) {
    throw Error(ErrorCode::ShapeMismatch, "features have " + std::to_string(features.channels()) +
                                              " channels, readout expects " + std::to_string(model.widths().front()));
  }
  if (features.shape() != model.centerbias().shape()) {
    throw Error(ErrorCode::ShapeMismatch, "features are " + to_string(features.shape()) + ", center bias is " +
                                              to_string(model.centerbias().shape()));
  }
}

double pixel_forward(const Parameters& p, const FeatureVolume& features, std::size_t pixel, PixelCache* cache) {
  std::vector<double> z(features.channels());
  for (std::size_t c = 0; c < z.size(); ++c) z[c] = features.at(c, pixel);
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const LayerParams& l = p.layers[li];
    std::vector<double> a(l.out);
    for (std::size_t o = 0; o < l.out; ++o) {
      double acc = l.bias[o];
      const double* w = l.weight.data() + o * l.in;
      for (std::size_t i = 0; i < l.in; ++i) acc += w[i] * z[i];
      a[o] = acc;
    }
    if (cache) cache->inputs[li] = z;
    if (li + 1 == p.layers.size()) return a[0];

    double mean = 0.0;
    for (double v : a) mean += v;
    mean /= static_cast<double>(l.out);
    double var = 0.0;
    for (double v : a) var += (v - mean) * (v - mean);
    var /= static_cast<double>(l.out);
    const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
    std::vector<double> n(l.out), y(l.out);
    for (std::size_t o = 0; o < l.out; ++o) {
      n[o] = (a[o] - mean) * inv;
      y[o] = l.norm_scale[o] * n[o] + l.norm_shift[o];
      a[o] = softplus(y[o]);
    }
    if (cache) {
      cache->normalized[li] = std::move(n);
      cache->pre_act[li] = std::move(y);
      cache->inv_std[li] = inv;
    }
    z = std::move(a);
  }
  return 0.0;  // unreachable: the last layer returns above
}

void pixel_backward(const Parameters& p, const PixelCache& cache, double grad_out, Parameters& g) {
  std::vector<double> dz{grad_out};
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const LayerParams& l = p.layers[li];
    LayerParams& gl = g.layers[li];
    std::vector<double> da(l.out);
    if (li + 1 == p.layers.size()) {
      da = dz;
    } else {
      const auto& n = cache.normalized[li];
      const auto& y = cache.pre_act[li];
      std::vector<double> dn(l.out);
      double mean_dn = 0.0, mean_dn_n = 0.0;
      for (std::size_t o = 0; o < l.out; ++o) {
        const double dy = dz[o] * sigmoid(y[o]);
        gl.norm_scale[o] += dy * n[o];
        gl.norm_shift[o] += dy;
        dn[o] = dy * l.norm_scale[o];
        mean_dn += dn[o];
        mean_dn_n += dn[o] * n[o];
      }
      mean_dn /= static_cast<double>(l.out);
      mean_dn_n /= static_cast<double>(l.out);
      for (std::size_t o = 0; o < l.out; ++o) da[o] = cache.inv_std[li] * (dn[o] - mean_dn - n[o] * mean_dn_n);
    }
    const auto& z = cache.inputs[li];
    std::vector<double> dz_prev(l.in, 0.0);
    for (std::size_t o = 0; o < l.out; ++o) {
      gl.bias[o] += da[o];
      const double* w = l.weight.data() + o * l.in;
      double* gw = gl.weight.data() + o * l.in;
      for (std::size_t i = 0; i < l.in; ++i) {
        gw[i] += da[o] * z[i];
        dz_prev[i] += w[i] * da[o];
      }
    }
    dz = std::move(dz_prev);
  }
}

PixelCache make_cache(const Parameters& p) {
  PixelCache c;
  c.inputs.resize(p.layers.size());
  c.normalized.resize(p.layers.size());
  c.pre_act.resize(p.layers.size());
  c.inv_std.resize(p.layers.size());
  return c;
}

std::vector<double> logits_of(const ReadoutModel& model, std::span<const double> readout,
                              const GaussianKernel& kernel) {
  std::vector<double> logits = separable_blur(readout, model.centerbias().shape(), kernel.weights);
  const double alpha = model.params().centerbias_weight;
  for (std::size_t q = 0; q < logits.size(); ++q) logits[q] += alpha * model.centerbias().log_at(q);
  return logits;
}

struct ImageResult {
  double log2_sum = 0.0;  // sum over the image's fixations of log2 p
  std::optional<Parameters> gradient;
};

// Loss pieces and (optionally) the gradient of -(1/total) * log2_sum for one image.
ImageResult image_pass(const ReadoutModel& model, const TrainingImage& image, double total_fixations,
                       bool want_gradient) {
  check_inputs(model, image.features);
  const Parameters& p = model.params();
  const std::size_t n_pix = image.features.shape().size();
  std::vector<PixelCache> caches;
  if (want_gradient) caches.assign(n_pix, make_cache(p));
  std::vector<double> readout(n_pix);
  for (std::size_t q = 0; q < n_pix; ++q) {
    readout[q] = pixel_forward(p, image.features, q, want_gradient ? &caches[q] : nullptr);
  }
  const GaussianKernel kernel(softplus(p.blur_rho));
  const std::vector<double> logits = logits_of(model, readout, kernel);
  const double lse = logsumexp(logits);

  ImageResult result;
  std::vector<double> counts(n_pix, 0.0);
  for (std::size_t q : image.fixated_pixels) {
    if (q >= n_pix) throw Error(ErrorCode::OutOfBounds, "fixated pixel outside image '" + image.image_id + "'");
    result.log2_sum += (logits[q] - lse) / kLn2;
    counts[q] += 1.0;
  }
  if (!want_gradient) return result;

  Parameters g = p.zeros_like();
  const double n_img = static_cast<double>(image.fixated_pixels.size());
  const double scale = 1.0 / (total_fixations * kLn2);
  std::vector<double> g_logits(n_pix);
  for (std::size_t q = 0; q < n_pix; ++q) g_logits[q] = -(counts[q] - n_img * std::exp(logits[q] - lse)) * scale;

  for (std::size_t q = 0; q < n_pix; ++q) g.centerbias_weight += g_logits[q] * model.centerbias().log_at(q);
  const std::vector<double> d_blur = gaussian_blur_sigma_derivative(readout, image.features.shape(), kernel);
  double d_sigma = 0.0;
  for (std::size_t q = 0; q < n_pix; ++q) d_sigma += g_logits[q] * d_blur[q];
  g.blur_rho = d_sigma * sigmoid(p.blur_rho);

  const std::vector<double> g_readout = separable_blur_adjoint(g_logits, image.features.shape(), kernel.weights);
  for (std::size_t q = 0; q < n_pix; ++q) pixel_backward(p, caches[q], g_readout[q], g);
  result.gradient = std::move(g);
  return result;
}

void add_into(Parameters& acc, const Parameters& g) {
  for (std::size_t li = 0; li < acc.layers.size(); ++li) {
    auto& a = acc.layers[li];
    const auto& b = g.layers[li];
    for (std::size_t i = 0; i < a.weight.size(); ++i) a.weight[i] += b.weight[i];
    for (std::size_t i = 0; i < a.bias.size(); ++i) a.bias[i] += b.bias[i];
    for (std::size_t i = 0; i < a.norm_scale.size(); ++i) a.norm_scale[i] += b.norm_scale[i];
    for (std::size_t i = 0; i < a.norm_shift.size(); ++i) a.norm_shift[i] += b.norm_shift[i];
  }
  acc.blur_rho += g.blur_rho;
  acc.centerbias_weight += g.centerbias_weight;
}

}  // namespace

std::vector<double> readout_map(const ReadoutModel& model, const FeatureVolume& features) {
  check_inputs(model, features);
  std::vector<double> out(features.shape().size());
  for (std::size_t q = 0; q < out.size(); ++q) out[q] = pixel_forward(model.params(), features, q, nullptr);
  return out;
}

DensityGrid forward(const ReadoutModel& model, const FeatureVolume& features) {
  const std::vector<double> readout = readout_map(model, features);
  const GaussianKernel kernel(model.blur_sigma());
  return DensityGrid::from_unnormalized_log(features.shape(), logits_of(model, readout, kernel));
}

namespace detail {

LossAndGradient batch_pass(const ReadoutModel& model, std::span<const TrainingImage* const> images,
                           bool want_gradient) {
  double total = 0.0;
  for (const auto* im : images) total += static_cast<double>(im->fixated_pixels.size());
  if (total == 0.0) throw Error(ErrorCode::NoFixations, "batch has no fixations");
  std::vector<ImageResult> results(images.size());
  parallel_for(images.size(), [&](std::size_t i) { results[i] = image_pass(model, *images[i], total, want_gradient); });
  LossAndGradient out{0.0, model.params().zeros_like()};
  double log2_sum = 0.0;
  for (const auto& r : results) {
    log2_sum += r.log2_sum;
    if (want_gradient) add_into(out.gradient, *r.gradient);
  }
  out.loss = -log2_sum / total;
  return out;
}

}  // namespace detail

namespace {

std::vector<const TrainingImage*> pointers(std::span<const TrainingImage> images) {
  std::vector<const TrainingImage*> out;
  out.reserve(images.size());
  for (const auto& im : images) out.push_back(&im);
  return out;
}

}  // namespace

double nll(const ReadoutModel& model, std::span<const TrainingImage> images) {
  const auto ptrs = pointers(images);
  return detail::batch_pass(model, ptrs, false).loss;
}

LossAndGradient gradients(const ReadoutModel& model, std::span<const TrainingImage> images) {
  const auto ptrs = pointers(images);
  return detail::batch_pass(model, ptrs, true);
}

}  // namespace gazekit::readout
