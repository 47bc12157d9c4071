#include "gazekit/blur.hpp"

namespace gazekit {

GaussianKernel::GaussianKernel(double sigma_) : sigma(sigma_) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error(ErrorCode::BadValue, "blur sigma must be positive");
  radius = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma));
  const std::size_t taps = static_cast<std::size_t>(2 * radius + 1);
  std::vector<double> g(taps), dg(taps);
  double sum = 0.0, dsum = 0.0;
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    const double d2 = static_cast<double>(k * k);
    const double v = std::exp(-d2 / (2.0 * sigma * sigma));
    const std::size_t i = static_cast<std::size_t>(k + radius);
    g[i] = v;
    dg[i] = v * d2 / (sigma * sigma * sigma);
    sum += v;
    dsum += dg[i];
  }
  weights.resize(taps);
  derivative.resize(taps);
  for (std::size_t i = 0; i < taps; ++i) {
    weights[i] = g[i] / sum;
    derivative[i] = (dg[i] * sum - g[i] * dsum) / (sum * sum);
  }
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const std::ptrdiff_t period = 2 * static_cast<std::ptrdiff_t>(n);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - 1 - m);
}

namespace {

// out[line, i] = sum_k taps[k] in[line, reflect(i + k - r)] along one axis.
// `stride` steps along the axis, `line_stride` between lines.
void convolve_axis(std::span<const double> in, std::span<double> out, std::size_t n, std::size_t lines,
                   std::size_t stride, std::size_t line_stride, std::span<const double> taps, bool adjoint) {
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(taps.size() / 2);
  for (std::size_t line = 0; line < lines; ++line) {
    const std::size_t base = line * line_stride;
    for (std::size_t i = 0; i < n; ++i) {
      if (adjoint) {
        const double g = in[base + i * stride];
        for (std::ptrdiff_t k = -r; k <= r; ++k) {
          const std::size_t j = reflect_index(static_cast<std::ptrdiff_t>(i) + k, n);
          out[base + j * stride] += taps[static_cast<std::size_t>(k + r)] * g;
        }
      } else {
        double acc = 0.0;
        for (std::ptrdiff_t k = -r; k <= r; ++k) {
          const std::size_t j = reflect_index(static_cast<std::ptrdiff_t>(i) + k, n);
          acc += taps[static_cast<std::size_t>(k + r)] * in[base + j * stride];
        }
        out[base + i * stride] = acc;
      }
    }
  }
}

void blur_rows(std::span<const double> in, std::span<double> out, const Shape& s, std::span<const double> taps,
               bool adjoint) {
  convolve_axis(in, out, s.width, s.height, 1, s.width, taps, adjoint);
}

void blur_cols(std::span<const double> in, std::span<double> out, const Shape& s, std::span<const double> taps,
               bool adjoint) {
  convolve_axis(in, out, s.height, s.width, s.width, 1, taps, adjoint);
}

void check(std::span<const double> values, const Shape& shape, std::span<const double> taps) {
  if (values.size() != shape.size()) throw Error(ErrorCode::ShapeMismatch, "blur input does not match shape");
  if (taps.size() % 2 != 1) throw Error(ErrorCode::BadValue, "blur taps must have odd length");
}

}  // namespace

std::vector<double> separable_blur(std::span<const double> values, const Shape& shape, std::span<const double> taps) {
  check(values, shape, taps);
  std::vector<double> tmp(values.size()), out(values.size());
  blur_rows(values, tmp, shape, taps, false);
  blur_cols(tmp, out, shape, taps, false);
  return out;
}

std::vector<double> separable_blur_adjoint(std::span<const double> grad, const Shape& shape,
                                           std::span<const double> taps) {
  check(grad, shape, taps);
  std::vector<double> tmp(grad.size(), 0.0), out(grad.size(), 0.0);
  blur_cols(grad, tmp, shape, taps, true);
  blur_rows(tmp, out, shape, taps, true);
  return out;
}

std::vector<double> gaussian_blur_sigma_derivative(std::span<const double> values, const Shape& shape,
                                                   const GaussianKernel& kernel) {
  check(values, shape, kernel.weights);
  // B = C R, so dB = dC R + C dR.
  std::vector<double> rows(values.size()), drows(values.size());
  blur_rows(values, rows, shape, kernel.weights, false);
  blur_rows(values, drows, shape, kernel.derivative, false);
  std::vector<double> a(values.size()), b(values.size());
  blur_cols(rows, a, shape, kernel.derivative, false);
  blur_cols(drows, b, shape, kernel.weights, false);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

}  // namespace gazekit
