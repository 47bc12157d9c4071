#pragma once

#include <span>
#include <vector>

#include "gazekit/core.hpp"

namespace gazekit {

// 1-D Gaussian truncated at ceil(4 sigma) and renormalized to sum 1.
// derivative[k] is d weights[k] / d sigma of the renormalized kernel.
struct GaussianKernel {
  explicit GaussianKernel(double sigma);

  double sigma;
  std::ptrdiff_t radius;
  std::vector<double> weights;     // 2 * radius + 1 taps, centered
  std::vector<double> derivative;  // same layout
};

// Maps any integer offset into [0, n) by half-sample symmetric reflection
// (... c b a | a b c ... | c b a ...), valid for radii larger than n.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n);

// Separable 2-D convolution with reflective padding, rows then columns.
std::vector<double> separable_blur(std::span<const double> values, const Shape& shape, std::span<const double> taps);

// Transpose of separable_blur with the same taps.
std::vector<double> separable_blur_adjoint(std::span<const double> grad, const Shape& shape,
                                           std::span<const double> taps);

inline std::vector<double> gaussian_blur(std::span<const double> values, const Shape& shape, double sigma) {
  return separable_blur(values, shape, GaussianKernel(sigma).weights);
}

// d/d sigma of gaussian_blur(values) for the given kernel.
std::vector<double> gaussian_blur_sigma_derivative(std::span<const double> values, const Shape& shape,
                                                   const GaussianKernel& kernel);

}  // namespace gazekit
