#pragma once

#include <span>

#include "gazekit/readout.hpp"

namespace gazekit::readout::detail {

// Mean -log2 likelihood over the batch's fixations, with the gradient when requested.
LossAndGradient batch_pass(const ReadoutModel& model, std::span<const TrainingImage* const> images, bool want_gradient);

}  // namespace gazekit::readout::detail
