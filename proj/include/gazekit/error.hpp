#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gazekit {

enum class ErrorCode {
  AllZero,
  BadValue,
  BadMagic,
  BadDimensions,
  NotNormalized,
  ParseError,
  OutOfBounds,
  UnknownImage,
  ShapeMismatch,
  ZeroDensityAtFixation,
  MissingDensity,
  NoFixations,
  EmptyNonfixPool,
  ZeroVariance,
  SingleImagePool,
  TooFewFixations,
  NonpositiveGold,
  BadWeights,
  MissingInstance,
  TooFewPixels,
  TooFewImages,
  Diverged,
  BadArgument,
  Io,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this type. The message carries
// the context (image id, pixel, line number) and code() the category.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gazekit
