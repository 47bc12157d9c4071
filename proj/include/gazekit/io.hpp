#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gazekit/core.hpp"

namespace gazekit::io {

using Bytes = std::vector<std::uint8_t>;

enum class DensityDomain : std::uint8_t { Linear = 0, Log = 1 };

// FDF1 layout: "FDF1", u32le height, u32le width, u8 domain, then
// height*width f64le row-major.
//
// Linear files are converted to log domain on read. Log files whose mass is
// within 1e-9 of one are kept bit-for-bit; files within the 1e-6 read
// tolerance are renormalized.
DensityGrid read_density(std::span<const std::uint8_t> bytes);
Bytes write_density(const DensityGrid& density, DensityDomain domain = DensityDomain::Log);

// FFV1 layout: "FFV1", u32le channels, u32le height, u32le width, then
// C*H*W f32le in (c, h, w) order.
FeatureVolume read_features(std::span<const std::uint8_t> bytes);
Bytes write_features(const FeatureVolume& features);

// CSV with header image_id,subject_id,x,y. LF or CRLF.
FixationSet read_fixations(std::string_view text);
std::string write_fixations(const FixationSet& fixations);

// CSV with header image_id,height,width.
std::map<std::string, Shape> read_image_registry(std::string_view text);
std::string write_image_registry(const std::map<std::string, Shape>& images);

Bytes read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
// Writes to a temporary sibling and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace gazekit::io
