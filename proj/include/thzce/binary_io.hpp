#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace thzce {

// Little-endian IEEE-754 float64 blobs.
void write_f64_blob(const std::filesystem::path &path, std::span<const double> values);
std::vector<double> read_f64_blob(const std::filesystem::path &path);

} // namespace thzce
