#pragma once

#include <filesystem>
#include <iosfwd>

#include "sparseflow/core/tensor.hpp"

namespace sparseflow {

// Flat tensor file: one ASCII header line "f64le <e0> <e1> ...\n" followed by
// volume(shape) little-endian IEEE-754 doubles, row-major, no padding.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace sparseflow
