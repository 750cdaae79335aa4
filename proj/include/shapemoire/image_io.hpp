#pragma once

#include <filesystem>

#include "shapemoire/tensor.hpp"

namespace shapemoire {

// 8-bit RGB PNG <-> [H, W, 3] floats in [0, 1]. Writing clamps and rounds to
// the nearest code value.
Tensor read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Tensor& image);

}  // namespace shapemoire
