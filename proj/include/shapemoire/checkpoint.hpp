#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "shapemoire/tensor.hpp"

// Binary tensor container:
//   "SHPM" | u32 version (=1) | u32 count |
//   count x ( u16 name_len | name bytes (UTF-8) | u8 rank | u32 dims[rank] | f32 data[prod(dims)] )
// All integers and floats are little-endian.
namespace shapemoire {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace shapemoire
