#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "zsseg/tensor.hpp"

ZSSEG_NAMESPACE_BEGIN

struct NamedTensor {
  std::string name;
  Tensor value;
};

using TensorTable = std::vector<NamedTensor>;

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary tensor table: magic "SZCK", u32 version, u32 entry count, then per
/// entry u32 name length, UTF-8 name, u32 rank, u32 dims, f32 payload. All
/// integers and floats little-endian.
void write_tensor_table(std::ostream& os, const TensorTable& table);
TensorTable read_tensor_table(std::istream& is);
void save_tensor_table(const std::string& path, const TensorTable& table);
TensorTable load_tensor_table(const std::string& path);

/// Finds `name` in the table; throws LookupError when missing.
const Tensor& find_tensor(const TensorTable& table, const std::string& name);

/// Copies `source` into `target` in place, enforcing identical shapes.
void assign_tensor(Tensor& target, const Tensor& source, const std::string& name);

namespace le {
void put_u32(std::ostream& os, std::uint32_t v);
void put_f32(std::ostream& os, float v);
std::uint32_t get_u32(std::istream& is);
float get_f32(std::istream& is);
}  // namespace le

ZSSEG_NAMESPACE_END
