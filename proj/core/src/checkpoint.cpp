#include "zsseg/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "zsseg/error.hpp"

ZSSEG_NAMESPACE_BEGIN

namespace le {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

}  // namespace le

void write_tensor_table(std::ostream& os, const TensorTable& table) {
  os.write("SZCK", 4);
  le::put_u32(os, kCheckpointVersion);
  le::put_u32(os, static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, value] : table) {
    le::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    le::put_u32(os, static_cast<std::uint32_t>(value.rank()));
    for (auto d : value.shape()) le::put_u32(os, static_cast<std::uint32_t>(d));
    for (Real v : value.data()) le::put_f32(os, static_cast<float>(v));
  }
}

TensorTable read_tensor_table(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SZCK", 4) != 0) throw FormatError("bad checkpoint magic (expected SZCK)");
  const auto version = le::get_u32(is);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = le::get_u32(is);
  TensorTable table;
  try {
    for (std::uint32_t e = 0; e < count; ++e) {
      const auto len = le::get_u32(is);
      if (len > (1u << 16)) throw FormatError("implausible tensor name length");
      std::string name(len, '\0');
      if (!is.read(name.data(), len)) throw FormatError("unexpected end of file");
      const auto rank = le::get_u32(is);
      if (rank > 2) throw FormatError("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
      Shape shape;
      for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(le::get_u32(is));
      std::vector<Real> values(shape_numel(shape));
      for (auto& v : values) v = static_cast<Real>(le::get_f32(is));
      table.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
    }
  } catch (const FormatError& e) {
    throw FormatError(std::string("truncated or corrupt checkpoint: ") + e.what());
  }
  return table;
}

void save_tensor_table(const std::string& path, const TensorTable& table) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  write_tensor_table(os, table);
  if (!os) throw IoError("failed writing " + path);
}

TensorTable load_tensor_table(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  return read_tensor_table(is);
}

const Tensor& find_tensor(const TensorTable& table, const std::string& name) {
  auto it = std::find_if(table.begin(), table.end(), [&](const NamedTensor& e) { return e.name == name; });
  if (it == table.end()) throw LookupError("tensor '" + name + "' missing from checkpoint");
  return it->value;
}

void assign_tensor(Tensor& target, const Tensor& source, const std::string& name) {
  if (target.shape() != source.shape()) {
    throw ShapeError("tensor '" + name + "' has shape " + shape_string(source.shape()) + " in checkpoint but " +
                     shape_string(target.shape()) + " in the model");
  }
  auto dst = target.storage_for_update();
  auto src = source.data();
  std::copy(src.begin(), src.end(), dst.begin());
}

ZSSEG_NAMESPACE_END
