#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tsup/mat.hpp"

namespace tsup {

/// One named tensor of a TSUPW1 file: row-major 32-bit floats.
struct Tensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t numel() const;
  /// 1-D tensors become a single row; 2-D tensors keep their shape.
  Mat to_mat() const;
  /// A single-row matrix is stored as a 1-D tensor.
  static Tensor from_mat(const std::string& name, const Mat& m);
};

/// Layout: "TSUPW1\n", u32 count, then per tensor u16 name length, name,
/// u8 ndim, u32 dims, f32 payload. All integers and floats little-endian.
void write_tsupw1(const std::filesystem::path& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> read_tsupw1(const std::filesystem::path& path);

/// In-memory encoding, byte-identical to the file contents.
std::string encode_tsupw1(const std::vector<Tensor>& tensors);
std::vector<Tensor> decode_tsupw1(const std::string& bytes, const std::string& source = "<memory>");

}  // namespace tsup
