#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "triseg/tensor.hpp"

namespace triseg {

/// Binary container for model files: a JSON manifest plus named float64
/// arrays. Layout (little-endian):
///   "TRISEGAR" | u32 version | u64 manifest bytes | manifest JSON
///   | u32 array count | per array: u32 name bytes, name, u32 rank, i32 dims[rank], f64 data
/// Contents are written in name order, so equal inputs give identical files.
struct Archive {
  nlohmann::json manifest;
  std::map<std::string, Tensor> arrays;

  const Tensor& array(const std::string& name) const;
};

/// Writes to a temporary sibling and renames it into place.
void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

}  // namespace triseg
