#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deva/config.hpp"
#include "deva/parameter.hpp"
#include "json.hpp"

namespace deva {

/// A named tensor as stored on disk. Values are held as doubles in memory;
/// f32 tensors round-trip exactly because every float is a double.
struct StoredTensor {
  std::string name;
  Shape shape;
  Precision dtype = Precision::f32;
  std::vector<double> values;
};

/// Binary container:
///   "DEVACKPT" | u32 version | u64 len + config JSON | u64 len + metadata JSON
///   | u64 count | count x (u32 len + name | u8 dtype | u32 rank | u64 dims...
///   | u64 payload bytes | little-endian payload)
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json config;
  nlohmann::json meta;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const;
};

/// Throws DataError when the file cannot be written.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws DataError on a bad magic, unsupported version, or truncation; the
/// message names the tensor being read.
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
StoredTensor store_tensor(const std::string& name, const Tensor<T>& t);

/// Appends every parameter under `prefix` + its name.
template <typename T>
void store_parameters(const ParameterList<T>& params, const std::string& prefix,
                      std::vector<StoredTensor>& out);

/// Copies stored values into the parameters. Throws DataError naming the
/// tensor on a missing entry, shape mismatch, or dtype mismatch.
template <typename T>
void restore_parameters(const Checkpoint& ckpt, const std::string& prefix, ParameterList<T>& params);

}  // namespace deva
