#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "daclab/model.hpp"

namespace daclab {

// Model container: u32 LE manifest length, UTF-8 JSON manifest (version,
// architecture hash, dtype, ordered tensor table with byte offsets, task ids,
// class lists, tap names), raw little-endian IEEE-754 f32 payload, trailing
// CRC-32 of the payload. Round trips are byte-exact.
std::vector<std::uint8_t> serialize_model(const Model<float>& model);
Model<float> deserialize_model(const std::vector<std::uint8_t>& bytes,
                               bool requires_grad = false);

void save_model(const Model<float>& model, const std::string& path);
Model<float> load_model(const std::string& path, bool requires_grad = false);

// Load and check the file's architecture against an expected spec; a mismatch
// raises an error naming both hashes.
Model<float> load_model_expecting(const std::string& path, const ArchSpec& expected,
                                  bool requires_grad = false);

// Same container layout without the model metadata; used for patch caches.
std::vector<std::uint8_t> serialize_tensor_blob(
    const std::vector<std::pair<std::string, Tensor<float>>>& tensors);
std::vector<std::pair<std::string, Tensor<float>>> deserialize_tensor_blob(
    const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace daclab
