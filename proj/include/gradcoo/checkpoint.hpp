#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gradcoo/model.hpp"
#include "gradcoo/tensor.hpp"

namespace gradcoo {

// Named-tensor container, shared by model checkpoints and reference-set
// files. Layout: magic "GCOO", u32 version (little-endian), length-prefixed
// UTF-8 header record, then per tensor: u32 name length, name bytes, u32
// rank, u64 dims, u8 dtype tag (0 = f64), row-major payload of little-endian
// 64-bit floats. Tensors run until end of file.
struct Container {
  std::string header;  // format-specific record, JSON in practice
  std::vector<std::pair<std::string, Tensor>> tensors;
};

constexpr std::uint32_t kContainerVersion = 1;

std::string serialize_container(const Container& c);
Container deserialize_container(const std::string& bytes);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

// FNV-1a 64-bit fingerprint, hex-encoded. Not cryptographic; used to tie
// reference sets and reports to the exact inputs that produced them.
std::string fnv1a_hex(const std::string& bytes);
std::string file_digest(const std::filesystem::path& path);

std::string config_to_json_string(const ModelConfig& cfg);
ModelConfig config_from_json_string(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const ModelWeights& weights,
                     const ModelConfig& cfg);
std::pair<ModelWeights, ModelConfig> load_checkpoint(const std::filesystem::path& path);

// Digest of the serialized (weights, config) pair; identifies a model.
std::string weights_digest(const ModelWeights& weights, const ModelConfig& cfg);

}  // namespace gradcoo
