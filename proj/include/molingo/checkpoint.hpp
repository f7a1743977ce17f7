#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "molingo/tensor.hpp"

// Named-tensor checkpoint file: one JSON config record followed by one record
// per tensor (name, rank, dims, little-endian f32 values), CRC per record.
namespace molingo::ckpt {

inline constexpr char kMagic[] = "MLCHECKP";
inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
  std::string kind;  // "autoencoder", "generator", "evaluator"
  nlohmann::json config;
  std::map<std::string, Tensor> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);
// Throws FormatError when the file holds a different kind of model.
Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& expected_kind);

const Tensor& require_tensor(const Checkpoint& ckpt, const std::string& name);

// Copies tensors under `prefix` with the prefix stripped.
std::map<std::string, Tensor> with_prefix_removed(const std::map<std::string, Tensor>& tensors,
                                                   const std::string& prefix);
void add_with_prefix(std::map<std::string, Tensor>& dst, const std::map<std::string, Tensor>& src,
                     const std::string& prefix);

}  // namespace molingo::ckpt
