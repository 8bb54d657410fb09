// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "ulab/transformer.hpp"
#include "ulab/vocab.hpp"

namespace ulab {

/// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);
/// 16 lowercase hex digits of fnv1a64.
std::string fnv1a_hex(std::string_view bytes);

/// Binary container: magic line, JSON header, then named little-endian double
/// blobs. Round-trips parameter values bit-exactly.
struct Checkpoint {
  std::string kind = "model";  // "model" or "state"
  TransformerConfig model;
  std::vector<std::string> vocab;
  std::string config_hash;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  std::vector<std::pair<std::string, Eigen::VectorXd>> blobs;

  const Eigen::VectorXd& blob(const std::string& name) const;
  Transformer<double> transformer() const { return {model, blob("params")}; }
};

std::string serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint model_checkpoint(const Transformer<double>& model, const Vocab& vocab,
                            const std::string& config_hash);

}  // namespace ulab
