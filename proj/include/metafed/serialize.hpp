#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metafed/model.hpp"

namespace metafed {

// Binary model payload, little-endian throughout:
//   "MFED" | u32 version | u32 layer_count | u32 split_index | u8 norm_state
//   per layer: u32 in_dim | u32 out_dim | u8 has_norm
//   f64 blocks: per layer weights (row-major) then bias;
//   when norm_state is 1, per normalized layer running_mean, running_var,
//   scale, shift.
// include_norm=false drops the normalization doubles from the payload, which
// is how norm-free exchanges are metered; the receiver then starts from
// fresh normalization state.
std::vector<std::uint8_t> serialize_model(const ModelParams& model, bool include_norm = true);

ModelParams deserialize_model(const std::vector<std::uint8_t>& bytes);

// Exact size of serialize_model's output without building it.
std::size_t payload_bytes(const ModelParams& model, bool include_norm = true);

void save_model(const ModelParams& model, const std::string& path);
ModelParams load_model(const std::string& path);

std::uint64_t fnv1a64(const std::vector<std::uint8_t>& bytes);

// Checksum of the full payload; equal checksums mean bit-identical models.
std::uint64_t model_checksum(const ModelParams& model);

} // namespace metafed
