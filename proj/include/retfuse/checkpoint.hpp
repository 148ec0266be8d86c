#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "retfuse/tensor.hpp"

namespace retfuse {

/// One named array in a checkpoint archive. Payload bytes are the raw
/// little-endian element values, so save/load round-trips bit-exactly.
struct CheckpointTensor {
    std::string name;
    std::string dtype;  // "f32" or "f64"
    std::vector<std::int64_t> shape;
    std::vector<std::uint8_t> bytes;
};

/// Self-describing archive: magic, JSON header (metadata + tensor index), payload.
struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<CheckpointTensor> tensors;

    const CheckpointTensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
CheckpointTensor pack_tensor(const std::string& name, const Tensor<T>& t);
template <typename T>
void unpack_tensor(const CheckpointTensor& src, Tensor<T>& dst);

CheckpointTensor pack_values(const std::string& name, const std::vector<double>& values, std::vector<std::int64_t> shape);
std::vector<double> unpack_values(const CheckpointTensor& src);

}  // namespace retfuse
