#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "flowsr/model.hpp"
#include "flowsr/tensor.hpp"

namespace flowsr {

// Binary container shared by checkpoints and dataset files. Layout, all
// integers little-endian:
//   magic "OFTS" | u16 version | u64 config length | UTF-8 config text |
//   u32 record count | records
// Each record: u32 name length | name bytes | u32 rank | u64 dims... |
// 64-bit float payload. Round-trips bit-exactly.
struct TensorArchive {
    std::string config_text;
    std::vector<std::pair<std::string, Tensor>> records;
};

inline constexpr std::uint16_t kArchiveVersion = 1;

void write_archive(const TensorArchive& archive, const std::string& path);
TensorArchive read_archive(const std::string& path);

// Model checkpoints store parameters under "params/<name>" and the EMA shadow
// under "ema/<name>"; the config text carries the architecture plus any extra
// stage metadata handed in by the caller.
void save_checkpoint(const VelocityModel& model, const std::string& path,
                     const std::string& extra_config = "");

struct LoadedCheckpoint {
    VelocityModel model;
    std::string config_text;
};

// Verifies magic, version and the shape table against the stored architecture.
LoadedCheckpoint load_checkpoint(const std::string& path);

std::string arch_to_config(const ModelArch& arch);
ModelArch arch_from_config(const std::string& config_text);

}  // namespace flowsr
