#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "segforge/architecture.hpp"
#include "segforge/config.hpp"
#include "segforge/optimizer.hpp"

namespace segforge {

// Checkpoint container, all integers little-endian:
//   "SEGCKPT1"  u32 version
//   u32 length, UTF-8 JSON {"config", "epoch", "best": {"epoch", "dice"}}
//   u32 count, then per tensor: u32 name length, name, u8 dtype (0 f32, 1 f64),
//       u32 rank, u32 dims[rank], raw data        -- parameters, then buffers
//   u64 optimizer step
//   u32 count, tensors as above named "m/<param>" and "v/<param>"
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct BestRecord {
  int epoch = -1;
  double dice = -1.0;
};

struct Checkpoint {
  RunConfig config;
  int epoch = 0;
  BestRecord best;
  std::vector<StoredTensor> tensors;  // parameters and buffers by name
  AdamState<float> optimizer;
};

Checkpoint make_checkpoint(const SegModel<float>& model, const AdamState<float>& optimizer,
                           const RunConfig& config, int epoch, const BestRecord& best);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies stored values into a model built from ckpt.config.model. Every
// parameter and buffer must be present with a matching shape.
void restore_model(const Checkpoint& ckpt, SegModel<float>& model);

}  // namespace segforge
