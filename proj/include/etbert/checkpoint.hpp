#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "etbert/model.hpp"
#include "etbert/optimizer.hpp"

namespace etbert {

// Everything a checkpoint carries besides the model config itself.
struct CheckpointMeta {
  std::string kind = "pretrain";           // or "classifier"
  std::vector<std::string> class_names;    // classifier only
  bool concat_flow = false;                // classifier only
  std::string dataset_mode;                // classifier only: packet|flow
  int64_t opt_step = 0;                    // optimizer step count when state saved
  bool has_optimizer = false;
};

// Binary layout: "ETB1", u32 version, u32 json length + UTF-8 json config,
// u32 tensor count, then per tensor: u32 name length + name, u32 rank,
// u64 dims, row-major f32 little-endian data.
void save_checkpoint(const Model<float>& model, const CheckpointMeta& meta,
                     const AdamW<float>* opt, const std::string& path);

struct LoadedCheckpoint {
  Model<float> model;
  CheckpointMeta meta;
  AdamW<float> opt;  // populated when meta.has_optimizer
};

LoadedCheckpoint load_checkpoint(const std::string& path);

nlohmann::ordered_json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::ordered_json& j);

}  // namespace etbert
