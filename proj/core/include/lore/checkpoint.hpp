#pragma once

#include <string>

#include "lore/model.hpp"

namespace lore {

// Checkpoint container: magic "LORE", u32 version, the ModelConfig as eight
// u32 fields in declaration order (image_size, patch, d_model, heads,
// layers, vocab_size, max_text_tokens, time_embed_dim), u32 tensor count,
// then per tensor a u32 name length, the UTF-8 name, and a tensor blob.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, ModelParams<float>& params);

// Loaded parameters default to requires_grad = false.
ModelParams<float> load_checkpoint(const std::string& path);

}  // namespace lore
