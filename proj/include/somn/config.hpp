#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "somn/error.hpp"

namespace somn {

// Vocabulary layout is fixed: [0, vocab_size-5] are content ids, followed by
// <think>, <start_speak>, <end_speak>, <pad> in that order.
struct ModelConfig {
  int d_in = 16;
  int d_model = 128;
  int d_out = 16;
  int B = 8;   // frames per block (0.32 s at the notional 25 frames/sec)
  int n = 3;   // decoded token positions per block
  int m = 4;   // auditory embeddings per block
  int vocab_size = 68;  // 64 content + 4 specials
  int enc_layers = 2;
  int llm_layers = 2;
  int syn_layers = 2;
  int heads = 4;

  int content_count() const { return vocab_size - 4; }
  // reserved content ids: the end-of-text marker closing a response, and the
  // blank id labeling silent recognition positions
  int eot_id() const { return content_count() - 1; }
  int blank_id() const { return content_count() - 2; }
  int think_id() const { return vocab_size - 4; }
  int start_id() const { return vocab_size - 3; }
  int end_id() const { return vocab_size - 2; }
  int pad_id() const { return vocab_size - 1; }
  int head_dim() const { return d_model / heads; }
  int d_ff() const { return 4 * d_model; }

  void validate() const;
  std::string fingerprint() const;  // stable hash of the canonical JSON
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// FNV-1a over bytes; used for config fingerprints and dataset checksums.
std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace somn
