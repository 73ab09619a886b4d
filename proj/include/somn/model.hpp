#pragma once

// The three neural components: streaming causal speech encoder, decoder-only
// LLM with cross-attention into the auditory embedding stream, and streaming
// frame synthesizer. Connected purely by continuous embeddings.
//
// Two execution paths share the same kernels and are bit-identical:
//  - full-sequence tape forward (training, equivalence oracle)
//  - StreamingModel with per-block key/value caches (inference)

#include <cstdint>
#include <span>
#include <vector>

#include "somn/config.hpp"
#include "somn/ops.hpp"
#include "somn/optimizer.hpp"

namespace somn::model {

constexpr float kLnEps = 1e-5f;
constexpr float kRopeBase = 10000.0f;

ParameterStore init_parameters(const ModelConfig& cfg, std::uint64_t seed);

// additive sinusoidal signal that aligns cross-attention to the block clock
std::vector<float> block_pos_signal(int block, int d);

// frames [T=blocks*B, d_in] -> auditory memory [blocks*m, d_model], block
// signal already added
Tensor encode_full(Tape& tape, const ModelConfig& cfg, const ParameterStore& params,
                   const Tensor& frames);

struct DecodeOut {
  Tensor logits;  // [P, vocab]
  Tensor hidden;  // [P, d_model] word embeddings (what flows to the synthesizer)
};

// tokens.size() == P == mem_blocks*n; position p cross-attends to memory of
// blocks 0..p/n only
DecodeOut decode_full(Tape& tape, const ModelConfig& cfg, const ParameterStore& params,
                      const std::vector<int>& tokens, const Tensor& memory);

// embeddings [S=g*n, d_model] -> frames [g*B, d_out]
Tensor synth_full(Tape& tape, const ModelConfig& cfg, const ParameterStore& params,
                  const Tensor& embeddings);

// Cached block-by-block inference. One instance per dialogue; parameters are
// shared read-only.
class StreamingModel {
 public:
  StreamingModel(const ModelConfig& cfg, const ParameterStore& params);

  // exactly B*d_in floats; returns m rows of d_model (block signal added)
  std::vector<float> encode_block(std::span<const float> frames);
  // append one block's m auditory embeddings to the decoder's cross memory
  void push_memory(std::span<const float> rows);

  struct StepOut {
    std::vector<float> logits;
    std::vector<float> hidden;
  };
  StepOut decode_position(int token);

  // exactly n*d_model floats; returns B*d_out frames
  std::vector<float> synthesize_block(std::span<const float> embeddings);

  int frames_consumed() const { return frames_consumed_; }
  int memory_blocks() const { return memory_blocks_; }
  int decoded_positions() const { return decoded_positions_; }
  int synth_embeddings() const { return synth_embeddings_; }

 private:
  struct KvCache {
    std::vector<float> k, v;  // len rows of d_model
    int len = 0;
  };

  const float* w(const std::string& name) const;
  void ln_affine_rows(const float* x, float* y, int rows, const std::string& prefix) const;
  // appends roped k and v of the new rows to cache, then attends; causal_start
  // = global index of first new row, or -1 to attend over the whole cache
  void attention_rows(const std::string& prefix, KvCache& cache, const float* x, int rows,
                      int start_pos, bool append, bool causal, std::vector<float>& out) const;
  void mlp_rows(const std::string& prefix, std::vector<float>& x, int rows) const;
  void self_block(const std::string& prefix, KvCache& cache, std::vector<float>& x, int rows,
                  int start_pos) const;

  ModelConfig cfg_;
  const ParameterStore& params_;
  std::vector<KvCache> enc_kv_, dec_self_kv_, dec_cross_kv_, syn_kv_;
  int frames_consumed_ = 0;
  int memory_blocks_ = 0;
  int decoded_positions_ = 0;
  int synth_embeddings_ = 0;
};

}  // namespace somn::model
