#pragma once

// Block clock and speaking/non-speaking state machine. The Engine wraps a
// StreamingModel, decodes n positions per block under the <think> input
// protocol, applies state transitions at the emitting position, and routes
// speaking-state embeddings to the synthesizer. An optional linear echo path
// mixes delayed output frames back into the input.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "somn/config.hpp"
#include "somn/model.hpp"
#include "somn/optimizer.hpp"

namespace somn::duplex {

enum class DialogueState { NonSpeaking, Speaking };

const char* state_name(DialogueState s);

struct EchoPath {
  bool enabled = false;
  int delay_blocks = 1;
  float gain = 0.0f;
};

// One token position's input is a pure function of the previous emission and
// the running state. Shared by inference (previous greedy token) and training
// (previous target token), so the two paths cannot drift apart.
struct Protocol {
  DialogueState state = DialogueState::NonSpeaking;
  bool draining = false;  // response text finished (eot seen), audio still playing

  // applies the transition for `emitted` and returns the next position's input
  int advance(const ModelConfig& cfg, int emitted);
};

// Teacher-forced view of a target sequence: per-position decoder inputs and
// the state each position was decoded in.
struct TeacherPlan {
  std::vector<int> inputs;
  std::vector<DialogueState> state_before;
  // producing[p]: position p's hidden embedding feeds the synthesizer
  std::vector<bool> producing;
  // synth_block[b]: block b runs the synthesizer (any producing position)
  std::vector<bool> synth_block;
};

TeacherPlan teacher_plan(const ModelConfig& cfg, const std::vector<int>& targets);

struct Transition {
  int position;  // 0..n-1 within the block
  int token;
};

struct BlockOutput {
  int block_index = 0;
  std::vector<int> tokens;  // exactly n
  std::vector<Transition> transitions;
  std::vector<float> frames;  // exactly B*d_out; zeros when nothing was synthesized
  DialogueState state_after = DialogueState::NonSpeaking;
  bool synthesized = false;
};

struct Transcript {
  std::string config_fingerprint;
  std::uint64_t seed = 0;
  std::vector<BlockOutput> blocks;
  DialogueState final_state = DialogueState::NonSpeaking;
  bool truncated = false;
};

// JSON transcript plus little-endian f32 frame sidecar, referenced by
// offset/count per block
void save_transcript(const Transcript& t, const std::string& json_path,
                     const std::string& frames_path);
Transcript load_transcript(const std::string& json_path, const std::string& frames_path);

// input + gain * history[block_index - delay]; zeros where the delay reaches
// before the dialogue start
std::vector<float> mix_echo(std::span<const float> input,
                            const std::vector<std::vector<float>>& history, const EchoPath& echo,
                            int block_index);

struct EngineOptions {
  EchoPath echo;
  bool forbid_start = false;  // debug: mask <start_speak> so the engine stays silent
};

class Engine {
 public:
  Engine(const ModelConfig& cfg, const ParameterStore& params, EngineOptions opt = {});

  // exactly B*d_in values, pre-echo-mixing
  BlockOutput step_block(std::span<const float> input_frames);

  DialogueState state() const { return protocol_.state; }
  int blocks_run() const { return blocks_run_; }

 private:
  ModelConfig cfg_;
  EngineOptions opt_;
  model::StreamingModel sm_;
  Protocol protocol_;
  int next_input_;
  int blocks_run_ = 0;
  std::vector<std::vector<float>> out_history_;
};

// Runs step_block over the input (zero-padded to a whole block), then keeps
// feeding silence while the model is still Speaking, up to max_blocks. Asserts
// transition legality on the result.
Transcript run_dialogue(const ModelConfig& cfg, const ParameterStore& params,
                        const std::vector<float>& input_frames, const EngineOptions& opt,
                        int max_blocks, std::uint64_t seed);

// throws ContractError unless transitions alternate start/end beginning with
// <start_speak>
void check_legality(const ModelConfig& cfg, const Transcript& t);

}  // namespace somn::duplex
