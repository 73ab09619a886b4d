#pragma once

// Synthetic symbolic speech language and scenario generators. Content tokens
// render to r consecutive prototype frames from a seeded codebook; scenarios
// assemble block-aligned dialogues with full per-position supervision,
// including <think> positions whose forbidden label follows the running state.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "somn/config.hpp"
#include "somn/duplex.hpp"
#include "somn/rng.hpp"

namespace somn::synthdata {

struct Codebook {
  int r = 0;      // frames per token
  int d_in = 0;
  std::uint64_t seed = 0;
  std::vector<float> protos;  // lexical+reserved content ids, each r*d_in floats

  const float* proto(int token) const { return protos.data() + static_cast<std::size_t>(token) * r * d_in; }
  int tokens() const { return static_cast<int>(protos.size() / (static_cast<std::size_t>(r) * d_in)); }
};

// prototypes are unit-scale gaussian; colliding pairs (distance below a floor)
// are regenerated
Codebook make_codebook(const ModelConfig& cfg, std::uint64_t seed, int r = 4);

// nearest prototype over one token's worth of frames (r*d_in values)
int nearest_token(const Codebook& cb, const float* frames);
// frame stream -> token ids, length must be a multiple of r*d_in
std::vector<int> decode_frames(const Codebook& cb, const std::vector<float>& frames);

// prototype concatenation plus iid gaussian noise; tokens must be content ids
std::vector<float> render_tokens(const std::vector<int>& tokens, const Codebook& cb,
                                 float noise_std, Rng& rng);

// per-dim causal moving average of window reverb_len, then additive noise
std::vector<float> corrupt(const std::vector<float>& stream, int d, float noise_std,
                           int reverb_len, Rng& rng);

enum class Scenario { Asr, Enhance, Qa, TurnTaking, BargeInCI, BargeInCIEcho, BargeInCD };

const char* scenario_name(Scenario s);
Scenario scenario_from_name(const std::string& name);

struct DuplexExample {
  Scenario scenario = Scenario::Asr;
  std::vector<float> input_frames;   // blocks*B*d_in
  std::vector<int> targets;          // blocks*n token ids; <think> marks thinking positions
  std::vector<float> target_frames;  // blocks*B*d_out
  std::vector<float> frame_mask;     // blocks*B, nonzero only inside speaking spans
  // scenario ground truth
  std::vector<int> truth_tokens;     // asr/enhance content; qa answer
  int trigger_block = -1;            // barge-in injection block, -1 if none
  bool expect_stop = false;          // should the model cut its answer short?
  int turn_end_block = -1;           // first silence block after the user turn
  // echo variant
  bool echo = false;
  float echo_gain = 0.0f;
  int echo_delay = 1;

  int blocks(const ModelConfig& cfg) const {
    return static_cast<int>(targets.size()) / cfg.n;
  }
};

// throws ContractError on any shape/legality violation
void validate_example(const ModelConfig& cfg, const DuplexExample& ex);

struct ScenarioSpec {
  Scenario scenario = Scenario::Asr;
  int count = 0;
  float noise_std = 0.1f;
  int reverb_len = 3;
  int trigger_token = 1;
  std::uint64_t qa_table_seed = 1234;
  // the codebook is part of the language definition: held-out sets vary seed
  // but must keep codebook_seed (and qa_table_seed) fixed
  std::uint64_t codebook_seed = 4321;
  int gap_min = 1, gap_max = 2;  // intra-turn pause lengths, blocks (< gap_threshold)
  std::uint64_t seed = 0;
  int r = 4;
  int lag_blocks = 2;       // L_lag: recognition emission delay
  int resp_blocks = 2;      // L_resp: start latency budget
  int stop_blocks = 2;      // L_stop: barge-in stop budget
  int gap_threshold = 3;    // G: silence blocks that mean the turn ended
  int min_tokens = 4, max_tokens = 10;  // user utterance length (rounded to even)
};

void to_json(nlohmann::json& j, const ScenarioSpec& s);
void from_json(const nlohmann::json& j, ScenarioSpec& s);

struct QaTable {
  std::vector<std::array<int, 2>> keys;
  std::vector<std::array<int, 3>> values;

  // -1 when the key is absent
  int find(int a, int b) const;
};

// 256 distinct 2-token keys -> 3-token values over the lexical vocab
QaTable make_qa_table(const ModelConfig& cfg, std::uint64_t seed);

std::vector<DuplexExample> gen_asr(const ModelConfig& cfg, const ScenarioSpec& spec);
std::vector<DuplexExample> gen_enhance(const ModelConfig& cfg, const ScenarioSpec& spec);
std::vector<DuplexExample> gen_qa(const ModelConfig& cfg, const ScenarioSpec& spec);
std::vector<DuplexExample> gen_turn_taking(const ModelConfig& cfg, const ScenarioSpec& spec);
std::vector<DuplexExample> gen_bargein_ci(const ModelConfig& cfg, const ScenarioSpec& spec);
std::vector<DuplexExample> gen_bargein_cd(const ModelConfig& cfg, const ScenarioSpec& spec);
// dispatch on spec.scenario (BargeInCIEcho = gen_bargein_ci + attach_echo_variant)
std::vector<DuplexExample> generate(const ModelConfig& cfg, const ScenarioSpec& spec);

// marks BargeInCI examples for live echo mixing (teacher-forced target frames
// stand in for the model's own output during training)
std::vector<DuplexExample> attach_echo_variant(std::vector<DuplexExample> examples,
                                               const duplex::EchoPath& echo);

// "SODX" + u32 version + JSON header + per-example binary records with
// trailing fnv1a checksums
void write_dataset(const std::vector<DuplexExample>& examples, const ModelConfig& cfg,
                   const ScenarioSpec& spec, const std::string& path);

struct Dataset {
  ModelConfig cfg;
  ScenarioSpec spec;
  std::vector<DuplexExample> examples;
};

Dataset read_dataset(const std::string& path);

// fnv1a over the dataset file bytes (reproducibility fingerprint)
std::uint64_t file_checksum(const std::string& path);

}  // namespace somn::synthdata
