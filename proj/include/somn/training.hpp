#pragma once

// Composite loss (text CE + masked frame MSE + negatively-weighted thinking
// penalty), teacher-forced full-sequence training, and checkpointing.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "somn/config.hpp"
#include "somn/optimizer.hpp"
#include "somn/synthdata.hpp"

namespace somn::training {

struct TrainConfig {
  float lambda_text = 1.0f;
  float lambda_speech = 0.5f;
  float lambda_think = -0.1f;  // must stay negative
  float think_clamp = 6.0f;    // tau: CE of the forbidden label saturates here
  float learning_rate = 1e-3f;
  int batch_size = 8;
  int epochs = 1;
  std::uint64_t seed = 0;
  // staged training schedule, consumed by the cli when no datasets are given;
  // entry format: "epochs=E lr=R mix=scen:count:min_tok:max_tok[,...]"
  std::vector<std::string> curriculum = {
      "epochs=10 lr=3e-3 mix=asr:3000:2:2",
      "epochs=4 lr=3e-3 mix=asr:2000:2:6",
      "epochs=4 lr=3e-3 mix=asr:1500:4:10",
      "epochs=5 lr=3e-3 mix=qa:1000:4:10,turn_taking:1200:4:10,enhance:800:4:8,"
      "asr:500:4:10,bargein_ci:800:4:10,bargein_ci_echo:400:4:10,bargein_cd:800:4:10",
  };

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossBreakdown {
  float total = 0.0f;
  float l_text = 0.0f;
  float l_speech = 0.0f;
  float l_think = 0.0f;
  float clamp_frac = 0.0f;  // fraction of think positions at the clamp
  int text_positions = 0;
  int think_positions = 0;
  int supervised_frames = 0;
};

// Full-sequence teacher-forced forward; returns the scalar total on the tape.
// Echo-variant examples mix gain * target_frames[t - delay] into the input
// (teacher-forced stand-in for the model's own output).
std::pair<Tensor, LossBreakdown> compute_loss(Tape& tape, const ModelConfig& cfg,
                                              const TrainConfig& tc, const ParameterStore& params,
                                              const synthdata::DuplexExample& ex);

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::int64_t step = 0;
  nlohmann::json metrics;  // last step's record
  ParameterStore params;
};

// "SOMN" + u32 version + JSON blob + named f32 tensors; bit-exact round trip
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// throws ConfigError naming every differing key
void check_compat(const ModelConfig& ckpt_cfg, const ModelConfig& cfg);

struct TrainOptions {
  std::string metrics_path;     // JSON-lines, one record per optimizer step
  std::string checkpoint_path;  // periodic + final snapshot location
  int checkpoint_every = 0;     // steps between periodic saves; 0 = final only
};

// Shuffled mini-batches, Adam with gradient clipping at global norm 1.0.
// NaN loss aborts with NumericError naming the step; the last periodic
// checkpoint on disk survives the abort.
Checkpoint train(const std::vector<synthdata::DuplexExample>& examples, const ModelConfig& cfg,
                 const TrainConfig& tc, const Checkpoint* resume, const TrainOptions& opt);

}  // namespace somn::training
