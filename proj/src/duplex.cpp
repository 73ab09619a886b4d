#include "somn/duplex.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace somn::duplex {

namespace {

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

int argmax(const std::vector<float>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;  // ties resolve to the lowest id
  return best;
}

void require_finite(const std::vector<float>& v, int block, const char* what) {
  for (float x : v)
    if (!std::isfinite(x))
      throw NumericError(std::string(what) + " not finite in block " + std::to_string(block));
}

}  // namespace

const char* state_name(DialogueState s) {
  return s == DialogueState::Speaking ? "speaking" : "non_speaking";
}

int Protocol::advance(const ModelConfig& cfg, int emitted) {
  if (emitted == cfg.start_id()) {
    state = DialogueState::Speaking;
    draining = false;
    return emitted;
  }
  if (emitted == cfg.end_id()) {
    state = DialogueState::NonSpeaking;
    draining = false;
    return emitted;
  }
  if (state == DialogueState::NonSpeaking) return cfg.think_id();
  if (emitted == cfg.eot_id()) {
    draining = true;
    return cfg.think_id();
  }
  if (draining || emitted >= cfg.content_count()) return cfg.think_id();
  return emitted;  // Speaking with active response text: autoregress on content
}

TeacherPlan teacher_plan(const ModelConfig& cfg, const std::vector<int>& targets) {
  if (targets.size() % cfg.n != 0)
    throw ContractError("teacher_plan: target count not a multiple of n");
  TeacherPlan plan;
  const int P = static_cast<int>(targets.size());
  plan.inputs.resize(P);
  plan.state_before.resize(P);
  plan.producing.resize(P);
  plan.synth_block.assign(P / cfg.n, false);
  Protocol proto;
  int next = cfg.think_id();
  for (int p = 0; p < P; ++p) {
    plan.inputs[p] = next;
    plan.state_before[p] = proto.state;
    plan.producing[p] =
        proto.state == DialogueState::Speaking && targets[p] != cfg.end_id();
    if (plan.producing[p]) plan.synth_block[p / cfg.n] = true;
    next = proto.advance(cfg, targets[p]);
  }
  return plan;
}

std::vector<float> mix_echo(std::span<const float> input,
                            const std::vector<std::vector<float>>& history, const EchoPath& echo,
                            int block_index) {
  std::vector<float> out(input.begin(), input.end());
  if (!echo.enabled || echo.gain == 0.0f) return out;
  const int src = block_index - echo.delay_blocks;
  if (src < 0 || src >= static_cast<int>(history.size())) return out;
  const auto& h = history[src];
  if (h.size() != out.size())
    throw ConfigError("mix_echo: output frame width differs from input (d_out != d_in)");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += echo.gain * h[i];
  return out;
}

Engine::Engine(const ModelConfig& cfg, const ParameterStore& params, EngineOptions opt)
    : cfg_(cfg), opt_(opt), sm_(cfg, params), next_input_(cfg.think_id()) {
  if (opt_.echo.enabled && cfg_.d_out != cfg_.d_in)
    throw ConfigError("echo path requires d_out == d_in");
  if (opt_.echo.enabled && opt_.echo.delay_blocks < 0)
    throw ConfigError("echo delay_blocks must be non-negative");
}

BlockOutput Engine::step_block(std::span<const float> input_frames) {
  const std::size_t want = static_cast<std::size_t>(cfg_.B) * cfg_.d_in;
  if (input_frames.size() != want)
    throw ContractError("step_block: expected " + std::to_string(want) + " frame values, got " +
                        std::to_string(input_frames.size()));

  BlockOutput out;
  out.block_index = blocks_run_;
  const auto mixed = mix_echo(input_frames, out_history_, opt_.echo, blocks_run_);
  const auto mem = sm_.encode_block(mixed);
  sm_.push_memory(mem);

  std::vector<float> synth_in(static_cast<std::size_t>(cfg_.n) * cfg_.d_model, 0.0f);
  bool any_producing = false;
  for (int p = 0; p < cfg_.n; ++p) {
    const DialogueState before = protocol_.state;
    auto step = sm_.decode_position(next_input_);
    require_finite(step.logits, blocks_run_, "logits");
    step.logits[cfg_.pad_id()] = kNegInf;
    if (before == DialogueState::Speaking || opt_.forbid_start)
      step.logits[cfg_.start_id()] = kNegInf;
    if (before == DialogueState::NonSpeaking) step.logits[cfg_.end_id()] = kNegInf;
    const int tok = argmax(step.logits);
    out.tokens.push_back(tok);
    if (tok == cfg_.start_id() || tok == cfg_.end_id()) out.transitions.push_back({p, tok});
    if (before == DialogueState::Speaking && tok != cfg_.end_id()) {
      std::copy(step.hidden.begin(), step.hidden.end(),
                synth_in.begin() + static_cast<std::size_t>(p) * cfg_.d_model);
      any_producing = true;
    }
    next_input_ = protocol_.advance(cfg_, tok);
  }

  if (any_producing) {
    out.frames = sm_.synthesize_block(synth_in);
    require_finite(out.frames, blocks_run_, "frames");
    out.synthesized = true;
  } else {
    out.frames.assign(static_cast<std::size_t>(cfg_.B) * cfg_.d_out, 0.0f);
  }
  out.state_after = protocol_.state;
  out_history_.push_back(out.frames);
  blocks_run_ += 1;
  return out;
}

Transcript run_dialogue(const ModelConfig& cfg, const ParameterStore& params,
                        const std::vector<float>& input_frames, const EngineOptions& opt,
                        int max_blocks, std::uint64_t seed) {
  const std::size_t bw = static_cast<std::size_t>(cfg.B) * cfg.d_in;
  std::vector<float> input = input_frames;
  if (input.size() % bw != 0) input.resize((input.size() / bw + 1) * bw, 0.0f);
  const int in_blocks = static_cast<int>(input.size() / bw);

  Engine engine(cfg, params, opt);
  Transcript t;
  t.config_fingerprint = cfg.fingerprint();
  t.seed = seed;
  const std::vector<float> silence(bw, 0.0f);
  for (int b = 0; b < max_blocks; ++b) {
    const bool have_input = b < in_blocks;
    if (!have_input && engine.state() == DialogueState::NonSpeaking) break;
    std::span<const float> frames =
        have_input ? std::span<const float>(input.data() + static_cast<std::size_t>(b) * bw, bw)
                   : std::span<const float>(silence);
    t.blocks.push_back(engine.step_block(frames));
  }
  t.final_state = engine.state();
  t.truncated = engine.blocks_run() >= max_blocks &&
                (t.final_state == DialogueState::Speaking || in_blocks > max_blocks);
  check_legality(cfg, t);
  return t;
}

void check_legality(const ModelConfig& cfg, const Transcript& t) {
  bool expect_start = true;
  DialogueState state = DialogueState::NonSpeaking;
  for (std::size_t b = 0; b < t.blocks.size(); ++b) {
    const auto& blk = t.blocks[b];
    if (blk.block_index != static_cast<int>(b))
      throw ContractError("transcript block indices not contiguous");
    for (const auto& tr : blk.transitions) {
      const int want = expect_start ? cfg.start_id() : cfg.end_id();
      if (tr.token != want)
        throw ContractError("illegal transition order at block " + std::to_string(b));
      state = expect_start ? DialogueState::Speaking : DialogueState::NonSpeaking;
      expect_start = !expect_start;
    }
    if (blk.state_after != state)
      throw ContractError("state_after inconsistent with transitions at block " +
                          std::to_string(b));
  }
  if (t.final_state != state) throw ContractError("final_state inconsistent with transitions");
}

void save_transcript(const Transcript& t, const std::string& json_path,
                     const std::string& frames_path) {
  std::ofstream sidecar(frames_path, std::ios::binary);
  if (!sidecar) throw ParseError("cannot open " + frames_path + " for writing");
  nlohmann::json j;
  j["config_fingerprint"] = t.config_fingerprint;
  j["seed"] = t.seed;
  j["truncated"] = t.truncated;
  j["final_state"] = state_name(t.final_state);
  j["frames_file"] = std::filesystem::path(frames_path).filename().string();
  j["blocks"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& blk : t.blocks) {
    nlohmann::json jb;
    jb["i"] = blk.block_index;
    jb["tokens"] = blk.tokens;
    auto jt = nlohmann::json::array();
    for (const auto& tr : blk.transitions) jt.push_back({tr.position, tr.token});
    jb["transitions"] = jt;
    jb["state_after"] = state_name(blk.state_after);
    jb["synthesized"] = blk.synthesized;
    jb["frames_ref"] = {offset, blk.frames.size()};
    sidecar.write(reinterpret_cast<const char*>(blk.frames.data()),
                  static_cast<std::streamsize>(blk.frames.size() * sizeof(float)));
    offset += blk.frames.size();
    j["blocks"].push_back(std::move(jb));
  }
  std::ofstream out(json_path);
  if (!out) throw ParseError("cannot open " + json_path + " for writing");
  out << j.dump(2) << "\n";
}

Transcript load_transcript(const std::string& json_path, const std::string& frames_path) {
  std::ifstream in(json_path);
  if (!in) throw ParseError("cannot open " + json_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad transcript json: " + std::string(e.what()));
  }
  std::ifstream sidecar(frames_path, std::ios::binary);
  if (!sidecar) throw ParseError("cannot open " + frames_path);

  auto parse_state = [](const std::string& s) {
    if (s == "speaking") return DialogueState::Speaking;
    if (s == "non_speaking") return DialogueState::NonSpeaking;
    throw ParseError("unknown dialogue state: " + s);
  };
  Transcript t;
  try {
    t.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.truncated = j.at("truncated").get<bool>();
    t.final_state = parse_state(j.at("final_state").get<std::string>());
    for (const auto& jb : j.at("blocks")) {
      BlockOutput blk;
      blk.block_index = jb.at("i").get<int>();
      blk.tokens = jb.at("tokens").get<std::vector<int>>();
      for (const auto& jt : jb.at("transitions"))
        blk.transitions.push_back({jt.at(0).get<int>(), jt.at(1).get<int>()});
      blk.state_after = parse_state(jb.at("state_after").get<std::string>());
      blk.synthesized = jb.at("synthesized").get<bool>();
      const std::size_t offset = jb.at("frames_ref").at(0).get<std::size_t>();
      const std::size_t count = jb.at("frames_ref").at(1).get<std::size_t>();
      blk.frames.resize(count);
      sidecar.seekg(static_cast<std::streamoff>(offset * sizeof(float)));
      sidecar.read(reinterpret_cast<char*>(blk.frames.data()),
                   static_cast<std::streamsize>(count * sizeof(float)));
      if (!sidecar) throw ParseError("frame sidecar truncated at block " +
                                     std::to_string(blk.block_index));
      t.blocks.push_back(std::move(blk));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad transcript json: " + std::string(e.what()));
  }
  return t;
}

}  // namespace somn::duplex
