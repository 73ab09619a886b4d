#include "somn/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace somn::synthdata {

namespace {

// lexical ids exclude the two reserved content ids (blank, eot)
int lexical_count(const ModelConfig& cfg) { return cfg.content_count() - 2; }

int even(int v) { return v + (v % 2); }

std::vector<int> random_lexical(Rng& rng, const ModelConfig& cfg, int count) {
  std::vector<int> t(count);
  for (int& x : t) x = rng.uniform_int(0, lexical_count(cfg) - 1);
  return t;
}

// copy a rendered stream into the input at a frame offset
void place(std::vector<float>& input, int d_in, int start_frame, const std::vector<float>& src) {
  std::copy(src.begin(), src.end(), input.begin() + static_cast<std::size_t>(start_frame) * d_in);
}

struct Timeline {
  std::vector<float> input, tframes, mask;
  std::vector<int> targets;

  Timeline(const ModelConfig& cfg, int blocks)
      : input(static_cast<std::size_t>(blocks) * cfg.B * cfg.d_in, 0.0f),
        tframes(static_cast<std::size_t>(blocks) * cfg.B * cfg.d_out, 0.0f),
        mask(static_cast<std::size_t>(blocks) * cfg.B, 0.0f),
        targets(static_cast<std::size_t>(blocks) * cfg.n, cfg.think_id()) {}
};

// block index of <end_speak> for a response starting at block s with
// text_count tokens (eot included) and audio_frames frames of audio
int response_end_block(const ModelConfig& cfg, int s, int text_count, int audio_frames) {
  const int last_text_pos = s * cfg.n + text_count;  // start sits at position s*n
  const int text_last = last_text_pos / cfg.n;
  const int audio_last =
      audio_frames > 0 ? s + (audio_frames + cfg.B - 1) / cfg.B - 1 : s;
  return std::max(text_last, audio_last) + 1;
}

// lay down <start_speak> at (s,0), text from (s,1), audio+mask from block s,
// <end_speak> at (end,0); drain positions stay <think>
void plan_response(const ModelConfig& cfg, Timeline& tl, int s, const std::vector<int>& text,
                   const std::vector<float>& audio) {
  const int F = static_cast<int>(audio.size()) / cfg.d_out;
  const int e = response_end_block(cfg, s, static_cast<int>(text.size()), F);
  tl.targets[static_cast<std::size_t>(s) * cfg.n] = cfg.start_id();
  for (std::size_t i = 0; i < text.size(); ++i)
    tl.targets[static_cast<std::size_t>(s) * cfg.n + 1 + i] = text[i];
  tl.targets[static_cast<std::size_t>(e) * cfg.n] = cfg.end_id();
  std::copy(audio.begin(), audio.end(),
            tl.tframes.begin() + static_cast<std::size_t>(s) * cfg.B * cfg.d_out);
  std::fill(tl.mask.begin() + static_cast<std::size_t>(s) * cfg.B,
            tl.mask.begin() + static_cast<std::size_t>(s) * cfg.B + F, 1.0f);
}

// cut a planned response short: <end_speak> at (stop_block,0), everything
// after reverts to non-speaking <think>, later frames unsupervised
void plan_interrupt(const ModelConfig& cfg, Timeline& tl, int stop_block) {
  for (std::size_t p = static_cast<std::size_t>(stop_block) * cfg.n; p < tl.targets.size(); ++p)
    tl.targets[p] = cfg.think_id();
  tl.targets[static_cast<std::size_t>(stop_block) * cfg.n] = cfg.end_id();
  std::fill(tl.mask.begin() + static_cast<std::size_t>(stop_block) * cfg.B, tl.mask.end(), 0.0f);
  std::fill(tl.tframes.begin() + static_cast<std::size_t>(stop_block) * cfg.B * cfg.d_out,
            tl.tframes.end(), 0.0f);
}

DuplexExample finish(const ModelConfig& cfg, Scenario sc, Timeline tl) {
  DuplexExample ex;
  ex.scenario = sc;
  ex.input_frames = std::move(tl.input);
  ex.targets = std::move(tl.targets);
  ex.target_frames = std::move(tl.tframes);
  ex.frame_mask = std::move(tl.mask);
  return ex;
}

void check_spec(const ModelConfig& cfg, const ScenarioSpec& spec) {
  if (spec.count <= 0) throw ConfigError("scenario count must be positive");
  if (spec.r < 1) throw ConfigError("frames per token must be >= 1");
  if (cfg.B % spec.r != 0)
    throw ConfigError("block size B must be a multiple of r (tokens straddle blocks otherwise)");
  if (cfg.n < cfg.B / spec.r)
    throw ConfigError("n decoded positions per block cannot keep up with B/r tokens per block");
  if (lexical_count(cfg) < 4) throw ConfigError("content vocab too small");
  if (spec.gap_max < spec.gap_min || spec.gap_min < 1) throw ConfigError("bad gap range");
  if (spec.gap_max >= spec.gap_threshold)
    throw ConfigError("intra-turn pauses must stay below the gap threshold");
  if (spec.trigger_token < 0 || spec.trigger_token >= lexical_count(cfg))
    throw ConfigError("trigger token outside the lexical vocab");
}

int draw_even_len(Rng& rng, const ScenarioSpec& spec) {
  const int lo = std::max(2, spec.min_tokens);
  return std::min(even(rng.uniform_int(lo, spec.max_tokens)), even(spec.max_tokens));
}

// ---- binary record plumbing -----------------------------------------------

struct ByteWriter {
  std::vector<std::uint8_t> bytes;
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void raw(const void* p, std::size_t len) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + len);
  }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void i32(std::int32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void f32s(const std::vector<float>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    raw(v.data(), v.size() * sizeof(float));
  }
  void varint(std::uint32_t v) {
    while (v >= 0x80) {
      u8(static_cast<std::uint8_t>(v) | 0x80);
      v >>= 7;
    }
    u8(static_cast<std::uint8_t>(v));
  }
  void tokens(const std::vector<int>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (int t : v) varint(static_cast<std::uint32_t>(t));
  }
};

struct ByteReader {
  const std::uint8_t* p;
  std::size_t len, pos = 0;
  std::size_t base;  // file offset of p[0], for error messages

  void need(std::size_t n) {
    if (pos + n > len)
      throw ParseError("dataset truncated at byte offset " + std::to_string(base + pos));
  }
  std::uint8_t u8() {
    need(1);
    return p[pos++];
  }
  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, p + pos, n);
    pos += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::int32_t i32() {
    std::int32_t v;
    raw(&v, 4);
    return v;
  }
  float f32() {
    float v;
    raw(&v, 4);
    return v;
  }
  std::vector<float> f32s() {
    const std::uint32_t n = u32();
    std::vector<float> v(n);
    raw(v.data(), static_cast<std::size_t>(n) * sizeof(float));
    return v;
  }
  std::uint32_t varint() {
    std::uint32_t v = 0;
    int shift = 0;
    while (true) {
      const std::uint8_t b = u8();
      v |= static_cast<std::uint32_t>(b & 0x7f) << shift;
      if (!(b & 0x80)) return v;
      shift += 7;
      if (shift > 28)
        throw ParseError("varint overflow at byte offset " + std::to_string(base + pos));
    }
  }
  std::vector<int> tokens() {
    const std::uint32_t n = u32();
    std::vector<int> v(n);
    for (auto& t : v) t = static_cast<int>(varint());
    return v;
  }
};

void encode_example(ByteWriter& w, const DuplexExample& ex) {
  w.u8(static_cast<std::uint8_t>(ex.scenario));
  w.u8(ex.echo ? 1 : 0);
  w.f32(ex.echo_gain);
  w.i32(ex.echo_delay);
  w.i32(ex.trigger_block);
  w.u8(ex.expect_stop ? 1 : 0);
  w.i32(ex.turn_end_block);
  w.tokens(ex.truth_tokens);
  w.f32s(ex.input_frames);
  w.f32s(ex.target_frames);
  w.f32s(ex.frame_mask);
  w.tokens(ex.targets);
}

DuplexExample decode_example(ByteReader& r) {
  DuplexExample ex;
  const std::uint8_t sc = r.u8();
  if (sc > static_cast<std::uint8_t>(Scenario::BargeInCD))
    throw ParseError("unknown scenario tag at byte offset " + std::to_string(r.base + r.pos - 1));
  ex.scenario = static_cast<Scenario>(sc);
  ex.echo = r.u8() != 0;
  ex.echo_gain = r.f32();
  ex.echo_delay = r.i32();
  ex.trigger_block = r.i32();
  ex.expect_stop = r.u8() != 0;
  ex.turn_end_block = r.i32();
  ex.truth_tokens = r.tokens();
  ex.input_frames = r.f32s();
  ex.target_frames = r.f32s();
  ex.frame_mask = r.f32s();
  ex.targets = r.tokens();
  return ex;
}

}  // namespace

// ---- codebook and rendering -----------------------------------------------

Codebook make_codebook(const ModelConfig& cfg, std::uint64_t seed, int r) {
  Codebook cb;
  cb.r = r;
  cb.d_in = cfg.d_in;
  cb.seed = seed;
  const int dim = r * cfg.d_in;
  const int count = cfg.content_count();
  const float floor = 0.25f * std::sqrt(static_cast<float>(dim));
  Rng rng(seed);
  cb.protos.resize(static_cast<std::size_t>(count) * dim);
  auto dist2 = [&](int a, int b) {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) {
      const double d = cb.proto(a)[i] - cb.proto(b)[i];
      s += d * d;
    }
    return s;
  };
  for (int t = 0; t < count; ++t) {
    for (int attempt = 0;; ++attempt) {
      float* row = cb.protos.data() + static_cast<std::size_t>(t) * dim;
      for (int i = 0; i < dim; ++i) row[i] = rng.normal(0.0f, 1.0f);
      bool ok = true;
      for (int o = 0; o < t && ok; ++o) ok = dist2(t, o) >= floor * floor;
      if (ok) break;
      if (attempt > 1000) throw ContractError("codebook collision regeneration failed");
    }
  }
  return cb;
}

int nearest_token(const Codebook& cb, const float* frames) {
  const int dim = cb.r * cb.d_in;
  int best = 0;
  double best_d = 1e300;
  for (int t = 0; t < cb.tokens(); ++t) {
    double s = 0.0;
    const float* p = cb.proto(t);
    for (int i = 0; i < dim; ++i) {
      const double d = frames[i] - p[i];
      s += d * d;
    }
    if (s < best_d) {
      best_d = s;
      best = t;
    }
  }
  return best;
}

std::vector<int> decode_frames(const Codebook& cb, const std::vector<float>& frames) {
  const std::size_t dim = static_cast<std::size_t>(cb.r) * cb.d_in;
  if (frames.size() % dim != 0)
    throw ContractError("decode_frames: stream length not a multiple of r*d_in");
  std::vector<int> out;
  for (std::size_t o = 0; o < frames.size(); o += dim) out.push_back(nearest_token(cb, frames.data() + o));
  return out;
}

std::vector<float> render_tokens(const std::vector<int>& tokens, const Codebook& cb,
                                 float noise_std, Rng& rng) {
  const std::size_t dim = static_cast<std::size_t>(cb.r) * cb.d_in;
  std::vector<float> out;
  out.reserve(tokens.size() * dim);
  for (int t : tokens) {
    if (t < 0 || t >= cb.tokens())
      throw ContractError("render_tokens: id " + std::to_string(t) + " is not a content token");
    out.insert(out.end(), cb.proto(t), cb.proto(t) + dim);
  }
  if (noise_std > 0.0f)
    for (float& x : out) x += rng.normal(0.0f, noise_std);
  return out;
}

std::vector<float> corrupt(const std::vector<float>& stream, int d, float noise_std,
                           int reverb_len, Rng& rng) {
  if (reverb_len < 1) throw ContractError("corrupt: reverb_len must be >= 1");
  if (stream.size() % d != 0) throw ContractError("corrupt: stream length not a multiple of d");
  const int T = static_cast<int>(stream.size()) / d;
  std::vector<float> out(stream.size());
  for (int t = 0; t < T; ++t) {
    const int win = std::min(t + 1, reverb_len);
    for (int i = 0; i < d; ++i) {
      double s = 0.0;
      for (int k = 0; k < win; ++k) s += stream[static_cast<std::size_t>(t - k) * d + i];
      out[static_cast<std::size_t>(t) * d + i] = static_cast<float>(s / win);
    }
  }
  if (noise_std > 0.0f)
    for (float& x : out) x += rng.normal(0.0f, noise_std);
  return out;
}

// ---- scenarios ------------------------------------------------------------

const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::Asr: return "asr";
    case Scenario::Enhance: return "enhance";
    case Scenario::Qa: return "qa";
    case Scenario::TurnTaking: return "turn_taking";
    case Scenario::BargeInCI: return "bargein_ci";
    case Scenario::BargeInCIEcho: return "bargein_ci_echo";
    case Scenario::BargeInCD: return "bargein_cd";
  }
  throw ContractError("bad scenario enum");
}

Scenario scenario_from_name(const std::string& name) {
  for (int i = 0; i <= static_cast<int>(Scenario::BargeInCD); ++i)
    if (name == scenario_name(static_cast<Scenario>(i))) return static_cast<Scenario>(i);
  throw ParseError("unknown scenario: " + name);
}

QaTable make_qa_table(const ModelConfig& cfg, std::uint64_t seed) {
  QaTable table;
  Rng rng(seed ^ 0xa5a5a5a5ull);
  const int lex = lexical_count(cfg);
  while (table.keys.size() < 256) {
    std::array<int, 2> key = {rng.uniform_int(0, lex - 1), rng.uniform_int(0, lex - 1)};
    if (std::find(table.keys.begin(), table.keys.end(), key) != table.keys.end()) continue;
    table.keys.push_back(key);
    table.values.push_back(
        {rng.uniform_int(0, lex - 1), rng.uniform_int(0, lex - 1), rng.uniform_int(0, lex - 1)});
  }
  return table;
}

int QaTable::find(int a, int b) const {
  for (std::size_t i = 0; i < keys.size(); ++i)
    if (keys[i][0] == a && keys[i][1] == b) return static_cast<int>(i);
  return -1;
}

std::vector<DuplexExample> gen_asr(const ModelConfig& cfg, const ScenarioSpec& spec) {
  check_spec(cfg, spec);
  Rng rng(spec.seed);
  const Codebook cb = make_codebook(cfg, spec.codebook_seed, spec.r);
  const int tpb = cfg.B / spec.r;  // tokens finishing per block
  std::vector<DuplexExample> out;
  for (int i = 0; i < spec.count; ++i) {
    const int U = draw_even_len(rng, spec);
    const auto u = random_lexical(rng, cfg, U);
    const int token_blocks = U * spec.r / cfg.B;
    const int blocks = token_blocks + spec.lag_blocks;
    Timeline tl(cfg, blocks);
    place(tl.input, cfg.d_in, 0, render_tokens(u, cb, spec.noise_std, rng));
    // every position is content-labelled; <blank> where nothing is due yet
    std::fill(tl.targets.begin(), tl.targets.end(), cfg.blank_id());
    for (int b = 0; b < token_blocks; ++b)
      for (int j = 0; j < tpb && j < cfg.n; ++j)
        tl.targets[static_cast<std::size_t>(b + spec.lag_blocks) * cfg.n + j] = u[b * tpb + j];
    auto ex = finish(cfg, Scenario::Asr, std::move(tl));
    ex.truth_tokens = u;
    validate_example(cfg, ex);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<DuplexExample> gen_enhance(const ModelConfig& cfg, const ScenarioSpec& spec) {
  check_spec(cfg, spec);
  if (cfg.d_out != cfg.d_in)
    throw ConfigError("enhancement re-speaks the input: d_out must equal d_in");
  Rng rng(spec.seed);
  const Codebook cb = make_codebook(cfg, spec.codebook_seed, spec.r);
  std::vector<DuplexExample> out;
  for (int i = 0; i < spec.count; ++i) {
    const int U = draw_even_len(rng, spec);
    const auto u = random_lexical(rng, cfg, U);
    const auto clean = render_tokens(u, cb, 0.0f, rng);
    const int token_blocks = U * spec.r / cfg.B;
    const int turn_end = token_blocks;
    const int s = turn_end + spec.resp_blocks;
    std::vector<int> text = u;
    text.push_back(cfg.eot_id());
    const int e = response_end_block(cfg, s, static_cast<int>(text.size()),
                                     static_cast<int>(clean.size()) / cfg.d_out);
    Timeline tl(cfg, e + 2);
    place(tl.input, cfg.d_in, 0, corrupt(clean, cfg.d_in, spec.noise_std, spec.reverb_len, rng));
    plan_response(cfg, tl, s, text, clean);
    auto ex = finish(cfg, Scenario::Enhance, std::move(tl));
    ex.truth_tokens = u;
    ex.turn_end_block = turn_end;
    validate_example(cfg, ex);
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

// shared QA response assembly: user speech occupying blocks [0, speech_end),
// answer looked up from the table, response after the silence-gap policy
DuplexExample qa_like(const ModelConfig& cfg, const ScenarioSpec& spec, const Codebook& cb,
                      Rng& rng, Scenario sc, const std::vector<std::pair<int, std::vector<int>>>&
                                                  speech_segments,  // (start block, tokens)
                      int speech_end, const std::vector<int>& answer) {
  std::vector<int> text = answer;
  text.push_back(cfg.eot_id());
  const auto audio = render_tokens(answer, cb, 0.0f, rng);
  const int turn_end = speech_end;
  const int s = turn_end + spec.resp_blocks;
  const int e = response_end_block(cfg, s, static_cast<int>(text.size()),
                                   static_cast<int>(audio.size()) / cfg.d_out);
  Timeline tl(cfg, e + 2);
  for (const auto& [blk, toks] : speech_segments)
    place(tl.input, cfg.d_in, blk * cfg.B, render_tokens(toks, cb, spec.noise_std, rng));
  plan_response(cfg, tl, s, text, audio);
  auto ex = finish(cfg, sc, std::move(tl));
  ex.truth_tokens = answer;
  ex.turn_end_block = turn_end;
  validate_example(cfg, ex);
  return ex;
}

}  // namespace

std::vector<DuplexExample> gen_qa(const ModelConfig& cfg, const ScenarioSpec& spec) {
  check_spec(cfg, spec);
  Rng rng(spec.seed);
  const Codebook cb = make_codebook(cfg, spec.codebook_seed, spec.r);
  const auto table = make_qa_table(cfg, spec.qa_table_seed);
  const int key_blocks = 2 * spec.r / cfg.B + (2 * spec.r % cfg.B ? 1 : 0);
  std::vector<DuplexExample> out;
  for (int i = 0; i < spec.count; ++i) {
    const int k = rng.uniform_int(0, static_cast<int>(table.keys.size()) - 1);
    const std::vector<int> key = {table.keys[k][0], table.keys[k][1]};
    const std::vector<int> answer = {table.values[k][0], table.values[k][1], table.values[k][2]};
    out.push_back(qa_like(cfg, spec, cb, rng, Scenario::Qa, {{0, key}}, key_blocks, answer));
  }
  return out;
}

std::vector<DuplexExample> gen_turn_taking(const ModelConfig& cfg, const ScenarioSpec& spec) {
  check_spec(cfg, spec);
  Rng rng(spec.seed);
  const Codebook cb = make_codebook(cfg, spec.codebook_seed, spec.r);
  const auto table = make_qa_table(cfg, spec.qa_table_seed);
  const int key_blocks = 2 * spec.r / cfg.B + (2 * spec.r % cfg.B ? 1 : 0);
  std::vector<DuplexExample> out;
  for (int i = 0; i < spec.count; ++i) {
    const int F = even(rng.uniform_int(2, 4));  // filler before the pause trap
    const auto filler = random_lexical(rng, cfg, F);
    const int filler_blocks = F * spec.r / cfg.B;
    const int pause = rng.uniform_int(spec.gap_min, spec.gap_max);  // below threshold
    const int k = rng.uniform_int(0, static_cast<int>(table.keys.size()) - 1);
    const std::vector<int> key = {table.keys[k][0], table.keys[k][1]};
    const std::vector<int> answer = {table.values[k][0], table.values[k][1], table.values[k][2]};
    const int key_block = filler_blocks + pause;
    out.push_back(qa_like(cfg, spec, cb, rng, Scenario::TurnTaking,
                          {{0, filler}, {key_block, key}}, key_block + key_blocks, answer));
  }
  return out;
}

namespace {

// prompt turn, then a long spoken answer; optionally inject user speech at a
// block where the model is mid-answer and cut the plan short
DuplexExample interrupt_example(const ModelConfig& cfg, const ScenarioSpec& spec,
                                const Codebook& cb, Rng& rng, Scenario sc,
                                const std::vector<int>& prompt, const std::vector<int>& answer,
                                const std::vector<int>& injection, bool expect_stop) {
  const int prompt_frames = static_cast<int>(prompt.size()) * spec.r;
  const int prompt_blocks = (prompt_frames + cfg.B - 1) / cfg.B;
  const int turn_end = prompt_blocks;
  const int s = turn_end + spec.resp_blocks;
  std::vector<int> text = answer;
  text.push_back(cfg.eot_id());
  const auto audio = render_tokens(answer, cb, 0.0f, rng);
  const int e = response_end_block(cfg, s, static_cast<int>(text.size()),
                                   static_cast<int>(audio.size()) / cfg.d_out);
  if (e - 2 < s + 1) throw ContractError("answer too short to interrupt");
  const int t = rng.uniform_int(s + 1, e - 2);

  Timeline tl(cfg, e + 2);
  place(tl.input, cfg.d_in, 0, render_tokens(prompt, cb, spec.noise_std, rng));
  place(tl.input, cfg.d_in, t * cfg.B, render_tokens(injection, cb, spec.noise_std, rng));
  plan_response(cfg, tl, s, text, audio);
  if (expect_stop) plan_interrupt(cfg, tl, t + 1);
  auto ex = finish(cfg, sc, std::move(tl));
  ex.truth_tokens = answer;
  ex.turn_end_block = turn_end;
  ex.trigger_block = t;
  ex.expect_stop = expect_stop;
  validate_example(cfg, ex);
  return ex;
}

}  // namespace

std::vector<DuplexExample> gen_bargein_ci(const ModelConfig& cfg, const ScenarioSpec& spec) {
  check_spec(cfg, spec);
  Rng rng(spec.seed);
  const Codebook cb = make_codebook(cfg, spec.codebook_seed, spec.r);
  std::vector<DuplexExample> out;
  for (int i = 0; i < spec.count; ++i) {
    const auto prompt = random_lexical(rng, cfg, 2);
    const auto answer = random_lexical(rng, cfg, even(rng.uniform_int(6, 10)));
    const bool trigger = rng.uniform() < 0.5;
    std::vector<int> injection;
    if (trigger) {
      injection = {spec.trigger_token};
    } else {
      int d = rng.uniform_int(0, lexical_count(cfg) - 2);
      if (d >= spec.trigger_token) ++d;  // any lexical token except the trigger
      injection = {d};
    }
    out.push_back(interrupt_example(cfg, spec, cb, rng, Scenario::BargeInCI, prompt, answer,
                                    injection, trigger));
  }
  return out;
}

std::vector<DuplexExample> gen_bargein_cd(const ModelConfig& cfg, const ScenarioSpec& spec) {
  check_spec(cfg, spec);
  Rng rng(spec.seed);
  const Codebook cb = make_codebook(cfg, spec.codebook_seed, spec.r);
  const auto table = make_qa_table(cfg, spec.qa_table_seed);
  std::vector<DuplexExample> out;
  for (int i = 0; i < spec.count; ++i) {
    const int k = rng.uniform_int(0, static_cast<int>(table.keys.size()) - 1);
    const std::vector<int> key = {table.keys[k][0], table.keys[k][1]};
    const std::vector<int> value = {table.values[k][0], table.values[k][1], table.values[k][2]};
    // model re-states the answer a few times so there is room to barge in
    const int reps = rng.uniform_int(2, 3);
    std::vector<int> answer;
    for (int rpt = 0; rpt < reps; ++rpt) answer.insert(answer.end(), value.begin(), value.end());
    const bool correct = rng.uniform() < 0.5;
    std::vector<int> injection = {value[0], value[1]};  // the answer's prefix
    if (!correct) {
      do {
        injection = random_lexical(rng, cfg, 2);
      } while (injection[0] == value[0] && injection[1] == value[1]);
    }
    auto ex = interrupt_example(cfg, spec, cb, rng, Scenario::BargeInCD, key, answer, injection,
                                correct);
    ex.truth_tokens = value;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<DuplexExample> attach_echo_variant(std::vector<DuplexExample> examples,
                                               const duplex::EchoPath& echo) {
  if (!echo.enabled) throw ContractError("attach_echo_variant: echo path is disabled");
  for (auto& ex : examples) {
    if (ex.scenario != Scenario::BargeInCI)
      throw ContractError("attach_echo_variant: only BargeInCI examples take an echo variant");
    ex.scenario = Scenario::BargeInCIEcho;
    ex.echo = true;
    ex.echo_gain = echo.gain;
    ex.echo_delay = echo.delay_blocks;
  }
  return examples;
}

std::vector<DuplexExample> generate(const ModelConfig& cfg, const ScenarioSpec& spec) {
  switch (spec.scenario) {
    case Scenario::Asr: return gen_asr(cfg, spec);
    case Scenario::Enhance: return gen_enhance(cfg, spec);
    case Scenario::Qa: return gen_qa(cfg, spec);
    case Scenario::TurnTaking: return gen_turn_taking(cfg, spec);
    case Scenario::BargeInCI: return gen_bargein_ci(cfg, spec);
    case Scenario::BargeInCIEcho: {
      ScenarioSpec ci = spec;
      ci.scenario = Scenario::BargeInCI;
      duplex::EchoPath echo;
      echo.enabled = true;
      echo.gain = 0.5f;
      echo.delay_blocks = 1;
      return attach_echo_variant(gen_bargein_ci(cfg, ci), echo);
    }
    case Scenario::BargeInCD: return gen_bargein_cd(cfg, spec);
  }
  throw ContractError("bad scenario enum");
}

// ---- validation -----------------------------------------------------------

void validate_example(const ModelConfig& cfg, const DuplexExample& ex) {
  if (ex.targets.empty() || ex.targets.size() % cfg.n != 0)
    throw ContractError("example: target count not a positive multiple of n");
  const int blocks = ex.blocks(cfg);
  if (ex.input_frames.size() != static_cast<std::size_t>(blocks) * cfg.B * cfg.d_in)
    throw ContractError("example: input frame count inconsistent with target blocks");
  if (ex.target_frames.size() != static_cast<std::size_t>(blocks) * cfg.B * cfg.d_out)
    throw ContractError("example: target frame count inconsistent with target blocks");
  if (ex.frame_mask.size() != static_cast<std::size_t>(blocks) * cfg.B)
    throw ContractError("example: frame mask length inconsistent with target blocks");

  bool speaking = false;
  for (std::size_t p = 0; p < ex.targets.size(); ++p) {
    const int t = ex.targets[p];
    if (t < 0 || t >= cfg.vocab_size)
      throw ContractError("example: target id out of vocab at position " + std::to_string(p));
    if (t == cfg.pad_id()) throw ContractError("example: <pad> target at position " + std::to_string(p));
    if (t == cfg.start_id()) {
      if (speaking) throw ContractError("example: <start_speak> while speaking at position " + std::to_string(p));
      speaking = true;
    } else if (t == cfg.end_id()) {
      if (!speaking) throw ContractError("example: <end_speak> while silent at position " + std::to_string(p));
      speaking = false;
    }
  }

  const auto plan = duplex::teacher_plan(cfg, ex.targets);
  for (int f = 0; f < blocks * cfg.B; ++f)
    if (ex.frame_mask[f] != 0.0f && !plan.synth_block[f / cfg.B])
      throw ContractError("example: supervised frame outside any speaking block (frame " +
                          std::to_string(f) + ")");
}

// ---- scenario spec json ---------------------------------------------------

void to_json(nlohmann::json& j, const ScenarioSpec& s) {
  j = nlohmann::json{{"scenario", scenario_name(s.scenario)},
                     {"count", s.count},
                     {"noise_std", s.noise_std},
                     {"reverb_len", s.reverb_len},
                     {"trigger_token", s.trigger_token},
                     {"qa_table_seed", s.qa_table_seed},
                     {"codebook_seed", s.codebook_seed},
                     {"gap_min", s.gap_min},
                     {"gap_max", s.gap_max},
                     {"seed", s.seed},
                     {"r", s.r},
                     {"lag_blocks", s.lag_blocks},
                     {"resp_blocks", s.resp_blocks},
                     {"stop_blocks", s.stop_blocks},
                     {"gap_threshold", s.gap_threshold},
                     {"min_tokens", s.min_tokens},
                     {"max_tokens", s.max_tokens}};
}

void from_json(const nlohmann::json& j, ScenarioSpec& s) {
  s.scenario = scenario_from_name(j.at("scenario").get<std::string>());
  s.count = j.at("count").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.noise_std = j.value("noise_std", s.noise_std);
  s.reverb_len = j.value("reverb_len", s.reverb_len);
  s.trigger_token = j.value("trigger_token", s.trigger_token);
  s.qa_table_seed = j.value("qa_table_seed", s.qa_table_seed);
  s.codebook_seed = j.value("codebook_seed", s.codebook_seed);
  s.gap_min = j.value("gap_min", s.gap_min);
  s.gap_max = j.value("gap_max", s.gap_max);
  s.r = j.value("r", s.r);
  s.lag_blocks = j.value("lag_blocks", s.lag_blocks);
  s.resp_blocks = j.value("resp_blocks", s.resp_blocks);
  s.stop_blocks = j.value("stop_blocks", s.stop_blocks);
  s.gap_threshold = j.value("gap_threshold", s.gap_threshold);
  s.min_tokens = j.value("min_tokens", s.min_tokens);
  s.max_tokens = j.value("max_tokens", s.max_tokens);
}

// ---- dataset file ---------------------------------------------------------

void write_dataset(const std::vector<DuplexExample>& examples, const ModelConfig& cfg,
                   const ScenarioSpec& spec, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path + " for writing");
  f.write("SODX", 4);
  const std::uint32_t version = 1;
  f.write(reinterpret_cast<const char*>(&version), 4);
  nlohmann::json header;
  header["spec"] = spec;
  header["model"] = cfg;
  header["count"] = examples.size();
  const std::string hs = header.dump();
  const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
  f.write(reinterpret_cast<const char*>(&hlen), 4);
  f.write(hs.data(), hlen);
  for (const auto& ex : examples) {
    ByteWriter w;
    encode_example(w, ex);
    const std::uint64_t len = w.bytes.size();
    const std::uint64_t sum = fnv1a(w.bytes.data(), w.bytes.size());
    f.write(reinterpret_cast<const char*>(&len), 8);
    f.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(len));
    f.write(reinterpret_cast<const char*>(&sum), 8);
  }
  if (!f) throw ParseError("write failed for " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "SODX", 4) != 0)
    throw ParseError("bad dataset magic at byte offset 0");
  std::uint32_t version, hlen;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != 1)
    throw ParseError("unsupported dataset version " + std::to_string(version) +
                     " at byte offset 4");
  std::memcpy(&hlen, bytes.data() + 8, 4);
  if (12 + static_cast<std::size_t>(hlen) > bytes.size())
    throw ParseError("dataset truncated at byte offset 12");
  Dataset ds;
  std::size_t count = 0;
  try {
    const auto header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + hlen);
    ds.spec = header.at("spec").get<ScenarioSpec>();
    ds.cfg = header.at("model").get<ModelConfig>();
    count = header.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad dataset header: " + std::string(e.what()));
  }
  std::size_t pos = 12 + hlen;
  for (std::size_t i = 0; i < count; ++i) {
    if (pos + 8 > bytes.size())
      throw ParseError("dataset truncated at byte offset " + std::to_string(pos));
    std::uint64_t len;
    std::memcpy(&len, bytes.data() + pos, 8);
    pos += 8;
    if (pos + len + 8 > bytes.size())
      throw ParseError("dataset truncated at byte offset " + std::to_string(pos));
    std::uint64_t want;
    std::memcpy(&want, bytes.data() + pos + len, 8);
    if (fnv1a(bytes.data() + pos, len) != want)
      throw ParseError("checksum mismatch for example " + std::to_string(i) +
                       " at byte offset " + std::to_string(pos));
    ByteReader r{bytes.data() + pos, static_cast<std::size_t>(len), 0, pos};
    auto ex = decode_example(r);
    validate_example(ds.cfg, ex);
    ds.examples.push_back(std::move(ex));
    pos += len + 8;
  }
  return ds;
}

std::uint64_t file_checksum(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return fnv1a(bytes.data(), bytes.size());
}

}  // namespace somn::synthdata
