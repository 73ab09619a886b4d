#include "somn/model.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include "somn/kernels.hpp"
#include "somn/rng.hpp"

namespace somn::model {

namespace {

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

std::string lname(const std::string& stack, int layer, const std::string& rest) {
  return stack + ".l" + std::to_string(layer) + "." + rest;
}

// [m, B] block-pooling matrix, also used verbatim by the streaming path
std::vector<float> pool_matrix(int m, int B) {
  const int stride = B / m;
  std::vector<float> avg(static_cast<std::size_t>(m) * B, 0.0f);
  for (int i = 0; i < m; ++i)
    for (int s = 0; s < stride; ++s) avg[static_cast<std::size_t>(i) * B + i * stride + s] = 1.0f / stride;
  return avg;
}

std::vector<int> iota_positions(int start, int count) {
  std::vector<int> p(count);
  for (int i = 0; i < count; ++i) p[i] = start + i;
  return p;
}

Tensor causal_mask(int T) {
  Tensor mask = Tensor::zeros({T, T});
  for (int i = 0; i < T; ++i)
    for (int j = i + 1; j < T; ++j) mask.data()[static_cast<std::size_t>(i) * T + j] = kNegInf;
  return mask;
}

// full-sequence multi-head attention; mask may be empty (attend everything)
Tensor attention(Tape& tape, const ModelConfig& cfg, const ParameterStore& P,
                 const std::string& prefix, const Tensor& xq, const Tensor& xkv, const Tensor& mask,
                 const std::vector<int>* rope_positions) {
  // xq and xkv may be the same tensor (self-attention)
  const int hd = cfg.head_dim();
  Tensor q = ops::matmul(tape, xq, P.get(prefix + ".wq"));
  Tensor k = ops::matmul(tape, xkv, P.get(prefix + ".wk"));
  Tensor v = ops::matmul(tape, xkv, P.get(prefix + ".wv"));
  std::vector<Tensor> heads;
  for (int h = 0; h < cfg.heads; ++h) {
    Tensor qh = ops::slice_cols(tape, q, h * hd, hd);
    Tensor kh = ops::slice_cols(tape, k, h * hd, hd);
    Tensor vh = ops::slice_cols(tape, v, h * hd, hd);
    if (rope_positions) {
      qh = ops::rope(tape, qh, *rope_positions, kRopeBase);
      kh = ops::rope(tape, kh, *rope_positions, kRopeBase);
    }
    Tensor scores = ops::matmul(tape, qh, ops::transpose(tape, kh));
    scores = ops::scale(tape, scores, 1.0f / std::sqrt(static_cast<float>(hd)));
    if (mask.defined()) scores = ops::add(tape, scores, mask);
    Tensor probs = ops::softmax(tape, scores);
    heads.push_back(ops::matmul(tape, probs, vh));
  }
  Tensor ctx = ops::concat_cols(tape, heads);
  return ops::matmul(tape, ctx, P.get(prefix + ".wo"));
}

Tensor ln_affine(Tape& tape, const ParameterStore& P, const std::string& prefix, const Tensor& x) {
  Tensor y = ops::layernorm(tape, x, kLnEps);
  y = ops::mul(tape, y, P.get(prefix + ".g"));
  return ops::add(tape, y, P.get(prefix + ".b"));
}

Tensor mlp(Tape& tape, const ParameterStore& P, const std::string& prefix, const Tensor& x) {
  Tensor h = ops::add(tape, ops::matmul(tape, x, P.get(prefix + ".w1")), P.get(prefix + ".b1"));
  h = ops::gelu(tape, h);
  return ops::add(tape, ops::matmul(tape, h, P.get(prefix + ".w2")), P.get(prefix + ".b2"));
}

// pre-norm self-attention stack shared by encoder and synthesizer
Tensor self_stack(Tape& tape, const ModelConfig& cfg, const ParameterStore& P,
                  const std::string& stack, int layers, Tensor x, const std::vector<int>& positions,
                  const Tensor& mask) {
  for (int l = 0; l < layers; ++l) {
    Tensor ln1 = ln_affine(tape, P, lname(stack, l, "ln1"), x);
    Tensor a = attention(tape, cfg, P, lname(stack, l, "attn"), ln1, ln1, mask, &positions);
    x = ops::add(tape, x, a);
    Tensor f = mlp(tape, P, lname(stack, l, "mlp"), ln_affine(tape, P, lname(stack, l, "ln2"), x));
    x = ops::add(tape, x, f);
  }
  return x;
}

}  // namespace

std::vector<float> block_pos_signal(int block, int d) {
  std::vector<float> s(d);
  for (int i = 0; i < d; i += 2) {
    const float theta = static_cast<float>(block) *
                        std::pow(10000.0f, -static_cast<float>(i) / static_cast<float>(d));
    s[i] = std::sin(theta);
    if (i + 1 < d) s[i + 1] = std::cos(theta);
  }
  return s;
}

ParameterStore init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterStore P;
  Rng rng(seed);
  auto dense = [&](const std::string& name, int r, int c, float std) {
    Tensor t = Tensor::zeros({r, c}, true);
    for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(0.0f, std);
    P.add(name, t);
  };
  auto vec = [&](const std::string& name, int d, float fill) {
    Tensor t = Tensor::zeros({d}, true);
    for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = fill;
    P.add(name, t);
  };
  auto ln = [&](const std::string& prefix) {
    vec(prefix + ".g", cfg.d_model, 1.0f);
    vec(prefix + ".b", cfg.d_model, 0.0f);
  };
  auto attn_block = [&](const std::string& prefix, float out_std) {
    dense(prefix + ".wq", cfg.d_model, cfg.d_model, 0.02f);
    dense(prefix + ".wk", cfg.d_model, cfg.d_model, 0.02f);
    dense(prefix + ".wv", cfg.d_model, cfg.d_model, 0.02f);
    dense(prefix + ".wo", cfg.d_model, cfg.d_model, out_std);
  };
  auto mlp_block = [&](const std::string& prefix, float out_std) {
    dense(prefix + ".w1", cfg.d_model, cfg.d_ff(), 0.02f);
    vec(prefix + ".b1", cfg.d_ff(), 0.0f);
    dense(prefix + ".w2", cfg.d_ff(), cfg.d_model, out_std);
    vec(prefix + ".b2", cfg.d_model, 0.0f);
  };
  auto stack = [&](const std::string& name, int layers, bool cross) {
    const float out_std = 0.02f / std::sqrt(2.0f * layers);
    for (int l = 0; l < layers; ++l) {
      ln(lname(name, l, "ln1"));
      attn_block(lname(name, l, "attn"), out_std);
      if (cross) {
        ln(lname(name, l, "lnx"));
        attn_block(lname(name, l, "cross"), out_std);
      }
      ln(lname(name, l, "ln2"));
      mlp_block(lname(name, l, "mlp"), out_std);
    }
    ln(name + ".lnf");
  };

  dense("enc.in.w", cfg.d_in, cfg.d_model, 0.02f);
  vec("enc.in.b", cfg.d_model, 0.0f);
  stack("enc", cfg.enc_layers, false);
  dense("llm.emb", cfg.vocab_size, cfg.d_model, 0.02f);
  stack("llm", cfg.llm_layers, true);
  dense("llm.head", cfg.d_model, cfg.vocab_size, 0.02f);
  stack("syn", cfg.syn_layers, false);
  dense("syn.up.w", cfg.n * cfg.d_model, cfg.B * cfg.d_out,
        0.02f / std::sqrt(2.0f * cfg.syn_layers));
  vec("syn.up.b", cfg.B * cfg.d_out, 0.0f);
  return P;
}

Tensor encode_full(Tape& tape, const ModelConfig& cfg, const ParameterStore& P,
                   const Tensor& frames) {
  if (frames.shape().size() != 2 || frames.shape()[1] != cfg.d_in)
    throw ShapeError("encode_full: frames must be [T," + std::to_string(cfg.d_in) + "], got " +
                     shape_str(frames.shape()));
  const int T = frames.shape()[0];
  if (T % cfg.B != 0) throw ContractError("encode_full: frame count not a multiple of B");
  const int blocks = T / cfg.B;

  Tensor x = ops::add(tape, ops::matmul(tape, frames, P.get("enc.in.w")), P.get("enc.in.b"));
  x = self_stack(tape, cfg, P, "enc", cfg.enc_layers, x, iota_positions(0, T), causal_mask(T));
  x = ln_affine(tape, P, "enc.lnf", x);

  Tensor avg = Tensor::from({cfg.m, cfg.B}, pool_matrix(cfg.m, cfg.B));
  Tensor signal = Tensor::zeros({blocks * cfg.m, cfg.d_model});
  std::vector<Tensor> pooled;
  for (int b = 0; b < blocks; ++b) {
    pooled.push_back(ops::matmul(tape, avg, ops::slice_rows(tape, x, b * cfg.B, cfg.B)));
    const auto sig = block_pos_signal(b, cfg.d_model);
    for (int i = 0; i < cfg.m; ++i)
      std::memcpy(signal.data() + (static_cast<std::size_t>(b) * cfg.m + i) * cfg.d_model,
                  sig.data(), sizeof(float) * cfg.d_model);
  }
  return ops::add(tape, ops::concat_rows(tape, pooled), signal);
}

DecodeOut decode_full(Tape& tape, const ModelConfig& cfg, const ParameterStore& P,
                      const std::vector<int>& tokens, const Tensor& memory) {
  if (!memory.defined() || memory.shape()[0] == 0)
    throw ContractError("decode_full: empty cross-attention memory (encode block 0 first)");
  const int M = memory.shape()[0];
  if (M % cfg.m != 0) throw ContractError("decode_full: memory length not a multiple of m");
  const int P_len = static_cast<int>(tokens.size());
  if (P_len % cfg.n != 0) throw ContractError("decode_full: token count not a multiple of n");
  const int blocks = P_len / cfg.n;
  if (blocks * cfg.m > M)
    throw ContractError("decode_full: memory covers fewer blocks than the token schedule");

  Tensor x = ops::embedding(tape, P.get("llm.emb"), tokens);
  Tensor signal = Tensor::zeros({P_len, cfg.d_model});
  for (int p = 0; p < P_len; ++p) {
    const auto sig = block_pos_signal(p / cfg.n, cfg.d_model);
    std::memcpy(signal.data() + static_cast<std::size_t>(p) * cfg.d_model, sig.data(),
                sizeof(float) * cfg.d_model);
  }
  x = ops::add(tape, x, signal);

  // position p may see memory of blocks 0..p/n
  Tensor xmask = Tensor::zeros({P_len, M});
  for (int p = 0; p < P_len; ++p) {
    const int limit = (p / cfg.n + 1) * cfg.m;
    for (int j = limit; j < M; ++j) xmask.data()[static_cast<std::size_t>(p) * M + j] = kNegInf;
  }
  const Tensor smask = causal_mask(P_len);
  const auto positions = iota_positions(0, P_len);

  for (int l = 0; l < cfg.llm_layers; ++l) {
    Tensor ln1 = ln_affine(tape, P, lname("llm", l, "ln1"), x);
    Tensor a = attention(tape, cfg, P, lname("llm", l, "attn"), ln1, ln1, smask, &positions);
    x = ops::add(tape, x, a);
    Tensor c = attention(tape, cfg, P, lname("llm", l, "cross"),
                         ln_affine(tape, P, lname("llm", l, "lnx"), x), memory, xmask, nullptr);
    x = ops::add(tape, x, c);
    Tensor f = mlp(tape, P, lname("llm", l, "mlp"), ln_affine(tape, P, lname("llm", l, "ln2"), x));
    x = ops::add(tape, x, f);
  }
  Tensor hidden = ln_affine(tape, P, "llm.lnf", x);
  Tensor logits = ops::matmul(tape, hidden, P.get("llm.head"));
  return {logits, hidden};
}

Tensor synth_full(Tape& tape, const ModelConfig& cfg, const ParameterStore& P,
                  const Tensor& embeddings) {
  const int S = embeddings.shape()[0];
  if (S % cfg.n != 0) throw ContractError("synth_full: embedding count not a multiple of n");
  const int groups = S / cfg.n;
  Tensor x = self_stack(tape, cfg, P, "syn", cfg.syn_layers, embeddings, iota_positions(0, S),
                        causal_mask(S));
  x = ln_affine(tape, P, "syn.lnf", x);
  std::vector<Tensor> blocks;
  for (int g = 0; g < groups; ++g) {
    Tensor h = ops::reshape(tape, ops::slice_rows(tape, x, g * cfg.n, cfg.n), {1, cfg.n * cfg.d_model});
    Tensor f = ops::add(tape, ops::matmul(tape, h, P.get("syn.up.w")), P.get("syn.up.b"));
    blocks.push_back(ops::reshape(tape, f, {cfg.B, cfg.d_out}));
  }
  return ops::concat_rows(tape, blocks);
}

// ---------------------------------------------------------------------------
// streaming path

StreamingModel::StreamingModel(const ModelConfig& cfg, const ParameterStore& params)
    : cfg_(cfg), params_(params) {
  cfg_.validate();
  enc_kv_.resize(cfg.enc_layers);
  dec_self_kv_.resize(cfg.llm_layers);
  dec_cross_kv_.resize(cfg.llm_layers);
  syn_kv_.resize(cfg.syn_layers);
}

const float* StreamingModel::w(const std::string& name) const { return params_.get(name).data(); }

void StreamingModel::ln_affine_rows(const float* x, float* y, int rows,
                                    const std::string& prefix) const {
  const int d = cfg_.d_model;
  const float* g = w(prefix + ".g");
  const float* b = w(prefix + ".b");
  for (int r = 0; r < rows; ++r) {
    float* yr = y + static_cast<std::size_t>(r) * d;
    kern::layernorm_row(x + static_cast<std::size_t>(r) * d, yr, d, kLnEps);
    kern::mul(yr, g, yr, d);
    kern::add(yr, b, yr, d);
  }
}

void StreamingModel::attention_rows(const std::string& prefix, KvCache& cache, const float* x,
                                    int rows, int start_pos, bool append, bool causal,
                                    std::vector<float>& out) const {
  const int d = cfg_.d_model;
  const int hd = cfg_.head_dim();
  std::vector<float> q(static_cast<std::size_t>(rows) * d);
  kern::matmul(x, w(prefix + ".wq"), q.data(), rows, d, d);
  if (append) {
    std::vector<float> k(static_cast<std::size_t>(rows) * d), v(static_cast<std::size_t>(rows) * d);
    kern::matmul(x, w(prefix + ".wk"), k.data(), rows, d, d);
    kern::matmul(x, w(prefix + ".wv"), v.data(), rows, d, d);
    for (int r = 0; r < rows; ++r)
      for (int h = 0; h < cfg_.heads; ++h) {
        float* kr = k.data() + static_cast<std::size_t>(r) * d + h * hd;
        kern::rope_row(kr, kr, hd, start_pos + r, kRopeBase, false);
      }
    cache.k.insert(cache.k.end(), k.begin(), k.end());
    cache.v.insert(cache.v.end(), v.begin(), v.end());
    cache.len += rows;
  }
  if (causal)
    for (int r = 0; r < rows; ++r)
      for (int h = 0; h < cfg_.heads; ++h) {
        float* qr = q.data() + static_cast<std::size_t>(r) * d + h * hd;
        kern::rope_row(qr, qr, hd, start_pos + r, kRopeBase, false);
      }

  const int len = cache.len;
  if (len == 0) throw ContractError("attention over empty memory in " + prefix);
  const float scl = 1.0f / std::sqrt(static_cast<float>(hd));
  std::vector<float> kt(static_cast<std::size_t>(hd) * len), vh(static_cast<std::size_t>(len) * hd);
  std::vector<float> scores(len), ctx(static_cast<std::size_t>(rows) * d);
  for (int h = 0; h < cfg_.heads; ++h) {
    for (int t = 0; t < len; ++t)
      for (int i = 0; i < hd; ++i) {
        kt[static_cast<std::size_t>(i) * len + t] = cache.k[static_cast<std::size_t>(t) * d + h * hd + i];
        vh[static_cast<std::size_t>(t) * hd + i] = cache.v[static_cast<std::size_t>(t) * d + h * hd + i];
      }
    for (int r = 0; r < rows; ++r) {
      kern::matmul(q.data() + static_cast<std::size_t>(r) * d + h * hd, kt.data(), scores.data(), 1,
                   hd, len);
      kern::scale(scores.data(), scl, scores.data(), len);
      if (causal)
        for (int j = start_pos + r + 1; j < len; ++j) scores[j] = kNegInf;
      kern::softmax_row(scores.data(), len);
      kern::matmul(scores.data(), vh.data(), ctx.data() + static_cast<std::size_t>(r) * d + h * hd,
                   1, len, hd);
    }
  }
  // heads were written into strided slots of ctx; but matmul outputs are
  // contiguous [1,hd] blocks at the right offsets, so ctx is already [rows,d]
  out.assign(static_cast<std::size_t>(rows) * d, 0.0f);
  kern::matmul(ctx.data(), w(prefix + ".wo"), out.data(), rows, d, d);
}

void StreamingModel::mlp_rows(const std::string& prefix, std::vector<float>& x, int rows) const {
  const int d = cfg_.d_model, f = cfg_.d_ff();
  std::vector<float> h(static_cast<std::size_t>(rows) * f);
  kern::matmul(x.data(), w(prefix + ".w1"), h.data(), rows, d, f);
  const float* b1 = w(prefix + ".b1");
  for (int r = 0; r < rows; ++r)
    kern::add(h.data() + static_cast<std::size_t>(r) * f, b1, h.data() + static_cast<std::size_t>(r) * f, f);
  kern::gelu(h.data(), h.data(), h.size());
  std::vector<float> y(static_cast<std::size_t>(rows) * d);
  kern::matmul(h.data(), w(prefix + ".w2"), y.data(), rows, f, d);
  const float* b2 = w(prefix + ".b2");
  for (int r = 0; r < rows; ++r) {
    float* yr = y.data() + static_cast<std::size_t>(r) * d;
    kern::add(yr, b2, yr, d);
  }
  x = std::move(y);
}

void StreamingModel::self_block(const std::string& prefix, KvCache& cache, std::vector<float>& x,
                                int rows, int start_pos) const {
  const int d = cfg_.d_model;
  std::vector<float> ln(static_cast<std::size_t>(rows) * d), a;
  ln_affine_rows(x.data(), ln.data(), rows, prefix + ".ln1");
  attention_rows(prefix + ".attn", cache, ln.data(), rows, start_pos, true, true, a);
  kern::add(x.data(), a.data(), x.data(), x.size());
  ln_affine_rows(x.data(), ln.data(), rows, prefix + ".ln2");
  std::vector<float> f(ln);
  mlp_rows(prefix + ".mlp", f, rows);
  kern::add(x.data(), f.data(), x.data(), x.size());
}

std::vector<float> StreamingModel::encode_block(std::span<const float> frames) {
  const int B = cfg_.B, d = cfg_.d_model;
  if (frames.size() != static_cast<std::size_t>(B) * cfg_.d_in)
    throw ContractError("encode_block: expected " + std::to_string(B * cfg_.d_in) +
                        " frame values, got " + std::to_string(frames.size()));
  std::vector<float> x(static_cast<std::size_t>(B) * d);
  kern::matmul(frames.data(), w("enc.in.w"), x.data(), B, cfg_.d_in, d);
  const float* bias = w("enc.in.b");
  for (int r = 0; r < B; ++r) {
    float* xr = x.data() + static_cast<std::size_t>(r) * d;
    kern::add(xr, bias, xr, d);
  }
  for (int l = 0; l < cfg_.enc_layers; ++l)
    self_block("enc.l" + std::to_string(l), enc_kv_[l], x, B, frames_consumed_);
  std::vector<float> y(x.size());
  ln_affine_rows(x.data(), y.data(), B, "enc.lnf");

  const int block = frames_consumed_ / B;
  const auto avg = pool_matrix(cfg_.m, B);
  std::vector<float> mem(static_cast<std::size_t>(cfg_.m) * d);
  kern::matmul(avg.data(), y.data(), mem.data(), cfg_.m, B, d);
  const auto sig = block_pos_signal(block, d);
  for (int i = 0; i < cfg_.m; ++i) {
    float* row = mem.data() + static_cast<std::size_t>(i) * d;
    kern::add(row, sig.data(), row, d);
  }
  frames_consumed_ += B;
  return mem;
}

void StreamingModel::push_memory(std::span<const float> rows) {
  const int d = cfg_.d_model;
  if (rows.size() != static_cast<std::size_t>(cfg_.m) * d)
    throw ContractError("push_memory: expected m*d_model values");
  for (int l = 0; l < cfg_.llm_layers; ++l) {
    auto& c = dec_cross_kv_[l];
    const std::size_t old = c.k.size();
    c.k.resize(old + rows.size());
    c.v.resize(old + rows.size());
    kern::matmul(rows.data(), w(lname("llm", l, "cross.wk")), c.k.data() + old, cfg_.m, d, d);
    kern::matmul(rows.data(), w(lname("llm", l, "cross.wv")), c.v.data() + old, cfg_.m, d, d);
    c.len += cfg_.m;
  }
  memory_blocks_ += 1;
}

StreamingModel::StepOut StreamingModel::decode_position(int token) {
  if (memory_blocks_ == 0)
    throw ContractError("decode_position: empty cross-attention memory (encode block 0 first)");
  if (token < 0 || token >= cfg_.vocab_size)
    throw IndexError("decode_position: token " + std::to_string(token) + " out of vocab");
  const int d = cfg_.d_model;
  std::vector<float> x(d);
  std::memcpy(x.data(), w("llm.emb") + static_cast<std::size_t>(token) * d, sizeof(float) * d);
  const auto sig = block_pos_signal(decoded_positions_ / cfg_.n, d);
  kern::add(x.data(), sig.data(), x.data(), d);

  std::vector<float> ln(d), a;
  for (int l = 0; l < cfg_.llm_layers; ++l) {
    ln_affine_rows(x.data(), ln.data(), 1, lname("llm", l, "ln1"));
    attention_rows(lname("llm", l, "attn"), dec_self_kv_[l], ln.data(), 1, decoded_positions_, true,
                   true, a);
    kern::add(x.data(), a.data(), x.data(), d);
    ln_affine_rows(x.data(), ln.data(), 1, lname("llm", l, "lnx"));
    attention_rows(lname("llm", l, "cross"), dec_cross_kv_[l], ln.data(), 1, 0, false, false, a);
    kern::add(x.data(), a.data(), x.data(), d);
    ln_affine_rows(x.data(), ln.data(), 1, lname("llm", l, "ln2"));
    std::vector<float> f(ln);
    mlp_rows(lname("llm", l, "mlp"), f, 1);
    kern::add(x.data(), f.data(), x.data(), d);
  }
  StepOut out;
  out.hidden.resize(d);
  ln_affine_rows(x.data(), out.hidden.data(), 1, "llm.lnf");
  out.logits.assign(cfg_.vocab_size, 0.0f);
  kern::matmul(out.hidden.data(), w("llm.head"), out.logits.data(), 1, d, cfg_.vocab_size);
  decoded_positions_ += 1;
  return out;
}

std::vector<float> StreamingModel::synthesize_block(std::span<const float> embeddings) {
  const int d = cfg_.d_model, n = cfg_.n;
  if (embeddings.size() != static_cast<std::size_t>(n) * d)
    throw ContractError("synthesize_block: expected " + std::to_string(n) + " embeddings of d_model");
  std::vector<float> x(embeddings.begin(), embeddings.end());
  for (int l = 0; l < cfg_.syn_layers; ++l)
    self_block("syn.l" + std::to_string(l), syn_kv_[l], x, n, synth_embeddings_);
  std::vector<float> h(x.size());
  ln_affine_rows(x.data(), h.data(), n, "syn.lnf");
  std::vector<float> frames(static_cast<std::size_t>(cfg_.B) * cfg_.d_out);
  kern::matmul(h.data(), w("syn.up.w"), frames.data(), 1, n * d, cfg_.B * cfg_.d_out);
  kern::add(frames.data(), w("syn.up.b"), frames.data(), frames.size());
  synth_embeddings_ += n;
  return frames;
}

}  // namespace somn::model
