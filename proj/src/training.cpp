#include "somn/training.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "somn/duplex.hpp"
#include "somn/model.hpp"
#include "somn/ops.hpp"
#include "somn/rng.hpp"

namespace somn::training {

void TrainConfig::validate() const {
  if (!(lambda_text > 0.0f)) throw ConfigError("lambda_text must be positive");
  if (!(lambda_speech >= 0.0f)) throw ConfigError("lambda_speech must be non-negative");
  if (!(lambda_think < 0.0f)) throw ConfigError("lambda_think must be negative");
  if (!(think_clamp > 0.0f) || !std::isfinite(think_clamp))
    throw ConfigError("think_clamp must be positive and finite");
  if (!(learning_rate > 0.0f)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lambda_text", c.lambda_text},
                     {"lambda_speech", c.lambda_speech},
                     {"lambda_think", c.lambda_think},
                     {"think_clamp", c.think_clamp},
                     {"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"seed", c.seed},
                     {"curriculum", c.curriculum}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.lambda_text = j.value("lambda_text", c.lambda_text);
  c.lambda_speech = j.value("lambda_speech", c.lambda_speech);
  c.lambda_think = j.value("lambda_think", c.lambda_think);
  c.think_clamp = j.value("think_clamp", c.think_clamp);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.curriculum = j.value("curriculum", c.curriculum);
  c.validate();
}

std::pair<Tensor, LossBreakdown> compute_loss(Tape& tape, const ModelConfig& cfg,
                                              const TrainConfig& tc, const ParameterStore& params,
                                              const synthdata::DuplexExample& ex) {
  synthdata::validate_example(cfg, ex);
  const auto plan = duplex::teacher_plan(cfg, ex.targets);
  const int blocks = ex.blocks(cfg);
  const int P = blocks * cfg.n;

  std::vector<float> input = ex.input_frames;
  if (ex.echo) {
    if (cfg.d_out != cfg.d_in) throw ContractError("echo example requires d_out == d_in");
    const std::size_t bw = static_cast<std::size_t>(cfg.B) * cfg.d_in;
    for (int t = ex.echo_delay; t < blocks; ++t)
      for (std::size_t i = 0; i < bw; ++i)
        input[t * bw + i] += ex.echo_gain * ex.target_frames[(t - ex.echo_delay) * bw + i];
  }

  Tensor frames = Tensor::from({blocks * cfg.B, cfg.d_in}, std::move(input));
  Tensor memory = model::encode_full(tape, cfg, params, frames);
  auto dec = model::decode_full(tape, cfg, params, plan.inputs, memory);

  LossBreakdown br;
  std::vector<Tensor> text_terms, think_terms;
  int clamped = 0;
  for (int p = 0; p < P; ++p) {
    Tensor row = ops::slice_rows(tape, dec.logits, p, 1);
    if (ex.targets[p] == cfg.think_id()) {
      // the forbidden label is the state token that would change state here
      const int forbidden = plan.state_before[p] == duplex::DialogueState::NonSpeaking
                                ? cfg.start_id()
                                : cfg.end_id();
      Tensor ce = ops::cross_entropy(tape, row, forbidden);
      if (ce.item() >= tc.think_clamp) ++clamped;
      think_terms.push_back(ops::clamp_max(tape, ce, tc.think_clamp));
    } else {
      text_terms.push_back(ops::cross_entropy(tape, row, ex.targets[p]));
    }
  }
  if (text_terms.empty()) throw ContractError("example has zero supervised text positions");
  br.text_positions = static_cast<int>(text_terms.size());
  br.think_positions = static_cast<int>(think_terms.size());
  br.clamp_frac = think_terms.empty()
                      ? 0.0f
                      : static_cast<float>(clamped) / static_cast<float>(think_terms.size());

  Tensor l_text = ops::mean_of(tape, text_terms);
  Tensor l_think = think_terms.empty() ? Tensor::scalar(0.0f) : ops::mean_of(tape, think_terms);

  Tensor l_speech = Tensor::scalar(0.0f);
  if (tc.lambda_speech > 0.0f) {
    std::vector<int> sb;
    for (int b = 0; b < blocks; ++b)
      if (plan.synth_block[b]) sb.push_back(b);
    float mask_weight = 0.0f;
    for (int b : sb)
      for (int f = 0; f < cfg.B; ++f) mask_weight += ex.frame_mask[b * cfg.B + f];
    if (!sb.empty() && mask_weight > 0.0f) {
      std::vector<Tensor> rows;
      for (int b : sb) {
        Tensor h = ops::slice_rows(tape, dec.hidden, b * cfg.n, cfg.n);
        Tensor rmask = Tensor::zeros({cfg.n, cfg.d_model});
        for (int j = 0; j < cfg.n; ++j)
          if (plan.producing[b * cfg.n + j])
            std::fill_n(rmask.data() + static_cast<std::size_t>(j) * cfg.d_model, cfg.d_model,
                        1.0f);
        rows.push_back(ops::mul(tape, h, rmask));
      }
      Tensor pred = model::synth_full(tape, cfg, params, ops::concat_rows(tape, rows));
      const int g = static_cast<int>(sb.size());
      Tensor target = Tensor::zeros({g * cfg.B, cfg.d_out});
      Tensor mask = Tensor::zeros({g * cfg.B, cfg.d_out});
      for (int i = 0; i < g; ++i)
        for (int f = 0; f < cfg.B; ++f) {
          const int src = sb[i] * cfg.B + f;
          std::memcpy(target.data() + (static_cast<std::size_t>(i) * cfg.B + f) * cfg.d_out,
                      ex.target_frames.data() + static_cast<std::size_t>(src) * cfg.d_out,
                      sizeof(float) * cfg.d_out);
          if (ex.frame_mask[src] != 0.0f) {
            std::fill_n(mask.data() + (static_cast<std::size_t>(i) * cfg.B + f) * cfg.d_out,
                        cfg.d_out, ex.frame_mask[src]);
            ++br.supervised_frames;
          }
        }
      l_speech = ops::masked_mse(tape, pred, target, mask);
    }
  }

  Tensor total = ops::weighted_sum(tape, {l_text, l_speech, l_think},
                                   {tc.lambda_text, tc.lambda_speech, tc.lambda_think});
  br.l_text = l_text.item();
  br.l_speech = l_speech.item();
  br.l_think = l_think.item();
  br.total = total.item();
  return {total, br};
}

// ---- checkpoint file ------------------------------------------------------

namespace {

constexpr std::uint32_t kCkptVersion = 1;

ParameterStore clone_params(const ParameterStore& src) {
  ParameterStore dst;
  for (const auto& name : src.names()) {
    const Tensor& t = src.get(name);
    dst.add(name, Tensor::from(t.shape(), t.vec(), true));
  }
  return dst;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path + " for writing");
  f.write("SOMN", 4);
  f.write(reinterpret_cast<const char*>(&kCkptVersion), 4);
  nlohmann::json j;
  j["model"] = ckpt.model;
  j["train"] = ckpt.train;
  j["step"] = ckpt.step;
  j["metrics"] = ckpt.metrics;
  const std::string js = j.dump();
  const std::uint32_t jlen = static_cast<std::uint32_t>(js.size());
  f.write(reinterpret_cast<const char*>(&jlen), 4);
  f.write(js.data(), jlen);
  const std::uint32_t count = static_cast<std::uint32_t>(ckpt.params.names().size());
  f.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& name : ckpt.params.names()) {
    const Tensor& t = ckpt.params.get(name);
    const std::uint32_t nlen = static_cast<std::uint32_t>(name.size());
    f.write(reinterpret_cast<const char*>(&nlen), 4);
    f.write(name.data(), nlen);
    const std::uint32_t ndim = static_cast<std::uint32_t>(t.shape().size());
    f.write(reinterpret_cast<const char*>(&ndim), 4);
    for (int d : t.shape()) {
      const std::int32_t v = d;
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!f) throw ParseError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size())
      throw ParseError("checkpoint truncated at byte offset " + std::to_string(pos));
  };
  need(12);
  if (std::memcmp(bytes.data(), "SOMN", 4) != 0)
    throw ParseError("bad checkpoint magic at byte offset 0");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kCkptVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version) +
                     " at byte offset 4");
  std::uint32_t jlen;
  std::memcpy(&jlen, bytes.data() + 8, 4);
  pos = 12;
  need(jlen);
  Checkpoint ckpt;
  try {
    const auto j = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + jlen);
    ckpt.model = j.at("model").get<ModelConfig>();
    ckpt.train = j.at("train").get<TrainConfig>();
    ckpt.step = j.at("step").get<std::int64_t>();
    ckpt.metrics = j.value("metrics", nlohmann::json());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad checkpoint json: " + std::string(e.what()));
  }
  pos += jlen;
  need(4);
  std::uint32_t count;
  std::memcpy(&count, bytes.data() + pos, 4);
  pos += 4;
  for (std::uint32_t i = 0; i < count; ++i) {
    need(4);
    std::uint32_t nlen;
    std::memcpy(&nlen, bytes.data() + pos, 4);
    pos += 4;
    need(nlen);
    std::string name(bytes.data() + pos, nlen);
    pos += nlen;
    need(4);
    std::uint32_t ndim;
    std::memcpy(&ndim, bytes.data() + pos, 4);
    pos += 4;
    Shape shape(ndim);
    need(static_cast<std::size_t>(ndim) * 4);
    for (auto& d : shape) {
      std::int32_t v;
      std::memcpy(&v, bytes.data() + pos, 4);
      pos += 4;
      d = v;
    }
    const std::size_t numel = shape_numel(shape);
    need(numel * sizeof(float));
    std::vector<float> data(numel);
    std::memcpy(data.data(), bytes.data() + pos, numel * sizeof(float));
    pos += numel * sizeof(float);
    ckpt.params.add(name, Tensor::from(shape, std::move(data), true));
  }
  return ckpt;
}

void check_compat(const ModelConfig& ckpt_cfg, const ModelConfig& cfg) {
  const nlohmann::json a = ckpt_cfg, b = cfg;
  std::string diff;
  for (auto it = a.begin(); it != a.end(); ++it)
    if (b.at(it.key()) != it.value()) diff += (diff.empty() ? "" : ", ") + it.key();
  if (!diff.empty()) throw ConfigError("checkpoint model config mismatch in: " + diff);
}

// ---- training loop --------------------------------------------------------

Checkpoint train(const std::vector<synthdata::DuplexExample>& examples, const ModelConfig& cfg,
                 const TrainConfig& tc, const Checkpoint* resume, const TrainOptions& opt) {
  cfg.validate();
  tc.validate();
  if (examples.empty()) throw ContractError("train: no examples");

  Checkpoint ck;
  ck.model = cfg;
  ck.train = tc;
  if (resume) {
    check_compat(resume->model, cfg);
    ck.params = clone_params(resume->params);
    ck.step = resume->step;
    ck.metrics = resume->metrics;
  } else {
    ck.params = model::init_parameters(cfg, tc.seed);
  }

  std::ofstream mlog;
  if (!opt.metrics_path.empty()) {
    mlog.open(opt.metrics_path, resume ? std::ios::app : std::ios::trunc);
    if (!mlog) throw ParseError("cannot open " + opt.metrics_path + " for writing");
  }

  // Adam moments start fresh on resume; the checkpoint stores parameters only
  AdamState adam;
  adam.learning_rate = tc.learning_rate;
  Rng shuffle_rng(tc.seed ^ 0x5bd1e995ull);
  std::vector<std::size_t> order(examples.size());

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const int bsz = static_cast<int>(std::min<std::size_t>(tc.batch_size, order.size() - start));
      LossBreakdown acc;
      for (int k = 0; k < bsz; ++k) {
        const auto& ex = examples[order[start + k]];
        Tape tape;
        auto [loss, br] = compute_loss(tape, cfg, tc, ck.params, ex);
        if (!std::isfinite(br.total))
          throw NumericError("non-finite loss at step " + std::to_string(ck.step + 1));
        tape.backward(ops::scale(tape, loss, 1.0f / bsz));
        acc.total += br.total / bsz;
        acc.l_text += br.l_text / bsz;
        acc.l_speech += br.l_speech / bsz;
        acc.l_think += br.l_think / bsz;
        acc.clamp_frac += br.clamp_frac / bsz;
      }
      // examples without speech supervision leave synthesizer grads untouched
      for (const auto& name : ck.params.names()) ck.params.get(name).grad();
      const float gnorm = ck.params.grad_norm();
      if (!std::isfinite(gnorm))
        throw NumericError("non-finite gradients at step " + std::to_string(ck.step + 1));
      ck.params.clip_grads(1.0f);
      adam_step(ck.params, adam);
      ck.step += 1;

      nlohmann::json rec{{"step", ck.step},       {"total", acc.total},
                         {"l_text", acc.l_text},  {"l_speech", acc.l_speech},
                         {"l_think", acc.l_think}, {"clamp_frac", acc.clamp_frac},
                         {"grad_norm", gnorm}};
      ck.metrics = rec;
      if (mlog.is_open()) mlog << rec.dump() << "\n" << std::flush;
      if (opt.checkpoint_every > 0 && !opt.checkpoint_path.empty() &&
          ck.step % opt.checkpoint_every == 0)
        save_checkpoint(ck, opt.checkpoint_path);
    }
  }
  if (!opt.checkpoint_path.empty()) save_checkpoint(ck, opt.checkpoint_path);
  return ck;
}

}  // namespace somn::training
