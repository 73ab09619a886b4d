// somn: data generation, training, evaluation, dialogue simulation, and
// numeric self-checks behind one binary.
//
// Exit codes: 0 ok, 2 input error, 3 numeric fault, 4 compatibility,
// 5 self-check failure.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "somn/duplex.hpp"
#include "somn/eval.hpp"
#include "somn/model.hpp"
#include "somn/ops.hpp"
#include "somn/synthdata.hpp"
#include "somn/training.hpp"

namespace fs = std::filesystem;
using namespace somn;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitCompat = 4;
constexpr int kExitSelfCheck = 5;

int threads_from_env() {
  const char* v = std::getenv("SOMN_THREADS");
  if (!v) return 1;
  const int n = std::atoi(v);
  if (n < 1) throw ConfigError("SOMN_THREADS must be a positive integer");
  return n;  // the pipeline is single-threaded; the cap is honored trivially
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());  // includes byte position
  }
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw ParseError("cannot open " + path + " for writing");
  f << j.dump(2) << "\n";
}

ModelConfig model_section(const nlohmann::json& j) {
  ModelConfig cfg;
  if (j.contains("model")) cfg = j.at("model").get<ModelConfig>();
  cfg.validate();
  return cfg;
}

std::vector<synthdata::Dataset> load_datasets(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ContractError("at least one --data file is required");
  std::vector<synthdata::Dataset> out;
  for (const auto& p : paths) out.push_back(synthdata::read_dataset(p));
  return out;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_path,
                 std::optional<std::uint64_t> seed_override,
                 std::optional<int> count_override) {
  auto j = read_json_file(spec_path);
  const auto cfg = model_section(j);
  if (!j.contains("scenario")) throw ParseError(spec_path + ": missing \"scenario\" section");
  auto spec = j.at("scenario").get<synthdata::ScenarioSpec>();
  if (seed_override) spec.seed = *seed_override;
  if (count_override) spec.count = *count_override;

  const auto examples = synthdata::generate(cfg, spec);
  synthdata::write_dataset(examples, cfg, spec, out_path);
  write_json_file(out_path + ".config.json",
                  {{"model", cfg}, {"scenario", spec}, {"seed", spec.seed}});

  const auto bytes = fs::file_size(out_path);
  std::cout << "wrote " << out_path << ": " << examples.size() << " examples, " << bytes
            << " bytes, checksum " << std::hex << synthdata::file_checksum(out_path) << std::dec
            << "\n";
  return 0;
}

// curriculum stage: "epochs=E lr=R mix=scen:count:min:max[,scen:count:min:max...] [data_seed=S]"
struct Stage {
  int epochs = 1;
  float lr = 0.0f;  // 0 = keep the config's learning rate
  std::uint64_t data_seed = 0;
  std::vector<synthdata::ScenarioSpec> mixes;
};

Stage parse_stage(const ModelConfig&, const std::string& entry, std::size_t index) {
  Stage st;
  st.data_seed = 1000 + 1000 * index;  // mix parts advance by 77 within a stage
  std::istringstream is(entry);
  std::string kv;
  bool have_mix = false;
  while (is >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ParseError("curriculum entry needs key=value: " + kv);
    const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
    if (key == "epochs") {
      st.epochs = std::stoi(val);
    } else if (key == "lr") {
      st.lr = std::stof(val);
    } else if (key == "data_seed") {
      st.data_seed = std::stoull(val);
    } else if (key == "mix") {
      std::istringstream ms(val);
      std::string part;
      while (std::getline(ms, part, ',')) {
        synthdata::ScenarioSpec spec;
        std::istringstream ps(part);
        std::string name, f2, f3, f4;
        if (!std::getline(ps, name, ':') || !std::getline(ps, f2, ':') ||
            !std::getline(ps, f3, ':') || !std::getline(ps, f4, ':'))
          throw ParseError("curriculum mix part needs scen:count:min:max, got: " + part);
        spec.scenario = synthdata::scenario_from_name(name);
        spec.count = std::stoi(f2);
        spec.min_tokens = std::stoi(f3);
        spec.max_tokens = std::stoi(f4);
        st.mixes.push_back(spec);
      }
      have_mix = true;
    } else {
      throw ParseError("unknown curriculum key: " + key);
    }
  }
  if (!have_mix || st.mixes.empty()) throw ParseError("curriculum entry has no mix: " + entry);
  if (st.epochs <= 0) throw ParseError("curriculum entry needs epochs >= 1: " + entry);
  return st;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& data_paths,
              const std::string& out_dir, const std::string& resume_path, int checkpoint_every,
              std::optional<int> epochs_override, std::optional<std::uint64_t> seed_override) {
  auto j = read_json_file(config_path);
  auto cfg = model_section(j);
  training::TrainConfig tc;
  if (j.contains("train")) tc = j.at("train").get<training::TrainConfig>();
  if (epochs_override) tc.epochs = *epochs_override;
  if (seed_override) tc.seed = *seed_override;
  tc.validate();

  std::optional<training::Checkpoint> resume;
  if (!resume_path.empty()) {
    resume = training::load_checkpoint(resume_path);
    training::check_compat(resume->model, cfg);
  }

  fs::create_directories(out_dir);
  write_json_file(out_dir + "/config.resolved.json",
                  {{"model", cfg}, {"train", tc}, {"data", data_paths},
                   {"resume", resume_path}, {"seed", tc.seed}});

  training::TrainOptions opt;
  opt.checkpoint_path = out_dir + "/checkpoint.somn";
  opt.checkpoint_every = checkpoint_every;

  if (data_paths.empty()) {
    // no datasets: train from the configured curriculum, stage by stage
    if (tc.curriculum.empty())
      throw ContractError("either --data files or a train.curriculum are required");
    training::Checkpoint cur;
    bool have = resume.has_value();
    if (have) cur = *resume;
    for (std::size_t s = 0; s < tc.curriculum.size(); ++s) {
      const auto stage = parse_stage(cfg, tc.curriculum[s], s);
      std::vector<synthdata::DuplexExample> examples;
      std::uint64_t dseed = stage.data_seed;
      for (auto spec : stage.mixes) {
        spec.seed = dseed;
        dseed += 77;
        auto part = synthdata::generate(cfg, spec);
        examples.insert(examples.end(), std::make_move_iterator(part.begin()),
                        std::make_move_iterator(part.end()));
      }
      training::TrainConfig stc = tc;
      stc.epochs = stage.epochs;
      if (stage.lr > 0.0f) stc.learning_rate = stage.lr;
      training::TrainOptions sopt = opt;
      sopt.metrics_path = out_dir + "/metrics.stage" + std::to_string(s) + ".jsonl";
      cur = training::train(examples, cfg, stc, have ? &cur : nullptr, sopt);
      have = true;
      std::cout << "stage " << s << ": " << examples.size() << " examples, step " << cur.step
                << ", last " << cur.metrics.dump() << "\n";
    }
    std::cout << "trained to step " << cur.step << "; checkpoint at " << opt.checkpoint_path
              << "\n";
    return 0;
  }

  std::vector<synthdata::DuplexExample> examples;
  for (auto& ds : load_datasets(data_paths)) {
    if (ds.cfg.fingerprint() != cfg.fingerprint())
      throw ConfigError("dataset model config differs from training config");
    for (auto& ex : ds.examples) examples.push_back(std::move(ex));
  }

  opt.metrics_path = out_dir + "/metrics.jsonl";
  const auto ckpt = training::train(examples, cfg, tc, resume ? &*resume : nullptr, opt);
  std::cout << "trained to step " << ckpt.step << "; checkpoint at " << opt.checkpoint_path
            << "\n";
  if (!ckpt.metrics.is_null()) std::cout << "last step: " << ckpt.metrics.dump() << "\n";
  return 0;
}

std::string transcript_stem(const std::string& dir, const std::string& data_path,
                            std::size_t index) {
  std::ostringstream os;
  os << dir << "/" << fs::path(data_path).stem().string() << "_" << index;
  return os.str();
}

int cmd_eval(const std::string& ckpt_path, const std::vector<std::string>& data_paths,
             const std::string& report_path, const std::string& thresholds_path, bool oracle,
             const std::string& save_dir, const std::string& replay_dir) {
  if (!fs::exists(ckpt_path)) throw ParseError("checkpoint not found: " + ckpt_path);
  const auto ckpt = training::load_checkpoint(ckpt_path);
  const auto& cfg = ckpt.model;
  const auto datasets = load_datasets(data_paths);

  eval::MetricsReport report;
  report.config_fingerprint = cfg.fingerprint();
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    const auto& ds = datasets[d];
    training::check_compat(ckpt.model, ds.cfg);
    std::vector<duplex::Transcript> transcripts;
    if (oracle) {
      for (const auto& ex : ds.examples) transcripts.push_back(eval::oracle_transcript(cfg, ex));
    } else if (!replay_dir.empty()) {
      for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        const auto stem = transcript_stem(replay_dir, data_paths[d], i);
        transcripts.push_back(duplex::load_transcript(stem + ".json", stem + ".f32"));
      }
    } else {
      transcripts = eval::run_dataset(cfg, ckpt.params, ds);
    }
    if (!save_dir.empty()) {
      fs::create_directories(save_dir);
      for (std::size_t i = 0; i < transcripts.size(); ++i) {
        const auto stem = transcript_stem(save_dir, data_paths[d], i);
        duplex::save_transcript(transcripts[i], stem + ".json", stem + ".f32");
      }
    }
    report.records.push_back(eval::score_dataset(cfg, ds, transcripts));
  }

  eval::emit_report(report, report_path);
  std::cout << "report written to " << report_path << "\n";
  for (const auto& rec : report.records)
    for (const auto& [k, v] : rec.metrics)
      std::cout << "  " << rec.scenario << "." << k << " = " << v << "\n";

  if (!thresholds_path.empty()) {
    std::string why;
    if (!eval::check_thresholds(report, read_json_file(thresholds_path), &why)) {
      std::cerr << "threshold failures:\n" << why;
      return kExitSelfCheck;
    }
    std::cout << "all thresholds met\n";
  }
  return 0;
}

int cmd_simulate(const std::string& ckpt_path, const std::string& scenario_path,
                 const std::string& echo_arg, const std::string& trace_path,
                 std::optional<std::uint64_t> seed_override) {
  const auto ckpt = training::load_checkpoint(ckpt_path);
  const auto& cfg = ckpt.model;

  auto j = read_json_file(scenario_path);
  auto spec = (j.contains("scenario") ? j.at("scenario") : j).get<synthdata::ScenarioSpec>();
  if (seed_override) spec.seed = *seed_override;
  spec.count = 1;
  const auto examples = synthdata::generate(cfg, spec);
  const auto& ex = examples.front();

  duplex::EngineOptions opt;
  if (!echo_arg.empty()) {
    float gain;
    int delay;
    char comma;
    std::istringstream is(echo_arg);
    if (!(is >> gain >> comma >> delay) || comma != ',')
      throw ParseError("--echo expects gain,delay_blocks (e.g. 0.3,1)");
    opt.echo = {true, delay, gain};
  } else if (ex.echo) {
    opt.echo = {true, ex.echo_delay, ex.echo_gain};
  }

  const int max_blocks = ex.blocks(cfg) + eval::kMissHorizon + 6;
  const auto t = duplex::run_dialogue(cfg, ckpt.params, ex.input_frames, opt, max_blocks, spec.seed);
  duplex::save_transcript(t, trace_path, trace_path + ".f32");

  std::cout << "scenario " << synthdata::scenario_name(spec.scenario) << ", seed " << spec.seed
            << ", " << t.blocks.size() << " blocks\n";
  std::cout << std::left << std::setw(6) << "block" << std::setw(13) << "state"
            << std::setw(20) << "tokens" << std::setw(10) << "energy"
            << "events\n";
  for (const auto& blk : t.blocks) {
    std::ostringstream toks;
    for (int tok : blk.tokens) {
      if (tok == cfg.think_id()) toks << "· ";
      else if (tok == cfg.start_id()) toks << "<start> ";
      else if (tok == cfg.end_id()) toks << "<end> ";
      else if (tok == cfg.pad_id()) toks << "<pad> ";
      else toks << tok << " ";
    }
    double energy = 0.0;
    for (float f : blk.frames) energy += static_cast<double>(f) * f;
    energy = std::sqrt(energy / blk.frames.size());
    std::ostringstream events;
    for (const auto& tr : blk.transitions)
      events << (tr.token == cfg.start_id() ? "start@" : "end@") << tr.position << " ";
    std::cout << std::left << std::setw(6) << blk.block_index << std::setw(13)
              << duplex::state_name(blk.state_after) << std::setw(20) << toks.str()
              << std::setw(10) << std::setprecision(3) << energy << events.str() << "\n";
  }
  std::cout << "final state " << duplex::state_name(t.final_state)
            << (t.truncated ? " (truncated)" : "") << "; transcript at " << trace_path << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, bool corrupt) {
  ModelConfig cfg;
  cfg.d_in = cfg.d_out = 4;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.B = 8;
  cfg.m = 2;
  cfg.n = 3;
  cfg.vocab_size = 24;
  cfg.enc_layers = cfg.llm_layers = cfg.syn_layers = 1;
  cfg.validate();

  training::TrainConfig tc;
  // min(ce, tau) has a kink that breaks finite differences near the boundary;
  // push it out of range here — the clamp backward rule has its own op test
  tc.think_clamp = 1e6f;

  // short handmade example exercising all three loss terms
  synthdata::DuplexExample ex;
  ex.scenario = synthdata::Scenario::Qa;
  ex.targets = {cfg.think_id(), cfg.think_id(), cfg.start_id(), 5,            6, cfg.eot_id(),
                cfg.end_id(),   cfg.think_id(), cfg.think_id()};
  Rng drng(seed + 100);
  ex.input_frames.resize(static_cast<std::size_t>(3) * cfg.B * cfg.d_in);
  for (auto& f : ex.input_frames) f = 0.3f * drng.normal();
  ex.target_frames.resize(static_cast<std::size_t>(3) * cfg.B * cfg.d_out);
  for (auto& f : ex.target_frames) f = 0.3f * drng.normal();
  ex.frame_mask.assign(static_cast<std::size_t>(3) * cfg.B, 0.0f);
  for (int f = cfg.B; f < 2 * cfg.B; ++f) ex.frame_mask[f] = 1.0f;
  ex.truth_tokens = {5, 6};
  ex.turn_end_block = 0;

  auto params = model::init_parameters(cfg, seed);
  ops::debug_corrupt_backward = corrupt;
  Tape tape;
  auto [loss, bd] = training::compute_loss(tape, cfg, tc, params, ex);
  tape.backward(loss);
  ops::debug_corrupt_backward = false;

  // the f32 loss is only accurate to a few ulps, so per-coordinate agreement
  // bottoms out near ulp(loss)/eps; errors are judged against the gradient's
  // own scale, with the step size picked per coordinate from a small grid
  double grad_scale = 0.0;
  for (const auto& name : params.names()) {
    const auto& w = params.get(name);
    if (!w.has_grad()) continue;
    for (float g : w.grad_vec()) grad_scale = std::max(grad_scale, static_cast<double>(std::abs(g)));
  }
  const auto loss_at = [&]() {
    Tape t;
    return static_cast<double>(training::compute_loss(t, cfg, tc, params, ex).second.total);
  };

  Rng rng(seed * 0x9e3779b97f4a7c15ull + 1);
  double max_rel = 0.0;
  std::string worst;
  int checked = 0;
  const auto names = params.names();
  while (checked < 120) {
    const auto& name = names[rng.uniform_int(0, static_cast<int>(names.size()) - 1)];
    auto& w = params.get(name);
    auto& v = w.vec();
    const int i = rng.uniform_int(0, static_cast<int>(v.size()) - 1);
    const double analytic = w.has_grad() ? w.grad_vec()[i] : 0.0f;
    double best = 1e9;
    double numeric = 0.0;
    for (const float eps : {5e-3f, 2e-3f, 1e-3f}) {
      const float saved = v[i];
      v[i] = saved + eps;
      const double up = loss_at();
      v[i] = saved - eps;
      const double down = loss_at();
      v[i] = saved;
      const double est = (up - down) / (2.0 * eps);
      if (std::abs(est - analytic) < best) {
        best = std::abs(est - analytic);
        numeric = est;
      }
    }
    const double rel = best / std::max({std::abs(analytic), std::abs(numeric), grad_scale});
    if (rel > max_rel) {
      max_rel = rel;
      std::ostringstream os;
      os << name << "[" << i << "]";
      worst = os.str();
    }
    ++checked;
  }
  std::cout << "gradcheck: " << checked << " parameters, max relative error " << max_rel
            << " at " << worst << " (loss " << bd.total << ")\n";
  if (max_rel >= 1e-3) {
    std::cerr << "gradcheck failed: " << worst << " rel err " << max_rel << "\n";
    return kExitSelfCheck;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"block-synchronized full-duplex dialogue engine"};
  app.require_subcommand(1);

  std::string spec_path, out_path, config_path, out_dir, resume_path, ckpt_path, report_path,
      thresholds_path, scenario_path, echo_arg, trace_path, save_dir, replay_dir;
  std::vector<std::string> data_paths;
  std::uint64_t seed = 0;
  int count = 0, epochs = 0, checkpoint_every = 0;
  bool oracle = false, corrupt = false;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dialogue dataset");
  gen->add_option("--spec", spec_path, "scenario spec JSON")->required();
  gen->add_option("--out", out_path, "output dataset path")->required();
  auto* gen_seed = gen->add_option("--seed", seed, "override spec seed");
  auto* gen_count = gen->add_option("--count", count, "override example count");

  auto* train = app.add_subcommand("train", "train from datasets");
  train->add_option("--config", config_path, "model+train config JSON")->required();
  train->add_option("--data", data_paths, "dataset files (omit to train from the curriculum)");
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--resume", resume_path, "checkpoint to resume from");
  train->add_option("--checkpoint-every", checkpoint_every, "steps between periodic saves");
  auto* train_epochs = train->add_option("--epochs", epochs, "override epochs");
  auto* train_seed = train->add_option("--seed", seed, "override train seed");

  auto* ev = app.add_subcommand("eval", "score a checkpoint on eval datasets");
  ev->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  ev->add_option("--data", data_paths, "dataset files")->required();
  ev->add_option("--report", report_path, "metrics report output path")->required();
  ev->add_option("--thresholds", thresholds_path, "threshold JSON; exit 5 on violation");
  ev->add_flag("--oracle", oracle, "score perfect transcripts built from targets (no model)");
  ev->add_option("--transcripts", save_dir, "directory to save per-example transcripts");
  ev->add_option("--replay", replay_dir, "rescore transcripts saved by --transcripts");

  auto* sim = app.add_subcommand("simulate", "run one dialogue and print a block trace");
  sim->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  sim->add_option("--scenario", scenario_path, "scenario spec JSON")->required();
  sim->add_option("--echo", echo_arg, "echo path as gain,delay_blocks");
  sim->add_option("--trace", trace_path, "transcript output path")->required();
  auto* sim_seed = sim->add_option("--seed", seed, "override scenario seed");

  auto* gc = app.add_subcommand("gradcheck", "autodiff vs central differences");
  gc->add_option("--seed", seed, "rng seed");
  gc->add_flag("--corrupt", corrupt, "negative control: corrupt one backward rule");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitInput;
  }

  try {
    threads_from_env();
    if (gen->parsed())
      return cmd_gen_data(spec_path, out_path,
                          gen_seed->count() ? std::optional(seed) : std::nullopt,
                          gen_count->count() ? std::optional(count) : std::nullopt);
    if (train->parsed())
      return cmd_train(config_path, data_paths, out_dir, resume_path, checkpoint_every,
                       train_epochs->count() ? std::optional(epochs) : std::nullopt,
                       train_seed->count() ? std::optional(seed) : std::nullopt);
    if (ev->parsed())
      return cmd_eval(ckpt_path, data_paths, report_path, thresholds_path, oracle, save_dir,
                      replay_dir);
    if (sim->parsed())
      return cmd_simulate(ckpt_path, scenario_path, echo_arg, trace_path,
                          sim_seed->count() ? std::optional(seed) : std::nullopt);
    if (gc->parsed()) return cmd_gradcheck(seed, corrupt);
  } catch (const NumericError& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "incompatible: " << e.what() << "\n";
    return kExitCompat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}
