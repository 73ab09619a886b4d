#pragma once

// Scenario metrics: edit-distance ASR accuracy, enhancement RMSE + decode
// accuracy, and transition latency/error rates, aggregated into a report the
// acceptance thresholds can gate on.

#include <optional>
#include <string>
#include <vector>

#include "somn/duplex.hpp"
#include "somn/synthdata.hpp"

namespace somn::eval {

// required transitions not emitted within this many blocks of their cue are
// misses, reported separately from latency quantiles
constexpr int kMissHorizon = 10;

std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b);

// decoded content stream: think/state/pad and the reserved content ids
// (blank, eot) stripped, block order preserved
std::vector<int> content_tokens(const ModelConfig& cfg, const duplex::Transcript& t);

// content tokens emitted inside speaking spans only — the system's spoken
// response, free of recognition-style emissions at non-speaking positions
std::vector<int> spoken_tokens(const ModelConfig& cfg, const duplex::Transcript& t);

// 1 - edit_distance / max(len) over content tokens vs truth
double score_asr(const ModelConfig& cfg, const duplex::Transcript& t,
                 const std::vector<int>& truth);

struct EnhanceScore {
  bool spoke = false;       // rmse undefined when the model never spoke
  double rmse = 0.0;        // over the time-aligned speaking span
  double decoded_accuracy = 0.0;
};

// alignment: emitted frames from the first <start_speak> block vs clean_frames
EnhanceScore score_enhance(const ModelConfig& cfg, const duplex::Transcript& t,
                           const synthdata::Codebook& cb, const std::vector<int>& truth,
                           const std::vector<float>& clean_frames);

struct MetricRecord {
  std::string scenario;
  int count = 0;
  // metric name -> value; names are stable (see evaluate)
  std::vector<std::pair<std::string, double>> metrics;

  std::optional<double> get(const std::string& name) const;
};

struct MetricsReport {
  std::string config_fingerprint;
  std::vector<MetricRecord> records;
};

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

// perfect transcript reconstructed from an example's teacher targets; the
// debug path for scoring-pipeline checks without a model in the loop
duplex::Transcript oracle_transcript(const ModelConfig& cfg, const synthdata::DuplexExample& ex);

// live transcripts for every example (echo variants use the engine echo path)
std::vector<duplex::Transcript> run_dataset(const ModelConfig& cfg, const ParameterStore& params,
                                            const synthdata::Dataset& ds);

// scores one dataset against paired transcripts (live, replayed, or oracle)
MetricRecord score_dataset(const ModelConfig& cfg, const synthdata::Dataset& ds,
                           const std::vector<duplex::Transcript>& transcripts);

// transition scoring over one scenario's paired (transcript, truth) runs
MetricRecord score_transitions(const ModelConfig& cfg,
                               const std::vector<duplex::Transcript>& transcripts,
                               const std::vector<synthdata::DuplexExample>& truths,
                               const synthdata::ScenarioSpec& spec);

// runs dialogues over each dataset (echo variants use the live echo path) and
// aggregates one record per scenario
MetricsReport evaluate(const ModelConfig& cfg, const ParameterStore& params,
                       const std::vector<synthdata::Dataset>& datasets);

// thresholds: JSON map "scenario.metric" -> {"op": ">="|"<=", "value": x}
bool check_thresholds(const MetricsReport& report, const nlohmann::json& thresholds,
                      std::string* failures = nullptr);

// JSON report at path plus a text table at path + ".txt"
void emit_report(const MetricsReport& report, const std::string& path);

}  // namespace somn::eval
