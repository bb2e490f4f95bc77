#pragma once

// Command implementations behind the `cmn` binary. Each returns structured
// results and writes its outputs plus the resolved config under output_dir.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cmn/config.hpp"
#include "cmn/metrics.hpp"
#include "cmn/synth.hpp"

namespace cmn {

struct Dataset {
    Manifest manifest;
    Vocabulary vocab;
    std::size_t input_dim = 0;
};

Dataset load_dataset(const RunConfig& cfg);
/// cfg.model with the data-derived vocab_size and input_dim filled in.
ModelConfig resolve_model_config(const RunConfig& cfg, const Dataset& data);
std::vector<TrainingPair> make_pairs(const RunConfig& cfg, const Dataset& data, const std::string& split);

struct Generation {
    std::string id;
    Tokens tokens;
    std::string text;
    double score = 0.0;
};

std::vector<Generation> generate_reports(const ReportModel& model, const Vocabulary& vocab, const Manifest& manifest,
                                         const std::string& split, const RunConfig& cfg);
void write_generations(const std::filesystem::path& path, const std::vector<Generation>& gens);
std::vector<Generation> read_generations(const std::filesystem::path& path);

struct EvalResult {
    BleuScores bleu;
    double rouge_l = 0.0;
    PrfScores labels;
    std::size_t count = 0;
};

/// Scores generations against the manifest reports; gold labels come from the manifest.
EvalResult evaluate_generations(const std::vector<Generation>& gens, const Manifest& manifest,
                                const RuleTable& rules);
std::string table_header();
std::string table_row(const std::string& name, const EvalResult& r);
void write_metrics_json(const std::filesystem::path& path, const EvalResult& r);

struct TrainOutcome {
    std::filesystem::path last_checkpoint;
    std::filesystem::path best_checkpoint;
    std::size_t best_epoch = 0;
    double best_score = -1.0;
    std::vector<double> epoch_scores;  // BL-4 on the selection split
    TrainResult result;
    std::size_t parameter_count = 0;
    std::size_t memory_parameter_count = 0;
};

TrainOutcome cmd_train(const RunConfig& cfg, std::ostream& log);

/// Explicitly set model keys in cfg must agree with the checkpoint.
std::vector<Generation> cmd_generate(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                     const std::string& split, const std::filesystem::path& out, std::ostream& log);

EvalResult cmd_evaluate(const std::filesystem::path& generations, const std::filesystem::path& manifest,
                        const std::filesystem::path& rules, const std::filesystem::path& out_json,
                        const std::string& name, std::ostream& out);

struct SweepRow {
    std::size_t value = 0;
    double bleu4 = 0.0;
    std::size_t param_count = 0;
};

/// axis is memory_slots or topk (aliases memory_size, queried_k). Scores on the test split.
std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, const std::string& axis, const std::vector<std::size_t>& values,
                                std::ostream& log);

struct AttnExport {
    QueryTrace visual;
    QueryTrace textual;
    std::vector<int> decoder_input;  // BOS + report ids
    std::filesystem::path visual_csv;
    std::filesystem::path textual_csv;
    std::filesystem::path tokens_csv;
};

AttnExport cmd_export_attn(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                           const std::string& record_id, std::ostream& log);

struct ParamReport {
    std::size_t total = 0;
    std::size_t memory = 0;
    std::size_t backbone = 0;
    std::size_t formula = 0;  // N*d + 3*H*d*d_h + d*d per memory module
    double overhead_percent = 0.0;  // memory / backbone
};

ParamReport cmd_param_count(const RunConfig& cfg, std::size_t vocab_size, std::ostream& out);

Manifest cmd_gen_corpus(const CorpusOptions& options, const std::filesystem::path& out_dir, std::ostream& out);

/// Full command line dispatch with exit codes 0 ok, 1 runtime failure,
/// 2 usage/config, 3 state mismatch, 4 I/O.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace cmn
