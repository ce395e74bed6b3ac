#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "calm/attribution.hpp"
#include "calm/data.hpp"
#include "calm/model.hpp"
#include "calm/training.hpp"

namespace calm {

inline constexpr const char* kToolVersion = "0.3.0";

// Everything an experiment needs, as flat key=value text. Keys:
//   model.<field>, model.seed, signature_seed,
//   {train,clean,other,noise_eval,noise_tune}.<corpus field>,
//   {base,calm,contrast}.<tune field>,
//   sweep.max_epochs, sweep.wer_budget, ablate.exhaustive, ablate.max_subset,
//   eval.max_len, eval.top_k, out_dir.
struct ExperimentConfig {
    ModelConfig model;
    std::uint64_t model_seed = 1;
    std::uint64_t signature_seed = 1;
    CorpusSpec train, clean, other, noise_eval, noise_tune;
    TuneConfig base, calm, contrast;
    int sweep_max_epochs = 6;
    double sweep_wer_budget = 0.02;
    bool ablate_exhaustive = false;
    int ablate_max_subset = 4;
    int eval_max_len = 24;
    int eval_top_k = 10;
    std::string out_dir = "out";
    // Directory relative paths resolve against; not serialized.
    std::string base_dir = ".";

    ExperimentConfig();

    // Unknown keys and malformed values throw ConfigError.
    void apply(const std::map<std::string, std::string>& kv);
    KeyValues to_kv() const;
    void validate() const;

    // Corpus preset with the experiment-wide fields filled in.
    CorpusSpec corpus(const std::string& preset) const;
    EvalSuite eval_suite() const;
    EvalOptions eval_options() const;
    std::string resolve(const std::string& path) const;

    // Parses `path` (if non-empty), then applies overrides; flag wins.
    static ExperimentConfig load(const std::string& path,
                                 const std::map<std::string, std::string>& overrides = {});
};

// The replay record written next to every command's outputs.
struct Provenance {
    std::string command;
    std::map<std::string, std::string> args;
    std::map<std::string, std::string> facts;  // checkpoint ids, derived choices
    KeyValues config;

    std::string to_text() const;
    static Provenance parse(const std::string& text);
};

void write_provenance(const std::string& dir, const Provenance& p);
Provenance read_provenance(const std::string& path);

// Command implementations. Each writes into `out` (created if needed) and
// returns its in-memory result. Input checkpoints are only read.
// Corpus CSVs for every preset; `features` adds binary feature sidecars.
void cmd_gen_data(const ExperimentConfig& cfg, const std::string& out, bool features = false);

ModelParams cmd_train_base(const ExperimentConfig& cfg, const std::string& out);

EvalReport cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint,
                    const HeadMask& mask, const std::string& label, const std::string& out);

enum class AblateMode { single, multi };
// Multi mode takes combos from `combos` when given, else from `ranking`
// through default_combos (or exhaustive_combos when ablate.exhaustive), else
// runs a single-head sweep to rank heads first.
SweepReport cmd_ablate(const ExperimentConfig& cfg, const std::string& checkpoint,
                       AblateMode mode, const std::optional<std::vector<int>>& ranking,
                       const std::optional<std::vector<std::set<int>>>& combos,
                       const std::string& out);

// Fine-tunes per `tune` (trainable mode, heads, epochs) on the noise_tune
// corpus and evaluates the final checkpoint.
struct TuneOutcome {
    TrainResult result;
    EvalReport eval;
};
TuneOutcome cmd_calm_tune(const ExperimentConfig& cfg, const std::string& checkpoint,
                          const TuneConfig& tune, const std::string& label,
                          const std::string& out);

struct SweepOutcome {
    EpochSweep sweep;
    int selected_epoch = 1;
};
SweepOutcome cmd_sweep_epochs(const ExperimentConfig& cfg, const std::string& checkpoint,
                              const std::set<int>& heads, int max_epochs, bool svg,
                              const std::string& out);

// Consolidated table (model/mask, hallucination_rate, wer_clean, wer_other)
// built from the outputs found under `dir`; writes summary.csv and
// summary.txt there and returns the text table.
std::string cmd_report(const std::string& dir);

struct PipelineResult {
    EvalReport base;
    SweepReport single;
    std::vector<int> ranking;
    std::set<int> top3;
    SweepReport multi;
    EvalReport top3_masked;
    SweepOutcome sweep;
    int calm_epochs = 0;
    TuneOutcome calm;
    TuneOutcome contrast;
    double seconds = 0.0;
};

// gen-data -> train-base -> eval -> ablate single -> ablate multi ->
// sweep-epochs -> calm-tune (selected epochs) -> decoder-only contrast ->
// report, each in its own subdirectory of `out`.
PipelineResult run_pipeline(const ExperimentConfig& cfg, const std::string& out,
                            bool verbose = false);

// First `n` heads of the ranking; when fewer heads are hallucinatory the
// rest are filled by ascending masked rate over all heads.
std::set<int> top_heads(const SweepReport& single, std::size_t n);

// Dispatches a command by name with string arguments, as recorded in
// provenance files. Commands: gen-data, train-base, eval, ablate,
// calm-tune, sweep-epochs, report, pipeline.
void run_command(const std::string& command, const std::map<std::string, std::string>& args,
                 const ExperimentConfig& cfg, const std::string& out);

// Re-executes the command recorded in a provenance file into `out`.
void replay(const std::string& provenance_path, const std::string& out);

}  // namespace calm
