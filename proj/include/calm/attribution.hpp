#pragma once

#include <set>
#include <string>
#include <vector>

#include "calm/data.hpp"
#include "calm/metrics.hpp"
#include "calm/model.hpp"
#include "calm/training.hpp"

namespace calm {

// Evaluation corpora: noise for the hallucination rate, clean/other speech
// for WER. `other` may be empty, in which case wer_other is reported as 0.
struct EvalSuite {
    Corpus noise;
    Corpus clean;
    Corpus other;
};

struct EvalOptions {
    int max_len = 24;
    std::size_t top_k = 10;
    bool include_other = true;
};

std::vector<Transcript> transcribe(const ModelParams& params, const Corpus& corpus,
                                   const HeadMask& mask, int max_len);

EvalReport evaluate(const ModelParams& params, const HeadMask& mask, const EvalSuite& suite,
                    const EvalOptions& options = {});

enum class HeadClass { hallucinatory, robust };
const char* to_string(HeadClass c);

struct SweepRow {
    HeadMask mask;
    EvalReport eval;
};

struct SweepReport {
    EvalReport baseline;
    std::vector<SweepRow> rows;       // first row is the empty mask
    std::vector<HeadClass> classes;   // per head; single-head sweeps only
};

// Baseline plus every singleton broadcast mask. A head is hallucinatory
// when masking it gives a strictly lower hallucination rate than baseline.
SweepReport single_head_sweep(const ModelParams& params, const EvalSuite& suite,
                              const EvalOptions& options = {});

// Hallucinatory heads by ascending masked rate, ties to the lower index.
std::vector<int> rank_heads(const SweepReport& single);

// Every pair of the top three, the top three, and the top four (as far as
// the ranking reaches), without duplicates.
std::vector<std::set<int>> default_combos(const std::vector<int>& ranking);
// Every non-empty subset of `heads` with at most `max_size` members
// (max_size capped at 4), ordered by size then lexicographically.
std::vector<std::set<int>> exhaustive_combos(const std::vector<int>& heads, std::size_t max_size);

SweepReport multi_head_sweep(const ModelParams& params, const EvalSuite& suite,
                             const std::vector<std::set<int>>& combos,
                             const EvalOptions& options = {});

struct CurveRow {
    int epoch = 0;
    double hallucination_rate = 0.0;
    double wer_clean = 0.0;
    std::size_t long_hallucinations = 0;
    friend bool operator==(const CurveRow&, const CurveRow&) = default;
};

struct EpochSweep {
    std::vector<CurveRow> rows;  // epoch 0 (untuned) .. max_epochs
    TrainResult tuning;
};

// One calm-tune run over max_epochs; every per-epoch checkpoint is
// evaluated on the noise and clean sets.
EpochSweep epoch_sweep(const ModelParams& params, const Corpus& noise_corpus,
                       const std::set<int>& heads, int max_epochs, const EvalSuite& suite,
                       const TuneConfig& base = {}, const EvalOptions& options = {});

// Epoch >= 1 with the lowest hallucination rate among those whose clean
// WER stays within `wer_budget` of epoch 0; ties to fewer epochs. Falls
// back to 1 when no epoch fits the budget.
int select_epoch(const std::vector<CurveRow>& curve, double wer_budget);

std::string sweep_csv(const SweepReport& report);
std::string classes_csv(const SweepReport& report);
std::string curve_csv(const std::vector<CurveRow>& curve);
// Standalone SVG line chart of hallucination rate and clean WER vs epoch.
std::string curve_svg(const std::vector<CurveRow>& curve);

}  // namespace calm
