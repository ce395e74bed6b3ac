#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "calm/model.hpp"

namespace calm {

using TokenSeq = std::vector<int>;

// Fraction of transcripts with at least one token. Throws MetricError on an
// empty list.
double hallucination_rate(std::span<const Transcript> transcripts);

// Unit-cost Levenshtein distance between token sequences.
std::size_t edit_distance(std::span<const int> ref, std::span<const int> hyp);

// Corpus-level token error rate: summed edit distance over summed
// reference length. Throws MetricError when the total reference length is 0.
double wer(std::span<const TokenSeq> refs, std::span<const TokenSeq> hyps);

// Transcripts strictly longer than `threshold` tokens.
std::size_t long_hallucination_count(std::span<const Transcript> transcripts,
                                     std::size_t threshold = 5);

struct FrequencyRow {
    TokenSeq tokens;
    std::size_t count = 0;
    friend bool operator==(const FrequencyRow&, const FrequencyRow&) = default;
};

// Non-empty transcripts grouped by exact content, most frequent first, ties
// in lexicographic token order; at most k rows.
std::vector<FrequencyRow> top_hallucinations(std::span<const Transcript> transcripts,
                                             std::size_t k);

struct EvalReport {
    double hallucination_rate = 0.0;
    double wer_clean = 0.0;
    double wer_other = 0.0;
    std::size_t n_noise = 0;
    std::size_t long_hallucinations = 0;
    std::vector<FrequencyRow> top_hallucinations;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// "hallucination_rate,wer_clean,wer_other,n_noise,long_hallucinations"
std::string eval_csv_header();
std::string eval_csv_row(const EvalReport& report);
// "rank,count,fraction,tokens" rows; fraction relative to n_noise.
std::string frequency_table_csv(const EvalReport& report);

}  // namespace calm
