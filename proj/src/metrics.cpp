#include "calm/metrics.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "calm/errors.hpp"
#include "calm/io.hpp"

namespace calm {

double hallucination_rate(std::span<const Transcript> transcripts) {
    if (transcripts.empty()) throw MetricError("hallucination rate of an empty transcript list");
    std::size_t non_empty = 0;
    for (const Transcript& t : transcripts) non_empty += t.empty() ? 0 : 1;
    return static_cast<double>(non_empty) / static_cast<double>(transcripts.size());
}

std::size_t edit_distance(std::span<const int> ref, std::span<const int> hyp) {
    // Single-row DP over hyp.
    std::vector<std::size_t> row(hyp.size() + 1);
    for (std::size_t j = 0; j <= hyp.size(); ++j) row[j] = j;
    for (std::size_t i = 1; i <= ref.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= hyp.size(); ++j) {
            const std::size_t up = row[j];
            const std::size_t sub = diag + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            row[j] = std::min({sub, up + 1, row[j - 1] + 1});
            diag = up;
        }
    }
    return row[hyp.size()];
}

double wer(std::span<const TokenSeq> refs, std::span<const TokenSeq> hyps) {
    if (refs.size() != hyps.size())
        throw DimensionError("wer: " + std::to_string(refs.size()) + " references vs " +
                             std::to_string(hyps.size()) + " hypotheses");
    std::size_t errors = 0, total = 0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        errors += edit_distance(refs[i], hyps[i]);
        total += refs[i].size();
    }
    if (total == 0) throw MetricError("wer: total reference length is 0");
    return static_cast<double>(errors) / static_cast<double>(total);
}

std::size_t long_hallucination_count(std::span<const Transcript> transcripts,
                                     std::size_t threshold) {
    return static_cast<std::size_t>(
        std::count_if(transcripts.begin(), transcripts.end(),
                      [threshold](const Transcript& t) { return t.length() > threshold; }));
}

std::vector<FrequencyRow> top_hallucinations(std::span<const Transcript> transcripts,
                                             std::size_t k) {
    if (k == 0) throw ConfigError("top_hallucinations: k must be >= 1");
    std::map<TokenSeq, std::size_t> counts;
    for (const Transcript& t : transcripts)
        if (!t.empty()) ++counts[t.tokens];
    std::vector<FrequencyRow> rows;
    rows.reserve(counts.size());
    for (auto& [tokens, count] : counts) rows.push_back({tokens, count});
    // std::map iteration is already lexicographic; stable sort keeps it for ties.
    std::stable_sort(rows.begin(), rows.end(),
                     [](const FrequencyRow& a, const FrequencyRow& b) { return a.count > b.count; });
    if (rows.size() > k) rows.resize(k);
    return rows;
}

std::string eval_csv_header() {
    return "hallucination_rate,wer_clean,wer_other,n_noise,long_hallucinations";
}

std::string eval_csv_row(const EvalReport& r) {
    return format_real(r.hallucination_rate) + "," + format_real(r.wer_clean) + "," +
           format_real(r.wer_other) + "," + std::to_string(r.n_noise) + "," +
           std::to_string(r.long_hallucinations);
}

std::string frequency_table_csv(const EvalReport& r) {
    std::ostringstream out;
    out << "rank,count,fraction,tokens\n";
    for (std::size_t i = 0; i < r.top_hallucinations.size(); ++i) {
        const FrequencyRow& row = r.top_hallucinations[i];
        const double frac = r.n_noise ? static_cast<double>(row.count) / static_cast<double>(r.n_noise)
                                      : 0.0;
        out << i + 1 << ',' << row.count << ',' << format_real(frac) << ','
            << join_ints(row.tokens, ' ') << '\n';
    }
    return out.str();
}

}  // namespace calm
