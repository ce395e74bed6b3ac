#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "calm/metrics.hpp"
#include "calm/rng.hpp"

using namespace calm;

namespace {

std::vector<Transcript> transcripts(const std::vector<std::vector<int>>& seqs) {
    std::vector<Transcript> out;
    for (const auto& s : seqs) out.push_back({s});
    return out;
}

TokenSeq random_seq(Rng& rng, int max_len, int vocab) {
    TokenSeq s(static_cast<std::size_t>(rng.uniform_int(0, max_len)));
    for (int& t : s) t = static_cast<int>(rng.uniform_int(0, vocab - 1));
    return s;
}

// Full DP table, then a traceback that recounts the edit operations.
std::size_t dp_with_traceback(const TokenSeq& r, const TokenSeq& h) {
    const std::size_t n = r.size(), m = h.size();
    std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1));
    for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
    for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j)
            d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                                d[i - 1][j - 1] + (r[i - 1] == h[j - 1] ? 0 : 1)});
    std::size_t ops = 0, i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + (r[i - 1] == h[j - 1] ? 0 : 1)) {
            ops += r[i - 1] != h[j - 1];
            --i, --j;
        } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
            ++ops, --i;
        } else {
            ++ops, --j;
        }
    }
    EXPECT_EQ(ops, d[n][m]);
    return ops;
}

// Exhaustive search over alignments for very short sequences.
std::size_t brute_edit(const TokenSeq& r, std::size_t i, const TokenSeq& h, std::size_t j) {
    if (i == r.size()) return h.size() - j;
    if (j == h.size()) return r.size() - i;
    return std::min({brute_edit(r, i + 1, h, j) + 1, brute_edit(r, i, h, j + 1) + 1,
                     brute_edit(r, i + 1, h, j + 1) + (r[i] == h[j] ? 0 : 1)});
}

}  // namespace

TEST(HallucinationRate, Examples) {
    EXPECT_EQ(hallucination_rate(transcripts({{}, {}, {}})), 0.0);
    EXPECT_DOUBLE_EQ(hallucination_rate(transcripts({{}, {7}, {}})), 1.0 / 3.0);
    EXPECT_THROW(hallucination_rate(std::vector<Transcript>{}), MetricError);
}

TEST(HallucinationRate, ExactFractionAndPermutationInvariance) {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 40));
        std::vector<Transcript> list(n);
        std::size_t nonempty = 0;
        for (Transcript& t : list)
            if (rng.uniform() < 0.5) {
                t.tokens = {static_cast<int>(rng.uniform_int(0, 5))};
                ++nonempty;
            }
        const double rate = hallucination_rate(list);
        EXPECT_EQ(rate, static_cast<double>(nonempty) / static_cast<double>(n));
        rng.shuffle(list);
        EXPECT_EQ(hallucination_rate(list), rate);
    }
}

TEST(Wer, Examples) {
    const std::vector<TokenSeq> refs{{1, 2, 3}};
    EXPECT_EQ(wer(refs, refs), 0.0);
    EXPECT_DOUBLE_EQ(wer(refs, std::vector<TokenSeq>{{1, 9, 3}}), 1.0 / 3.0);
    EXPECT_EQ(wer(refs, std::vector<TokenSeq>{{}}), 1.0);
    EXPECT_THROW(wer(std::vector<TokenSeq>{{}}, std::vector<TokenSeq>{{1}}), MetricError);
    EXPECT_THROW(wer(refs, std::vector<TokenSeq>{}), DimensionError);
}

TEST(Wer, MatchesDpOracleOnRandomPairs) {
    Rng rng(2);
    std::vector<TokenSeq> refs, hyps;
    std::size_t dist = 0, total = 0;
    for (int i = 0; i < 200; ++i) {
        refs.push_back(random_seq(rng, 8, 4));
        hyps.push_back(random_seq(rng, 8, 4));
        const std::size_t d = dp_with_traceback(refs.back(), hyps.back());
        EXPECT_EQ(edit_distance(refs.back(), hyps.back()), d);
        if (refs.back().size() <= 5 && hyps.back().size() <= 5) {
            EXPECT_EQ(brute_edit(refs.back(), 0, hyps.back(), 0), d);
        }
        dist += d;
        total += refs.back().size();
    }
    EXPECT_EQ(wer(refs, hyps), static_cast<double>(dist) / static_cast<double>(total));
}

TEST(Wer, Invariants) {
    Rng rng(3);
    std::vector<TokenSeq> refs, hyps, empty;
    for (int i = 0; i < 30; ++i) {
        refs.push_back(random_seq(rng, 8, 4));
        refs.back().push_back(1);
        hyps.push_back(random_seq(rng, 8, 4));
        empty.emplace_back();
    }
    EXPECT_EQ(wer(refs, refs), 0.0);
    EXPECT_EQ(wer(refs, empty), 1.0);
    const double w = wer(refs, hyps);
    std::vector<std::size_t> order(refs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<TokenSeq> r2, h2;
    for (std::size_t i : order) r2.push_back(refs[i]), h2.push_back(hyps[i]);
    EXPECT_EQ(wer(r2, h2), w);
}

TEST(EditDistance, TriangleInequality) {
    Rng rng(4);
    for (int i = 0; i < 300; ++i) {
        const TokenSeq a = random_seq(rng, 8, 3), b = random_seq(rng, 8, 3), c = random_seq(rng, 8, 3);
        EXPECT_LE(edit_distance(a, c), edit_distance(a, b) + edit_distance(b, c));
    }
}

TEST(LongHallucinations, Examples) {
    EXPECT_EQ(long_hallucination_count(transcripts({{1}, {1, 2, 3, 4, 5}})), 0u);
    EXPECT_EQ(long_hallucination_count(transcripts({{1, 1, 1, 1, 1, 1}, {1, 1, 1, 1, 1}, {1, 1, 1, 1, 1, 1, 1}})), 2u);
    EXPECT_EQ(long_hallucination_count(transcripts({{1}, {}}), 0), 1u);
}

TEST(TopHallucinations, Examples) {
    EXPECT_TRUE(top_hallucinations(transcripts({{}, {}}), 3).empty());
    const auto t = top_hallucinations(transcripts({{3}, {3}, {9}}), 1);
    ASSERT_EQ(t.size(), 1u);
    EXPECT_EQ(t[0], (FrequencyRow{{3}, 2}));
    const auto ties = top_hallucinations(transcripts({{9}, {2, 1}, {2}, {9}, {2}, {2, 1}}), 5);
    ASSERT_EQ(ties.size(), 3u);
    EXPECT_EQ(ties[0].tokens, (TokenSeq{2}));
    EXPECT_EQ(ties[1].tokens, (TokenSeq{2, 1}));
    EXPECT_EQ(ties[2].tokens, (TokenSeq{9}));
}

TEST(TopHallucinations, MatchesBruteForceRecount) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Transcript> list(static_cast<std::size_t>(rng.uniform_int(1, 60)));
        for (Transcript& t : list) t.tokens = random_seq(rng, 3, 3);
        const std::size_t k = static_cast<std::size_t>(rng.uniform_int(1, 8));
        const auto table = top_hallucinations(list, k);
        std::size_t total = 0, long_count = 0;
        for (const Transcript& t : list) long_count += t.length() > 2;
        EXPECT_EQ(long_hallucination_count(list, 2), long_count);
        for (std::size_t i = 0; i < table.size(); ++i) {
            const auto n = static_cast<std::size_t>(std::count_if(
                list.begin(), list.end(), [&](const Transcript& t) { return t.tokens == table[i].tokens; }));
            EXPECT_EQ(table[i].count, n);
            EXPECT_FALSE(table[i].tokens.empty());
            if (i > 0) {
                EXPECT_TRUE(table[i - 1].count > table[i].count ||
                            (table[i - 1].count == table[i].count && table[i - 1].tokens < table[i].tokens));
            }
            total += n;
        }
        // No omitted sequence beats the last row.
        std::map<TokenSeq, std::size_t> all;
        for (const Transcript& t : list)
            if (!t.empty()) ++all[t.tokens];
        EXPECT_EQ(table.size(), std::min(k, all.size()));
        if (!table.empty())
            for (const auto& [seq, n] : all)
                if (std::none_of(table.begin(), table.end(), [&](const FrequencyRow& r) { return r.tokens == seq; })) {
                    EXPECT_TRUE(n < table.back().count || (n == table.back().count && table.back().tokens < seq));
                }
        EXPECT_LE(total, list.size());
    }
}

TEST(EvalReport, CsvFormat) {
    EvalReport r;
    r.hallucination_rate = 0.5;
    r.wer_clean = 0.25;
    r.n_noise = 4;
    r.top_hallucinations = {{{3}, 2}};
    EXPECT_EQ(eval_csv_header(), "hallucination_rate,wer_clean,wer_other,n_noise,long_hallucinations");
    EXPECT_EQ(eval_csv_row(r), "0.5,0.25,0,4,0");
    EXPECT_EQ(frequency_table_csv(r), "rank,count,fraction,tokens\n1,2,0.5,3\n");
}
