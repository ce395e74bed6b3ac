#include "calm/attribution.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "calm/errors.hpp"
#include "calm/io.hpp"

namespace calm {

std::vector<Transcript> transcribe(const ModelParams& params, const Corpus& corpus,
                                   const HeadMask& mask, int max_len) {
    std::vector<Transcript> out;
    out.reserve(corpus.size());
    for (const Sample& s : corpus) out.push_back(greedy_decode(params, s.features, mask, max_len));
    return out;
}

namespace {

double corpus_wer(const ModelParams& params, const Corpus& corpus, const HeadMask& mask,
                  int max_len) {
    std::vector<TokenSeq> refs, hyps;
    refs.reserve(corpus.size());
    hyps.reserve(corpus.size());
    for (const Sample& s : corpus) {
        refs.push_back(s.label);
        hyps.push_back(greedy_decode(params, s.features, mask, max_len).tokens);
    }
    return wer(refs, hyps);
}

}  // namespace

EvalReport evaluate(const ModelParams& params, const HeadMask& mask, const EvalSuite& suite,
                    const EvalOptions& options) {
    mask.validate(params.config());
    EvalReport r;
    const std::vector<Transcript> noise = transcribe(params, suite.noise, mask, options.max_len);
    r.n_noise = noise.size();
    r.hallucination_rate = hallucination_rate(noise);
    r.long_hallucinations = long_hallucination_count(noise, 5);
    r.top_hallucinations = top_hallucinations(noise, options.top_k);
    r.wer_clean = corpus_wer(params, suite.clean, mask, options.max_len);
    if (options.include_other && !suite.other.empty())
        r.wer_other = corpus_wer(params, suite.other, mask, options.max_len);
    return r;
}

const char* to_string(HeadClass c) {
    return c == HeadClass::hallucinatory ? "hallucinatory" : "robust";
}

SweepReport single_head_sweep(const ModelParams& params, const EvalSuite& suite,
                              const EvalOptions& options) {
    SweepReport report;
    report.baseline = evaluate(params, HeadMask::none(), suite, options);
    report.rows.push_back({HeadMask::none(), report.baseline});
    for (int h = 0; h < params.config().n_heads; ++h) {
        const HeadMask mask = HeadMask::broadcast({h});
        EvalReport e = evaluate(params, mask, suite, options);
        report.classes.push_back(e.hallucination_rate < report.baseline.hallucination_rate
                                     ? HeadClass::hallucinatory
                                     : HeadClass::robust);
        report.rows.push_back({mask, std::move(e)});
    }
    return report;
}

std::vector<int> rank_heads(const SweepReport& single) {
    std::vector<std::pair<double, int>> scored;
    for (std::size_t h = 0; h < single.classes.size(); ++h) {
        if (single.classes[h] != HeadClass::hallucinatory) continue;
        scored.emplace_back(single.rows[h + 1].eval.hallucination_rate, static_cast<int>(h));
    }
    std::sort(scored.begin(), scored.end());
    std::vector<int> out;
    for (auto [rate, h] : scored) out.push_back(h);
    return out;
}

std::vector<std::set<int>> default_combos(const std::vector<int>& ranking) {
    std::vector<std::set<int>> combos;
    auto push = [&](std::set<int> c) {
        if (!c.empty() && std::find(combos.begin(), combos.end(), c) == combos.end())
            combos.push_back(std::move(c));
    };
    const std::size_t top = std::min<std::size_t>(3, ranking.size());
    for (std::size_t i = 0; i < top; ++i)
        for (std::size_t j = i + 1; j < top; ++j) push({ranking[i], ranking[j]});
    if (ranking.size() == 1) push({ranking[0]});
    if (ranking.size() >= 3) push({ranking.begin(), ranking.begin() + 3});
    if (ranking.size() >= 4) push({ranking.begin(), ranking.begin() + 4});
    return combos;
}

std::vector<std::set<int>> exhaustive_combos(const std::vector<int>& heads, std::size_t max_size) {
    max_size = std::min<std::size_t>(max_size, 4);
    std::vector<int> sorted = heads;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<std::set<int>> out;
    for (std::size_t size = 1; size <= std::min(max_size, sorted.size()); ++size) {
        std::vector<char> pick(sorted.size(), 0);
        std::fill(pick.begin(), pick.begin() + static_cast<long>(size), 1);
        do {
            std::set<int> c;
            for (std::size_t i = 0; i < sorted.size(); ++i)
                if (pick[i]) c.insert(sorted[i]);
            out.push_back(std::move(c));
        } while (std::prev_permutation(pick.begin(), pick.end()));
    }
    return out;
}

SweepReport multi_head_sweep(const ModelParams& params, const EvalSuite& suite,
                             const std::vector<std::set<int>>& combos,
                             const EvalOptions& options) {
    SweepReport report;
    report.baseline = evaluate(params, HeadMask::none(), suite, options);
    report.rows.push_back({HeadMask::none(), report.baseline});
    for (const std::set<int>& combo : combos) {
        const HeadMask mask = HeadMask::broadcast(combo);
        if (mask.empty()) {
            report.rows.push_back({mask, report.baseline});
            continue;
        }
        report.rows.push_back({mask, evaluate(params, mask, suite, options)});
    }
    return report;
}

EpochSweep epoch_sweep(const ModelParams& params, const Corpus& noise_corpus,
                       const std::set<int>& heads, int max_epochs, const EvalSuite& suite,
                       const TuneConfig& base, const EvalOptions& options) {
    if (max_epochs < 1) throw ConfigError("epoch sweep needs max_epochs >= 1");
    EvalOptions opts = options;
    opts.include_other = false;
    EpochSweep sweep;
    auto row_for = [&](int epoch, const ModelParams& p) {
        const EvalReport e = evaluate(p, HeadMask::none(), suite, opts);
        return CurveRow{epoch, e.hallucination_rate, e.wer_clean, e.long_hallucinations};
    };
    sweep.rows.push_back(row_for(0, params));
    sweep.tuning = calm_tune(params, noise_corpus, heads, max_epochs, base);
    for (std::size_t e = 0; e < sweep.tuning.epoch_checkpoints.size(); ++e)
        sweep.rows.push_back(row_for(static_cast<int>(e + 1), sweep.tuning.epoch_checkpoints[e]));
    return sweep;
}

int select_epoch(const std::vector<CurveRow>& curve, double wer_budget) {
    if (curve.empty()) throw ConfigError("select_epoch: empty curve");
    const double wer0 = curve.front().wer_clean;
    int best = -1;
    double best_rate = 0.0;
    for (const CurveRow& r : curve) {
        if (r.epoch < 1 || r.wer_clean - wer0 > wer_budget) continue;
        if (best < 0 || r.hallucination_rate < best_rate) {
            best = r.epoch;
            best_rate = r.hallucination_rate;
        }
    }
    return best < 0 ? 1 : best;
}

// ---------------------------------------------------------------- output

std::string sweep_csv(const SweepReport& report) {
    std::ostringstream out;
    out << "mask,hallucination_rate,wer_clean,wer_other,long_hallucinations\n";
    for (const SweepRow& row : report.rows)
        out << '"' << row.mask.describe() << "\"," << format_real(row.eval.hallucination_rate)
            << ',' << format_real(row.eval.wer_clean) << ',' << format_real(row.eval.wer_other)
            << ',' << row.eval.long_hallucinations << '\n';
    return out.str();
}

std::string classes_csv(const SweepReport& report) {
    std::ostringstream out;
    out << "head,masked_hallucination_rate,delta_vs_baseline,class\n";
    for (std::size_t h = 0; h < report.classes.size(); ++h) {
        const double rate = report.rows[h + 1].eval.hallucination_rate;
        out << h << ',' << format_real(rate) << ','
            << format_real(rate - report.baseline.hallucination_rate) << ','
            << to_string(report.classes[h]) << '\n';
    }
    return out.str();
}

std::string curve_csv(const std::vector<CurveRow>& curve) {
    std::ostringstream out;
    out << "epoch,hallucination_rate,wer_clean,long_hallucinations\n";
    for (const CurveRow& r : curve)
        out << r.epoch << ',' << format_real(r.hallucination_rate) << ','
            << format_real(r.wer_clean) << ',' << r.long_hallucinations << '\n';
    return out.str();
}

namespace {

std::string fixed(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

std::string curve_svg(const std::vector<CurveRow>& curve) {
    const double w = 640, h = 400, left = 60, right = 20, top = 30, bottom = 50;
    const double pw = w - left - right, ph = h - top - bottom;
    const int max_epoch = curve.empty() ? 1 : std::max(1, curve.back().epoch);
    double ymax = 0.0;
    for (const CurveRow& r : curve) ymax = std::max({ymax, r.hallucination_rate, r.wer_clean});
    ymax = ymax <= 0.0 ? 1.0 : std::min(1.0, ymax * 1.1);
    auto x_of = [&](int e) { return left + pw * e / max_epoch; };
    auto y_of = [&](double v) { return top + ph * (1.0 - v / ymax); };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw
        << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
        << top + ph << "\" stroke=\"black\"/>\n";
    for (int e = 0; e <= max_epoch; ++e)
        out << "<text x=\"" << fixed(x_of(e)) << "\" y=\"" << top + ph + 18
            << "\" font-size=\"12\" text-anchor=\"middle\">" << e << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = ymax * i / 4.0;
        out << "<text x=\"" << left - 6 << "\" y=\"" << fixed(y_of(v) + 4)
            << "\" font-size=\"12\" text-anchor=\"end\">" << fixed(v) << "</text>\n";
    }
    out << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10
        << "\" font-size=\"13\" text-anchor=\"middle\">fine-tuning epoch</text>\n";

    auto series = [&](auto value, const char* color, const char* label, double ly) {
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < curve.size(); ++i)
            out << (i ? " " : "") << fixed(x_of(curve[i].epoch)) << ','
                << fixed(y_of(value(curve[i])));
        out << "\"/>\n";
        for (const CurveRow& r : curve)
            out << "<circle cx=\"" << fixed(x_of(r.epoch)) << "\" cy=\"" << fixed(y_of(value(r)))
                << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        out << "<text x=\"" << left + pw - 150 << "\" y=\"" << ly << "\" font-size=\"12\" fill=\""
            << color << "\">" << label << "</text>\n";
    };
    series([](const CurveRow& r) { return r.hallucination_rate; }, "#c0392b", "hallucination rate",
           top + 14);
    series([](const CurveRow& r) { return r.wer_clean; }, "#2471a3", "WER (clean)", top + 30);
    out << "</svg>\n";
    return out.str();
}

}  // namespace calm
