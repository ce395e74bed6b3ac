#include "calm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "calm/errors.hpp"
#include "calm/io.hpp"

namespace calm {

const char* to_string(SampleKind kind) { return kind == SampleKind::speech ? "speech" : "noise"; }

const char* to_string(NoiseFamily family) {
    switch (family) {
        case NoiseFamily::iid_gaussian: return "iid-gaussian";
        case NoiseFamily::ar1: return "ar1";
        case NoiseFamily::tonal: return "tonal";
        case NoiseFamily::impulsive: return "impulsive";
    }
    return "?";
}

NoiseFamily parse_noise_family(const std::string& name) {
    for (NoiseFamily f : {NoiseFamily::iid_gaussian, NoiseFamily::ar1, NoiseFamily::tonal,
                          NoiseFamily::impulsive})
        if (name == to_string(f)) return f;
    throw ConfigError("unknown noise family '" + name + "'");
}

// ---------------------------------------------------------------- corpus settings

void CorpusSpec::validate() const {
    if (n_speech < 0 || n_noise < 0) throw ConfigError("corpus counts must be >= 0");
    if (len_min < 1 || len_max < len_min)
        throw ConfigError("corpus token length range must satisfy 1 <= len_min <= len_max");
    if (len_max > max_tgt_len - 1)
        throw ConfigError("corpus len_max exceeds max_tgt_len - 1");
    if (frames_per_token < 1) throw ConfigError("corpus frames_per_token must be >= 1");
    if (sigma < 0.0) throw ConfigError("corpus sigma must be >= 0");
    if (amplitude < 0.0) throw ConfigError("corpus amplitude must be >= 0");
    if (ar1_rho <= -1.0 || ar1_rho >= 1.0) throw ConfigError("corpus ar1_rho must be in (-1, 1)");
    if (impulse_prob <= 0.0 || impulse_prob > 1.0)
        throw ConfigError("corpus impulse_prob must be in (0, 1]");
    if (mislabel_fraction < 0.0 || mislabel_fraction > 1.0)
        throw ConfigError("corpus mislabel_fraction must be in [0, 1]");
    if (mislabel_decay <= 0.0 || mislabel_decay > 1.0)
        throw ConfigError("corpus mislabel_decay must be in (0, 1]");
    if (n_features < 1 || n_content < 1) throw ConfigError("corpus feature/token counts must be >= 1");
}

KeyValues CorpusSpec::to_kv() const {
    return {{"seed", std::to_string(seed)},
            {"n_speech", std::to_string(n_speech)},
            {"n_noise", std::to_string(n_noise)},
            {"len_min", std::to_string(len_min)},
            {"len_max", std::to_string(len_max)},
            {"frames_per_token", std::to_string(frames_per_token)},
            {"amplitude", format_real(amplitude)},
            {"sigma", format_real(sigma)},
            {"ar1_rho", format_real(ar1_rho)},
            {"impulse_prob", format_real(impulse_prob)},
            {"mislabel_fraction", format_real(mislabel_fraction)},
            {"mislabel_decay", format_real(mislabel_decay)},
            {"signature_seed", std::to_string(signature_seed)},
            {"n_features", std::to_string(n_features)},
            {"n_content", std::to_string(n_content)},
            {"max_tgt_len", std::to_string(max_tgt_len)}};
}

CorpusSpec CorpusSpec::from_kv(const std::map<std::string, std::string>& kv) {
    CorpusSpec s;
    for (const auto& [k, v] : kv) {
        if (k == "seed") s.seed = parse_u64(k, v);
        else if (k == "n_speech") s.n_speech = parse_int(k, v);
        else if (k == "n_noise") s.n_noise = parse_int(k, v);
        else if (k == "len_min") s.len_min = parse_int(k, v);
        else if (k == "len_max") s.len_max = parse_int(k, v);
        else if (k == "frames_per_token") s.frames_per_token = parse_int(k, v);
        else if (k == "amplitude") s.amplitude = parse_real(k, v);
        else if (k == "sigma") s.sigma = parse_real(k, v);
        else if (k == "ar1_rho") s.ar1_rho = parse_real(k, v);
        else if (k == "impulse_prob") s.impulse_prob = parse_real(k, v);
        else if (k == "mislabel_fraction") s.mislabel_fraction = parse_real(k, v);
        else if (k == "mislabel_decay") s.mislabel_decay = parse_real(k, v);
        else if (k == "signature_seed") s.signature_seed = parse_u64(k, v);
        else if (k == "n_features") s.n_features = parse_int(k, v);
        else if (k == "n_content") s.n_content = parse_int(k, v);
        else if (k == "max_tgt_len") s.max_tgt_len = parse_int(k, v);
        else throw ConfigError("unknown corpus key '" + k + "'");
    }
    return s;
}

// ---------------------------------------------------------------- signatures

TokenSignatures TokenSignatures::generate(std::uint64_t seed, int n_tokens, int n_features) {
    TokenSignatures sig;
    const auto n = static_cast<std::size_t>(n_tokens);
    const auto f = static_cast<std::size_t>(n_features);
    sig.table_ = Tensor({n, f});
    Rng rng(derive_seed(seed, 0x5167));
    for (std::size_t t = 0; t < n; ++t) {
        double* row = sig.table_.data() + t * f;
        for (int attempt = 0;; ++attempt) {
            if (attempt > 10000)
                throw ConfigError("cannot place " + std::to_string(n_tokens) +
                                  " separated signatures in " + std::to_string(n_features) +
                                  " dimensions");
            double norm = 0.0;
            for (std::size_t c = 0; c < f; ++c) {
                row[c] = rng.normal();
                norm += row[c] * row[c];
            }
            norm = std::sqrt(norm);
            for (std::size_t c = 0; c < f; ++c) row[c] /= norm;
            bool ok = true;
            for (std::size_t o = 0; o < t && ok; ++o) {
                double dot = 0.0;
                for (std::size_t c = 0; c < f; ++c) dot += row[c] * sig.table_.data()[o * f + c];
                ok = dot < 0.9;
            }
            if (ok) break;
        }
    }
    return sig;
}

int TokenSignatures::nearest(const double* frame) const {
    const std::size_t f = table_.cols();
    int best = 0;
    double best_d = 0.0;
    for (std::size_t t = 0; t < table_.rows(); ++t) {
        double d = 0.0;
        for (std::size_t c = 0; c < f; ++c) {
            const double diff = frame[c] - table_.data()[t * f + c];
            d += diff * diff;
        }
        if (t == 0 || d < best_d) {
            best = static_cast<int>(t);
            best_d = d;
        }
    }
    return best;
}

// ---------------------------------------------------------------- samples

Sample gen_speech_sample(Rng& rng, const CorpusSpec& spec, const TokenSignatures& signatures) {
    const int len = static_cast<int>(rng.uniform_int(spec.len_min, spec.len_max));
    Sample s;
    s.kind = SampleKind::speech;
    s.label.resize(static_cast<std::size_t>(len));
    for (int& tok : s.label) tok = static_cast<int>(rng.uniform_int(0, spec.n_content - 1));
    const auto r = static_cast<std::size_t>(spec.frames_per_token);
    const auto f = static_cast<std::size_t>(spec.n_features);
    s.features = Tensor({r * s.label.size(), f});
    const Tensor& table = signatures.table();
    for (std::size_t i = 0; i < s.label.size(); ++i) {
        const double* sig = table.data() + static_cast<std::size_t>(s.label[i]) * f;
        for (std::size_t k = 0; k < r; ++k) {
            double* frame = s.features.data() + (i * r + k) * f;
            for (std::size_t c = 0; c < f; ++c)
                frame[c] = spec.amplitude * sig[c] + spec.sigma * rng.normal();
        }
    }
    return s;
}

Tensor gen_noise_frames(Rng& rng, const CorpusSpec& spec, NoiseFamily family, int frames) {
    const auto t_len = static_cast<std::size_t>(frames);
    const auto f = static_cast<std::size_t>(spec.n_features);
    Tensor x({t_len, f}, 0.0);
    switch (family) {
        case NoiseFamily::iid_gaussian:
            for (double& v : x.values()) v = rng.normal();
            break;
        case NoiseFamily::ar1: {
            const double rho = spec.ar1_rho;
            const double innov = std::sqrt(1.0 - rho * rho);
            for (std::size_t c = 0; c < f; ++c) x.at(0, c) = rng.normal();
            for (std::size_t t = 1; t < t_len; ++t)
                for (std::size_t c = 0; c < f; ++c)
                    x.at(t, c) = rho * x.at(t - 1, c) + innov * rng.normal();
            break;
        }
        case NoiseFamily::tonal: {
            for (int k = 0; k < 3; ++k) {
                const double omega = std::numbers::pi * (0.05 + 0.45 * rng.uniform());
                const double phase = 2.0 * std::numbers::pi * rng.uniform();
                std::vector<double> dir(f);
                for (double& d : dir) d = rng.normal();
                for (std::size_t t = 0; t < t_len; ++t) {
                    const double w = std::sin(omega * static_cast<double>(t) + phase);
                    for (std::size_t c = 0; c < f; ++c) x.at(t, c) += w * dir[c];
                }
            }
            break;
        }
        case NoiseFamily::impulsive: {
            bool any = false;
            for (double& v : x.values()) {
                if (rng.uniform() < spec.impulse_prob) {
                    v = rng.normal();
                    any = any || v != 0.0;
                }
            }
            if (!any) x[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(x.size()) - 1))] = 1.0;
            break;
        }
    }
    double ss = 0.0;
    for (double v : x.values()) ss += v * v;
    const double rms = std::sqrt(ss / static_cast<double>(x.size()));
    if (rms > 0.0)
        for (double& v : x.values()) v /= rms;
    return x;
}

Sample gen_noise_sample(Rng& rng, const CorpusSpec& spec) {
    Sample s;
    s.kind = SampleKind::noise;
    s.family = static_cast<NoiseFamily>(rng.uniform_int(0, 3));
    const int frames = static_cast<int>(rng.uniform_int(spec.frames_per_token * spec.len_min,
                                                        spec.frames_per_token * spec.len_max));
    s.features = gen_noise_frames(rng, spec, s.family, frames);
    return s;
}

namespace {

int draw_filler_token(Rng& rng, const CorpusSpec& spec) {
    double total = 0.0, w = 1.0;
    for (int k = 0; k < spec.n_content; ++k, w *= spec.mislabel_decay) total += w;
    double u = rng.uniform() * total;
    w = 1.0;
    for (int k = 0; k < spec.n_content; ++k, w *= spec.mislabel_decay) {
        if (u < w) return k;
        u -= w;
    }
    return spec.n_content - 1;
}

}  // namespace

Corpus build_corpus(const CorpusSpec& spec) {
    spec.validate();
    const TokenSignatures signatures =
        TokenSignatures::generate(spec.signature_seed, spec.n_content, spec.n_features);
    Corpus corpus;
    corpus.reserve(static_cast<std::size_t>(spec.n_speech + spec.n_noise));
    for (int i = 0; i < spec.n_speech; ++i) {
        Rng rng(derive_seed(spec.seed, 1, static_cast<std::uint64_t>(i)));
        corpus.push_back(gen_speech_sample(rng, spec, signatures));
    }
    const int n_mislabeled =
        static_cast<int>(std::lround(spec.mislabel_fraction * static_cast<double>(spec.n_noise)));
    for (int j = 0; j < spec.n_noise; ++j) {
        Rng rng(derive_seed(spec.seed, 2, static_cast<std::uint64_t>(j)));
        Sample s = gen_noise_sample(rng, spec);
        if (j < n_mislabeled) {
            s.mislabeled = true;
            s.label = {draw_filler_token(rng, spec)};
        }
        corpus.push_back(std::move(s));
    }
    Rng order(derive_seed(spec.seed, 3));
    order.shuffle(corpus);
    return corpus;
}

double nearest_signature_accuracy(const Corpus& corpus, const CorpusSpec& spec,
                                  const TokenSignatures& signatures) {
    std::size_t total = 0, hits = 0;
    const auto r = static_cast<std::size_t>(spec.frames_per_token);
    for (const Sample& s : corpus) {
        if (s.kind != SampleKind::speech) continue;
        for (std::size_t fr = 0; fr < s.features.rows(); ++fr) {
            ++total;
            if (signatures.nearest(s.features.data() + fr * s.features.cols()) == s.label[fr / r])
                ++hits;
        }
    }
    if (total == 0) throw MetricError("no speech frames to classify");
    return static_cast<double>(hits) / static_cast<double>(total);
}

// ---------------------------------------------------------------- export

void write_corpus_csv(const std::string& path, const Corpus& corpus) {
    std::ostringstream out;
    out << "index,kind,family,label\n";
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const Sample& s = corpus[i];
        out << i << ',' << to_string(s.kind) << ','
            << (s.kind == SampleKind::noise ? to_string(s.family) : "") << ','
            << join_ints(s.label, ' ') << '\n';
    }
    write_text_file(path, out.str());
}

void write_feature_sidecar(const std::string& path, const Corpus& corpus) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const Tensor& f = corpus[i].features;
        out << i << ' ' << f.rows() << 'x' << f.cols() << '\n';
        write_le_doubles(out, f.data(), f.size());
    }
    if (!out) throw IoError("write failed for " + path);
}

std::vector<Tensor> read_feature_sidecar(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("missing file " + path);
    std::vector<Tensor> out;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream hdr(line);
        std::size_t index = 0, rows = 0, cols = 0;
        char x = 0;
        if (!(hdr >> index >> rows >> x >> cols) || x != 'x' || index != out.size())
            throw IoError("malformed sidecar header '" + line + "'");
        Tensor t({rows, cols});
        read_le_doubles(in, t.data(), t.size());
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace calm
