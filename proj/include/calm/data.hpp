#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "calm/model.hpp"
#include "calm/rng.hpp"
#include "calm/tensor.hpp"

namespace calm {

enum class SampleKind { speech, noise };
enum class NoiseFamily { iid_gaussian, ar1, tonal, impulsive };

const char* to_string(SampleKind kind);
const char* to_string(NoiseFamily family);
NoiseFamily parse_noise_family(const std::string& name);

struct Sample {
    Tensor features;         // [T x F]
    std::vector<int> label;  // content-token ids
    SampleKind kind = SampleKind::speech;
    NoiseFamily family = NoiseFamily::iid_gaussian;  // meaningful for noise only
    // Noise sample carrying a random one-token label (base-training
    // contamination); every other noise sample has an empty label.
    bool mislabeled = false;

    friend bool operator==(const Sample&, const Sample&) = default;
};

using Corpus = std::vector<Sample>;

struct CorpusSpec {
    std::uint64_t seed = 0;
    int n_speech = 0;
    int n_noise = 0;
    int len_min = 3;
    int len_max = 10;
    int frames_per_token = 3;
    double amplitude = 1.0;
    double sigma = 0.1;
    double ar1_rho = 0.9;
    double impulse_prob = 0.05;
    // Fraction of noise samples (rounded to a count) given a one-token label
    // drawn from P(k) proportional to mislabel_decay^k over content tokens.
    double mislabel_fraction = 0.0;
    double mislabel_decay = 0.5;
    // Shared by every corpus of an experiment so train and eval frames
    // agree on what each token looks like.
    std::uint64_t signature_seed = 1;
    int n_features = 16;
    int n_content = 32;
    int max_tgt_len = 24;

    void validate() const;
    KeyValues to_kv() const;
    static CorpusSpec from_kv(const std::map<std::string, std::string>& kv);

    friend bool operator==(const CorpusSpec&, const CorpusSpec&) = default;
};

// One unit-norm signature row per content token. Rows are drawn from
// N(0, I) and normalised; a row whose dot product with an earlier row
// reaches 0.9 is redrawn from the same stream.
class TokenSignatures {
public:
    static TokenSignatures generate(std::uint64_t seed, int n_tokens, int n_features);

    const Tensor& table() const { return table_; }
    int n_tokens() const { return static_cast<int>(table_.rows()); }
    // Token whose signature is closest (Euclidean) to `frame`; ties to the
    // lowest id.
    int nearest(const double* frame) const;

private:
    Tensor table_;
};

Sample gen_speech_sample(Rng& rng, const CorpusSpec& spec, const TokenSignatures& signatures);
Sample gen_noise_sample(Rng& rng, const CorpusSpec& spec);
// Frames of one family scaled to unit RMS over all entries.
Tensor gen_noise_frames(Rng& rng, const CorpusSpec& spec, NoiseFamily family, int frames);

// Speech sample i draws from stream derive_seed(seed, 1, i), noise sample j
// from derive_seed(seed, 2, j); the first round(mislabel_fraction*n_noise)
// noise samples are mislabeled; the final order is a shuffle seeded by
// derive_seed(seed, 3).
Corpus build_corpus(const CorpusSpec& spec);

// Frame-level nearest-signature accuracy of speech samples against their
// labels (each token spans frames_per_token frames).
double nearest_signature_accuracy(const Corpus& corpus, const CorpusSpec& spec,
                                  const TokenSignatures& signatures);

// index,kind,family,label rows; label tokens space-separated.
void write_corpus_csv(const std::string& path, const Corpus& corpus);
// Per sample "<index> <T>x<F>" line then little-endian float64 values.
void write_feature_sidecar(const std::string& path, const Corpus& corpus);
std::vector<Tensor> read_feature_sidecar(const std::string& path);

}  // namespace calm
