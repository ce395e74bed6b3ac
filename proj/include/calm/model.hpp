#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "calm/autodiff.hpp"
#include "calm/io.hpp"
#include "calm/tensor.hpp"

namespace calm {


// Encoder-decoder hyperparameters. Token ids: content tokens occupy
// [0, vocab_size - 4); the last four ids are SOS, EOS, PAD, UNK.
struct ModelConfig {
    int n_enc_layers = 2;
    int n_dec_layers = 4;
    int n_heads = 8;
    int d_model = 64;
    int d_ff = 128;
    int vocab_size = 36;
    int n_features = 16;
    int max_src_len = 64;
    int max_tgt_len = 24;
    // Decoder position i is encoded at source position stride*i + offset, so
    // the sinusoidal codes of a token and of its frames coincide.
    int dec_pos_stride = 3;
    int dec_pos_offset = 1;

    int d_head() const { return d_model / n_heads; }
    int n_content() const { return vocab_size - 4; }
    int sos() const { return vocab_size - 4; }
    int eos() const { return vocab_size - 3; }
    int pad() const { return vocab_size - 2; }
    int unk() const { return vocab_size - 1; }
    bool is_content(int id) const { return id >= 0 && id < n_content(); }

    void validate() const;
    KeyValues to_kv() const;
    // Missing keys keep defaults; unknown keys and malformed values throw ConfigError.
    static ModelConfig from_kv(const std::map<std::string, std::string>& kv);

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Index of every parameter tensor in canonical order.
struct AttentionSlots {
    std::size_t w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
};

struct EncoderLayerSlots {
    std::size_t ln1_g, ln1_b;
    AttentionSlots self_attn;
    std::size_t ln2_g, ln2_b;
    std::size_t ff_w1, ff_b1, ff_w2, ff_b2;
};

struct DecoderLayerSlots {
    std::size_t ln1_g, ln1_b;
    AttentionSlots self_attn;
    std::size_t ln2_g, ln2_b;
    AttentionSlots cross_attn;
    std::size_t ln3_g, ln3_b;
    std::size_t ff_w1, ff_b1, ff_w2, ff_b2;
};

struct ModelLayout {
    ModelConfig config;
    std::size_t in_w, in_b;
    std::vector<EncoderLayerSlots> enc;
    std::size_t enc_ln_g, enc_ln_b;
    std::size_t embed;
    std::vector<DecoderLayerSlots> dec;
    std::size_t dec_ln_g, dec_ln_b;
    std::size_t out_w, out_b;

    std::vector<std::string> names;
    std::vector<Shape> shapes;
};

ModelLayout make_layout(const ModelConfig& config);

// Named parameter tensors in canonical order.
//
// Attention weights: W_Q, W_K, W_V are [d_model(out) x d_model(in)] and
// applied as x W^T + b; W_O is [d_model(concat in) x d_model(out)] and
// applied as h W_O + b_O. Head h therefore owns rows
// [h*d_head, (h+1)*d_head) of all four matrices and the same slices of
// b_Q, b_K, b_V.
class ModelParams {
public:
    ModelParams() = default;
    explicit ModelParams(const ModelConfig& config);  // zero-filled

    const ModelConfig& config() const { return config_; }
    const ModelLayout& layout() const { return layout_; }

    std::size_t count() const { return tensors_.size(); }
    const std::string& name(std::size_t i) const { return layout_.names[i]; }
    std::size_t index(const std::string& name) const;

    Tensor& operator[](std::size_t i) { return tensors_[i]; }
    const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
    Tensor& at(const std::string& name) { return tensors_[index(name)]; }
    const Tensor& at(const std::string& name) const { return tensors_[index(name)]; }

    std::vector<Tensor>& tensors() { return tensors_; }
    const std::vector<Tensor>& tensors() const { return tensors_; }

    std::size_t total_size() const;

    friend bool operator==(const ModelParams& a, const ModelParams& b) {
        return a.config_ == b.config_ && a.tensors_ == b.tensors_;
    }

private:
    ModelConfig config_;
    ModelLayout layout_;
    std::map<std::string, std::size_t> by_name_;
    std::vector<Tensor> tensors_;
};

// Decoder self-attention heads disabled at inference. Broadcast mode
// names head positions applied in every decoder layer; explicit mode names
// (layer, head) pairs.
class HeadMask {
public:
    enum class Mode { broadcast, explicit_pairs };

    HeadMask() = default;
    static HeadMask none() { return {}; }
    static HeadMask broadcast(std::set<int> heads);
    static HeadMask explicit_pairs(std::set<std::pair<int, int>> pairs);
    // "" -> none; "1,6,11" -> broadcast.
    static HeadMask parse(const std::string& text);

    Mode mode() const { return mode_; }
    const std::set<int>& heads() const { return heads_; }
    const std::set<std::pair<int, int>>& pairs() const { return pairs_; }

    bool empty() const { return heads_.empty() && pairs_.empty(); }
    bool masked(int layer, int head) const;
    // Throws ConfigError naming the offending index.
    void validate(const ModelConfig& config) const;
    // "none", "1,6,11", or "L0H1,L2H3".
    std::string describe() const;

    friend bool operator==(const HeadMask&, const HeadMask&) = default;

private:
    Mode mode_ = Mode::broadcast;
    std::set<int> heads_;
    std::set<std::pair<int, int>> pairs_;
};

// Content tokens only; SOS/EOS never appear.
struct Transcript {
    std::vector<int> tokens;
    std::size_t length() const { return tokens.size(); }
    bool empty() const { return tokens.empty(); }
    friend bool operator==(const Transcript&, const Transcript&) = default;
};

// Weights ~ N(0, 0.02^2) drawn by calm::Rng(seed).normal() sequentially over
// tensors in canonical order, row-major; biases 0; layer-norm gains 1.
ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

// Sinusoidal position code, PE[p, 2i] = sin(q / 10000^(2i/d)),
// PE[p, 2i+1] = cos(same), at q = stride * p + offset.
Tensor positional_encoding(std::size_t length, std::size_t d_model, std::size_t stride = 1,
                           std::size_t offset = 0);

// Intermediate values captured per decoder layer.
struct ForwardTrace {
    std::vector<Tensor> self_attn_in;    // residual stream entering the block
    std::vector<Tensor> self_attn_out;   // residual stream after it
    std::vector<Tensor> cross_attn_out;  // cross-attention sublayer output (pre-residual)
    std::vector<Tensor> cross_keys;      // cross-attention K from the encoder
    std::vector<Tensor> cross_values;
};

// One external leaf per tensor, canonical order.
std::vector<Var> bind_params(Tape& tape, const ModelParams& params, bool requires_grad);

// Taped pieces, shared by training, gradient checks and inference.
// `params` are one Var per tensor in canonical order.
Var encode(Tape& tape, const ModelLayout& layout, std::span<const Var> params,
           const Tensor& features);

struct CrossKV {
    std::vector<Var> keys, values;
};
CrossKV cross_kv(Tape& tape, const ModelLayout& layout, std::span<const Var> params,
                 Var encoded);

Var decoder_logits(Tape& tape, const ModelLayout& layout, std::span<const Var> params,
                   const CrossKV& memory, std::span<const int> dec_input,
                   const HeadMask& mask, ForwardTrace* trace = nullptr);

// Multi-head attention over already projected keys/values. Heads flagged
// in `masked_heads` contribute zeros before the output projection.
Var attention(Tape& tape, const ModelLayout& layout, const AttentionSlots& slots,
              std::span<const Var> params, Var queries_in, Var keys, Var values, bool causal,
              const std::vector<bool>& masked_heads);

// Decoder input [SOS] ++ target, prediction target target ++ [EOS].
std::vector<int> decoder_input(const ModelConfig& config, std::span<const int> target);
std::vector<int> decoder_target(const ModelConfig& config, std::span<const int> target);

void check_lengths(const ModelConfig& config, const Tensor& features, std::size_t target_len);

Var teacher_forced_loss(Tape& tape, const ModelLayout& layout, std::span<const Var> params,
                        const Tensor& features, std::span<const int> target,
                        const HeadMask& mask);

struct ForwardResult {
    Tensor logits;  // [len(target)+1, vocab]
    double loss = 0.0;
};

ForwardResult forward_teacher_forced(const ModelParams& params, const Tensor& features,
                                     std::span<const int> target, const HeadMask& mask,
                                     ForwardTrace* trace = nullptr);

// Greedy argmax decoding from SOS until EOS or max_len content tokens
// (capped by max_tgt_len - 1). The argmax runs over content tokens and EOS
// only; ties go to the lowest id.
Transcript greedy_decode(const ModelParams& params, const Tensor& features,
                         const HeadMask& mask, int max_len);

// Deep copy with masked heads' W_Q/W_K/W_V rows, bias slices and W_O rows
// zeroed in decoder self-attention.
ModelParams apply_head_mask(const ModelParams& params, const HeadMask& mask);

// Checkpoint container: text header of key=value lines, then per tensor a
// "<name> <shape>" line followed by little-endian float64 values.
void write_checkpoint(std::ostream& out, const ModelParams& params);
ModelParams read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);
// FNV-1a 64 of the serialized checkpoint, as 16 hex digits.
std::string checkpoint_id(const ModelParams& params);

}  // namespace calm
