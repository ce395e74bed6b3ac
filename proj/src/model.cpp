#include "calm/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "calm/io.hpp"
#include "calm/rng.hpp"

namespace calm {

// ---------------------------------------------------------------- config

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw ConfigError(std::string("model.") + name + " must be positive");
    };
    positive(n_enc_layers, "n_enc_layers");
    positive(n_dec_layers, "n_dec_layers");
    positive(n_heads, "n_heads");
    positive(d_model, "d_model");
    positive(d_ff, "d_ff");
    positive(n_features, "n_features");
    positive(max_src_len, "max_src_len");
    if (max_tgt_len < 2) throw ConfigError("model.max_tgt_len must be at least 2");
    if (d_model % n_heads != 0)
        throw ConfigError("model.d_model (" + std::to_string(d_model) +
                          ") not divisible by model.n_heads (" + std::to_string(n_heads) + ")");
    if (dec_pos_stride < 1 || dec_pos_offset < 0)
        throw ConfigError("model.dec_pos_stride must be >= 1 and model.dec_pos_offset >= 0");
    if (vocab_size < 5) throw ConfigError("model.vocab_size must leave at least one content token");
}

KeyValues ModelConfig::to_kv() const {
    return {{"n_enc_layers", std::to_string(n_enc_layers)},
            {"n_dec_layers", std::to_string(n_dec_layers)},
            {"n_heads", std::to_string(n_heads)},
            {"d_model", std::to_string(d_model)},
            {"d_ff", std::to_string(d_ff)},
            {"vocab_size", std::to_string(vocab_size)},
            {"n_features", std::to_string(n_features)},
            {"max_src_len", std::to_string(max_src_len)},
            {"max_tgt_len", std::to_string(max_tgt_len)},
            {"dec_pos_stride", std::to_string(dec_pos_stride)},
            {"dec_pos_offset", std::to_string(dec_pos_offset)}};
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    auto read = [&](const char* key, int& field) {
        auto it = kv.find(key);
        if (it == kv.end()) return;
        std::size_t pos = 0;
        try {
            field = std::stoi(it->second, &pos);
        } catch (const std::exception&) {
            pos = std::string::npos;
        }
        if (pos != it->second.size())
            throw ConfigError(std::string("malformed integer for ") + key + ": '" + it->second +
                              "'");
    };
    read("n_enc_layers", c.n_enc_layers);
    read("n_dec_layers", c.n_dec_layers);
    read("n_heads", c.n_heads);
    read("d_model", c.d_model);
    read("d_ff", c.d_ff);
    read("vocab_size", c.vocab_size);
    read("n_features", c.n_features);
    read("max_src_len", c.max_src_len);
    read("max_tgt_len", c.max_tgt_len);
    read("dec_pos_stride", c.dec_pos_stride);
    read("dec_pos_offset", c.dec_pos_offset);
    const KeyValues known = c.to_kv();
    for (const auto& [key, value] : kv)
        if (std::none_of(known.begin(), known.end(), [&](const auto& e) { return e.first == key; }))
            throw ConfigError("unknown model key '" + key + "'");
    return c;
}

// ---------------------------------------------------------------- layout

namespace {

class LayoutBuilder {
public:
    explicit LayoutBuilder(ModelLayout& layout) : layout_(layout) {}

    std::size_t add(std::string name, Shape shape) {
        layout_.names.push_back(std::move(name));
        layout_.shapes.push_back(std::move(shape));
        return layout_.names.size() - 1;
    }

    AttentionSlots attention(const std::string& prefix, std::size_t d) {
        AttentionSlots s{};
        s.w_q = add(prefix + ".W_Q", {d, d});
        s.b_q = add(prefix + ".b_Q", {d});
        s.w_k = add(prefix + ".W_K", {d, d});
        s.b_k = add(prefix + ".b_K", {d});
        s.w_v = add(prefix + ".W_V", {d, d});
        s.b_v = add(prefix + ".b_V", {d});
        s.w_o = add(prefix + ".W_O", {d, d});
        s.b_o = add(prefix + ".b_O", {d});
        return s;
    }

private:
    ModelLayout& layout_;
};

bool is_gain(const std::string& name) {
    return name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0;
}

bool is_weight(const Shape& shape) { return shape.size() == 2; }

}  // namespace

ModelLayout make_layout(const ModelConfig& config) {
    config.validate();
    ModelLayout L;
    L.config = config;
    LayoutBuilder b(L);
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto ff = static_cast<std::size_t>(config.d_ff);
    const auto v = static_cast<std::size_t>(config.vocab_size);
    const auto f = static_cast<std::size_t>(config.n_features);

    L.in_w = b.add("enc.in_proj.W", {d, f});
    L.in_b = b.add("enc.in_proj.b", {d});
    for (int l = 0; l < config.n_enc_layers; ++l) {
        const std::string p = "enc." + std::to_string(l);
        EncoderLayerSlots s{};
        s.ln1_g = b.add(p + ".ln1.g", {d});
        s.ln1_b = b.add(p + ".ln1.b", {d});
        s.self_attn = b.attention(p + ".self_attn", d);
        s.ln2_g = b.add(p + ".ln2.g", {d});
        s.ln2_b = b.add(p + ".ln2.b", {d});
        s.ff_w1 = b.add(p + ".ffn.W1", {ff, d});
        s.ff_b1 = b.add(p + ".ffn.b1", {ff});
        s.ff_w2 = b.add(p + ".ffn.W2", {d, ff});
        s.ff_b2 = b.add(p + ".ffn.b2", {d});
        L.enc.push_back(s);
    }
    L.enc_ln_g = b.add("enc.ln_post.g", {d});
    L.enc_ln_b = b.add("enc.ln_post.b", {d});
    L.embed = b.add("dec.embed", {v, d});
    for (int l = 0; l < config.n_dec_layers; ++l) {
        const std::string p = "dec." + std::to_string(l);
        DecoderLayerSlots s{};
        s.ln1_g = b.add(p + ".ln1.g", {d});
        s.ln1_b = b.add(p + ".ln1.b", {d});
        s.self_attn = b.attention(p + ".self_attn", d);
        s.ln2_g = b.add(p + ".ln2.g", {d});
        s.ln2_b = b.add(p + ".ln2.b", {d});
        s.cross_attn = b.attention(p + ".cross_attn", d);
        s.ln3_g = b.add(p + ".ln3.g", {d});
        s.ln3_b = b.add(p + ".ln3.b", {d});
        s.ff_w1 = b.add(p + ".ffn.W1", {ff, d});
        s.ff_b1 = b.add(p + ".ffn.b1", {ff});
        s.ff_w2 = b.add(p + ".ffn.W2", {d, ff});
        s.ff_b2 = b.add(p + ".ffn.b2", {d});
        L.dec.push_back(s);
    }
    L.dec_ln_g = b.add("dec.ln_final.g", {d});
    L.dec_ln_b = b.add("dec.ln_final.b", {d});
    L.out_w = b.add("dec.out_proj.W", {v, d});
    L.out_b = b.add("dec.out_proj.b", {v});
    return L;
}

// ---------------------------------------------------------------- params

ModelParams::ModelParams(const ModelConfig& config)
    : config_(config), layout_(make_layout(config)) {
    tensors_.reserve(layout_.names.size());
    for (std::size_t i = 0; i < layout_.names.size(); ++i) {
        by_name_.emplace(layout_.names[i], i);
        tensors_.emplace_back(layout_.shapes[i], 0.0);
    }
}

std::size_t ModelParams::index(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw IndexError("unknown parameter '" + name + "'");
    return it->second;
}

std::size_t ModelParams::total_size() const {
    std::size_t n = 0;
    for (const Tensor& t : tensors_) n += t.size();
    return n;
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
    ModelParams params(config);
    Rng rng(seed);
    for (std::size_t i = 0; i < params.count(); ++i) {
        Tensor& t = params[i];
        if (is_weight(t.shape())) {
            for (double& v : t.values()) v = rng.normal(0.0, 0.02);
        } else if (is_gain(params.name(i))) {
            std::fill(t.values().begin(), t.values().end(), 1.0);
        }
    }
    return params;
}

// ---------------------------------------------------------------- head mask

HeadMask HeadMask::broadcast(std::set<int> heads) {
    HeadMask m;
    m.mode_ = Mode::broadcast;
    m.heads_ = std::move(heads);
    return m;
}

HeadMask HeadMask::explicit_pairs(std::set<std::pair<int, int>> pairs) {
    HeadMask m;
    m.mode_ = Mode::explicit_pairs;
    m.pairs_ = std::move(pairs);
    return m;
}

HeadMask HeadMask::parse(const std::string& text) {
    std::set<int> heads;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
        if (item.empty()) continue;
        std::size_t pos = 0;
        int h = 0;
        try {
            h = std::stoi(item, &pos);
        } catch (const std::exception&) {
            pos = std::string::npos;
        }
        if (pos != item.size()) throw ConfigError("malformed head index '" + item + "'");
        heads.insert(h);
    }
    return broadcast(std::move(heads));
}

bool HeadMask::masked(int layer, int head) const {
    if (mode_ == Mode::broadcast) return heads_.count(head) != 0;
    return pairs_.count({layer, head}) != 0;
}

void HeadMask::validate(const ModelConfig& config) const {
    for (int h : heads_)
        if (h < 0 || h >= config.n_heads)
            throw HeadIndexError("head index " + std::to_string(h) + " out of range [0," +
                                 std::to_string(config.n_heads) + ")");
    for (auto [l, h] : pairs_) {
        if (l < 0 || l >= config.n_dec_layers)
            throw ConfigError("decoder layer " + std::to_string(l) + " out of range [0," +
                              std::to_string(config.n_dec_layers) + ")");
        if (h < 0 || h >= config.n_heads)
            throw HeadIndexError("head index " + std::to_string(h) + " out of range [0," +
                                 std::to_string(config.n_heads) + ")");
    }
}

std::string HeadMask::describe() const {
    if (empty()) return "none";
    std::string out;
    if (mode_ == Mode::broadcast) {
        for (int h : heads_) out += (out.empty() ? "" : ",") + std::to_string(h);
    } else {
        for (auto [l, h] : pairs_)
            out += (out.empty() ? "L" : ",L") + std::to_string(l) + "H" + std::to_string(h);
    }
    return out;
}

// ---------------------------------------------------------------- forward

Tensor positional_encoding(std::size_t length, std::size_t d_model, std::size_t stride,
                           std::size_t offset) {
    Tensor pe({length, d_model});
    for (std::size_t p = 0; p < length; ++p) {
        for (std::size_t i = 0; i < d_model; i += 2) {
            const double angle =
                static_cast<double>(stride * p + offset) /
                std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
            pe.at(p, i) = std::sin(angle);
            if (i + 1 < d_model) pe.at(p, i + 1) = std::cos(angle);
        }
    }
    return pe;
}

std::vector<Var> bind_params(Tape& tape, const ModelParams& params, bool requires_grad) {
    std::vector<Var> vars;
    vars.reserve(params.count());
    for (const Tensor& t : params.tensors()) vars.push_back(tape.external(t, requires_grad));
    return vars;
}

namespace {

Var feed_forward(Var x, std::span<const Var> p, std::size_t w1, std::size_t b1,
                 std::size_t w2, std::size_t b2) {
    return linear(gelu(linear(x, p[w1], p[b1])), p[w2], p[b2]);
}

}  // namespace

Var attention(Tape& tape, const ModelLayout& layout, const AttentionSlots& slots,
              std::span<const Var> p, Var queries_in, Var keys, Var values, bool causal,
              const std::vector<bool>& masked_heads) {
    const ModelConfig& c = layout.config;
    const auto dh = static_cast<std::size_t>(c.d_head());
    const std::size_t lq = queries_in.value().rows();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(c.n_heads));
    bool any_live = false;
    for (int h = 0; h < c.n_heads; ++h) any_live = any_live || !masked_heads[h];
    Var queries = any_live ? linear(queries_in, p[slots.w_q], p[slots.b_q]) : Var{};
    for (int h = 0; h < c.n_heads; ++h) {
        if (masked_heads[h]) {
            heads.push_back(tape.constant(Tensor({lq, dh}, 0.0)));
            continue;
        }
        const std::size_t lo = static_cast<std::size_t>(h) * dh;
        Var qh = slice_cols(queries, lo, lo + dh);
        Var kh = slice_cols(keys, lo, lo + dh);
        Var vh = slice_cols(values, lo, lo + dh);
        Var scores = scale(matmul_nt(qh, kh), inv_sqrt);
        Var weights = causal ? causal_softmax(scores) : softmax_lastdim(scores);
        heads.push_back(matmul(weights, vh));
    }
    Var concat = concat_cols(heads);
    return add_row(matmul(concat, p[slots.w_o]), p[slots.b_o]);
}

void check_lengths(const ModelConfig& config, const Tensor& features, std::size_t target_len) {
    if (features.shape().size() != 2 ||
        features.cols() != static_cast<std::size_t>(config.n_features))
        throw DimensionError("features must be [T x " + std::to_string(config.n_features) +
                             "], got " + shape_str(features.shape()));
    if (features.rows() > static_cast<std::size_t>(config.max_src_len))
        throw LengthError("source length " + std::to_string(features.rows()) +
                          " exceeds max_src_len " + std::to_string(config.max_src_len));
    if (target_len + 1 > static_cast<std::size_t>(config.max_tgt_len))
        throw LengthError("target length " + std::to_string(target_len) +
                          " exceeds max_tgt_len - 1 = " + std::to_string(config.max_tgt_len - 1));
}

Var encode(Tape& tape, const ModelLayout& layout, std::span<const Var> p,
           const Tensor& features) {
    const ModelConfig& c = layout.config;
    check_lengths(c, features, 0);
    const std::size_t t = features.rows();
    const std::vector<bool> no_mask(static_cast<std::size_t>(c.n_heads), false);

    Var h = linear(tape.constant(features), p[layout.in_w], p[layout.in_b]);
    h = add(h, tape.constant(positional_encoding(t, static_cast<std::size_t>(c.d_model))));
    for (const EncoderLayerSlots& s : layout.enc) {
        Var x = layer_norm(h, p[s.ln1_g], p[s.ln1_b]);
        Var k = linear(x, p[s.self_attn.w_k], p[s.self_attn.b_k]);
        Var v = linear(x, p[s.self_attn.w_v], p[s.self_attn.b_v]);
        h = add(h, attention(tape, layout, s.self_attn, p, x, k, v, false, no_mask));
        Var x2 = layer_norm(h, p[s.ln2_g], p[s.ln2_b]);
        h = add(h, feed_forward(x2, p, s.ff_w1, s.ff_b1, s.ff_w2, s.ff_b2));
    }
    return layer_norm(h, p[layout.enc_ln_g], p[layout.enc_ln_b]);
}

CrossKV cross_kv(Tape&, const ModelLayout& layout, std::span<const Var> p, Var encoded) {
    CrossKV kv;
    for (const DecoderLayerSlots& s : layout.dec) {
        kv.keys.push_back(linear(encoded, p[s.cross_attn.w_k], p[s.cross_attn.b_k]));
        kv.values.push_back(linear(encoded, p[s.cross_attn.w_v], p[s.cross_attn.b_v]));
    }
    return kv;
}

Var decoder_logits(Tape& tape, const ModelLayout& layout, std::span<const Var> p,
                   const CrossKV& memory, std::span<const int> dec_input, const HeadMask& mask,
                   ForwardTrace* trace) {
    const ModelConfig& c = layout.config;
    const std::size_t len = dec_input.size();
    const std::vector<bool> no_mask(static_cast<std::size_t>(c.n_heads), false);

    Var y = embedding(p[layout.embed], dec_input);
    y = add(y, tape.constant(positional_encoding(len, static_cast<std::size_t>(c.d_model),
                                                 static_cast<std::size_t>(c.dec_pos_stride),
                                                 static_cast<std::size_t>(c.dec_pos_offset))));
    for (std::size_t l = 0; l < layout.dec.size(); ++l) {
        const DecoderLayerSlots& s = layout.dec[l];
        std::vector<bool> masked(static_cast<std::size_t>(c.n_heads));
        for (int h = 0; h < c.n_heads; ++h) masked[h] = mask.masked(static_cast<int>(l), h);

        if (trace) trace->self_attn_in.push_back(y.value());
        Var x = layer_norm(y, p[s.ln1_g], p[s.ln1_b]);
        Var k = linear(x, p[s.self_attn.w_k], p[s.self_attn.b_k]);
        Var v = linear(x, p[s.self_attn.w_v], p[s.self_attn.b_v]);
        y = add(y, attention(tape, layout, s.self_attn, p, x, k, v, true, masked));
        if (trace) trace->self_attn_out.push_back(y.value());

        Var x2 = layer_norm(y, p[s.ln2_g], p[s.ln2_b]);
        Var cross = attention(tape, layout, s.cross_attn, p, x2, memory.keys[l],
                              memory.values[l], false, no_mask);
        if (trace) {
            trace->cross_attn_out.push_back(cross.value());
            trace->cross_keys.push_back(memory.keys[l].value());
            trace->cross_values.push_back(memory.values[l].value());
        }
        y = add(y, cross);

        Var x3 = layer_norm(y, p[s.ln3_g], p[s.ln3_b]);
        y = add(y, feed_forward(x3, p, s.ff_w1, s.ff_b1, s.ff_w2, s.ff_b2));
    }
    Var out = layer_norm(y, p[layout.dec_ln_g], p[layout.dec_ln_b]);
    return linear(out, p[layout.out_w], p[layout.out_b]);
}

std::vector<int> decoder_input(const ModelConfig& config, std::span<const int> target) {
    std::vector<int> in;
    in.reserve(target.size() + 1);
    in.push_back(config.sos());
    in.insert(in.end(), target.begin(), target.end());
    return in;
}

std::vector<int> decoder_target(const ModelConfig& config, std::span<const int> target) {
    std::vector<int> out(target.begin(), target.end());
    out.push_back(config.eos());
    return out;
}

Var teacher_forced_loss(Tape& tape, const ModelLayout& layout, std::span<const Var> p,
                        const Tensor& features, std::span<const int> target,
                        const HeadMask& mask) {
    check_lengths(layout.config, features, target.size());
    Var enc = encode(tape, layout, p, features);
    CrossKV memory = cross_kv(tape, layout, p, enc);
    const std::vector<int> in = decoder_input(layout.config, target);
    const std::vector<int> out = decoder_target(layout.config, target);
    Var logits = decoder_logits(tape, layout, p, memory, in, mask);
    return cross_entropy_logits(logits, out);
}

ForwardResult forward_teacher_forced(const ModelParams& params, const Tensor& features,
                                     std::span<const int> target, const HeadMask& mask,
                                     ForwardTrace* trace) {
    const ModelLayout& layout = params.layout();
    mask.validate(params.config());
    check_lengths(params.config(), features, target.size());
    Tape tape(false);
    const std::vector<Var> p = bind_params(tape, params, false);
    Var enc = encode(tape, layout, p, features);
    CrossKV memory = cross_kv(tape, layout, p, enc);
    const std::vector<int> in = decoder_input(params.config(), target);
    const std::vector<int> out = decoder_target(params.config(), target);
    Var logits = decoder_logits(tape, layout, p, memory, in, mask, trace);
    Var loss = cross_entropy_logits(logits, out);
    return {logits.value(), loss.value()[0]};
}

Transcript greedy_decode(const ModelParams& params, const Tensor& features,
                         const HeadMask& mask, int max_len) {
    const ModelConfig& c = params.config();
    const ModelLayout& layout = params.layout();
    mask.validate(c);
    check_lengths(c, features, 0);
    const int limit = std::min(max_len, c.max_tgt_len - 1);

    Tape tape(false);
    const std::vector<Var> p = bind_params(tape, params, false);
    Var enc = encode(tape, layout, p, features);
    CrossKV memory = cross_kv(tape, layout, p, enc);

    Transcript out;
    std::vector<int> prefix{c.sos()};
    while (static_cast<int>(out.tokens.size()) < limit) {
        Var logits = decoder_logits(tape, layout, p, memory, prefix, mask);
        const Tensor& L = logits.value();
        const double* row = L.data() + (L.rows() - 1) * L.cols();
        int best = c.eos();
        double best_v = row[c.eos()];
        for (int id = 0; id < c.n_content(); ++id) {
            if (row[id] > best_v || (row[id] == best_v && id < best)) {
                best = id;
                best_v = row[id];
            }
        }
        if (best == c.eos()) break;
        out.tokens.push_back(best);
        prefix.push_back(best);
    }
    return out;
}

ModelParams apply_head_mask(const ModelParams& params, const HeadMask& mask) {
    const ModelConfig& c = params.config();
    mask.validate(c);
    ModelParams out = params;
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto dh = static_cast<std::size_t>(c.d_head());
    for (std::size_t l = 0; l < out.layout().dec.size(); ++l) {
        const AttentionSlots& s = out.layout().dec[l].self_attn;
        for (int h = 0; h < c.n_heads; ++h) {
            if (!mask.masked(static_cast<int>(l), h)) continue;
            const std::size_t lo = static_cast<std::size_t>(h) * dh;
            for (std::size_t w : {s.w_q, s.w_k, s.w_v, s.w_o}) {
                double* data = out[w].data();
                std::fill(data + lo * d, data + (lo + dh) * d, 0.0);
            }
            for (std::size_t b : {s.b_q, s.b_k, s.b_v}) {
                double* data = out[b].data();
                std::fill(data + lo, data + lo + dh, 0.0);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr const char* kMagic = "calm-checkpoint 1";

std::string shape_token(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ModelParams& params) {
    out << kMagic << '\n';
    for (const auto& [k, v] : params.config().to_kv()) out << k << '=' << v << '\n';
    out << "tensors=" << params.count() << '\n';
    for (std::size_t i = 0; i < params.count(); ++i) {
        out << params.name(i) << ' ' << shape_token(params[i].shape()) << '\n';
        write_le_doubles(out, params[i].data(), params[i].size());
    }
}

ModelParams read_checkpoint(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kMagic) throw IoError("not a calm checkpoint");
    std::map<std::string, std::string> kv;
    std::size_t n_tensors = 0;
    while (true) {
        if (!std::getline(in, line)) throw IoError("checkpoint header truncated");
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("malformed checkpoint header line '" + line + "'");
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "tensors") {
            n_tensors = std::stoul(value);
            break;
        }
        kv[key] = value;
    }
    ModelParams params(ModelConfig::from_kv(kv));
    if (n_tensors != params.count())
        throw IoError("checkpoint holds " + std::to_string(n_tensors) + " tensors, config needs " +
                      std::to_string(params.count()));
    for (std::size_t i = 0; i < params.count(); ++i) {
        if (!std::getline(in, line)) throw IoError("checkpoint truncated");
        const std::string expect = params.name(i) + ' ' + shape_token(params[i].shape());
        if (line != expect)
            throw IoError("checkpoint entry '" + line + "' where '" + expect + "' expected");
        read_le_doubles(in, params[i].data(), params[i].size());
    }
    return params;
}

void save_checkpoint(const std::string& path, const ModelParams& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write_checkpoint(out, params);
    if (!out) throw IoError("write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("missing checkpoint file " + path);
    return read_checkpoint(in);
}

std::string checkpoint_id(const ModelParams& params) {
    std::ostringstream ss;
    write_checkpoint(ss, params);
    return fnv1a_hex(ss.str());
}

}  // namespace calm
