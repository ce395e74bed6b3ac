#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "calm/gradcheck.hpp"
#include "calm/model.hpp"
#include "testing.hpp"

using namespace calm;
using calm::testing::random_features;
using calm::testing::random_model;
using calm::testing::small_config;
using calm::testing::tiny_config;

namespace {

std::size_t closed_form_count(const ModelConfig& c) {
    const std::size_t d = c.d_model, ff = c.d_ff, v = c.vocab_size, f = c.n_features;
    const std::size_t ln = 2 * d;
    const std::size_t attn = 4 * d * d + 4 * d;
    const std::size_t ffn = d * ff + ff + ff * d + d;
    const std::size_t enc_layer = 2 * ln + attn + ffn;
    const std::size_t dec_layer = 3 * ln + 2 * attn + ffn;
    return (f * d + d) + c.n_enc_layers * enc_layer + ln + v * d + c.n_dec_layers * dec_layer +
           ln + (v * d + v);
}

std::vector<int> random_target(const ModelConfig& c, std::size_t len, Rng& rng) {
    std::vector<int> t;
    for (std::size_t i = 0; i < len; ++i) t.push_back(static_cast<int>(rng.uniform_int(0, c.n_content() - 1)));
    return t;
}

Tensor self_attn_b_o_rows(const ModelParams& p, std::size_t layer, std::size_t rows) {
    const Tensor& b = p[p.layout().dec[layer].self_attn.b_o];
    Tensor out({rows, b.size()});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < b.size(); ++c) out.at(r, c) = b[c];
    return out;
}

}  // namespace

TEST(ModelConfig, Validation) {
    ModelConfig c;
    EXPECT_NO_THROW(c.validate());
    c.d_model = 60;
    EXPECT_THROW(c.validate(), ConfigError);
    ModelConfig d;
    EXPECT_NE(d.sos(), d.eos());
    EXPECT_NE(d.eos(), d.pad());
    EXPECT_EQ(d.n_content(), 32);
}

TEST(ModelConfig, KeyValueRoundTrip) {
    const ModelConfig c = small_config();
    const auto kv = c.to_kv();
    EXPECT_EQ(ModelConfig::from_kv({kv.begin(), kv.end()}), c);
    EXPECT_THROW(ModelConfig::from_kv({{"d_modle", "8"}}), ConfigError);
}

TEST(InitModel, ParameterCountMatchesClosedForm) {
    const ModelConfig def;
    EXPECT_EQ(ModelParams(def).total_size(), closed_form_count(def));
    EXPECT_EQ(ModelParams(def).total_size(), 273892u);
    EXPECT_EQ(ModelParams(tiny_config()).total_size(), closed_form_count(tiny_config()));
    EXPECT_EQ(ModelParams(small_config()).total_size(), closed_form_count(small_config()));
}

TEST(InitModel, DeterministicPerSeed) {
    const ModelConfig c = small_config();
    EXPECT_EQ(init_model(c, 5), init_model(c, 5));
    EXPECT_FALSE(init_model(c, 5) == init_model(c, 6));
}

TEST(InitModel, DistributionAndConstants) {
    const ModelParams p = init_model(ModelConfig{}, 1);
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < p.count(); ++i) {
        const std::string& name = p.name(i);
        const bool gain = name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0;
        if (p[i].shape().size() == 2) {
            for (double v : p[i].values()) sum += v, sq += v * v, ++n;
        } else {
            for (double v : p[i].values()) EXPECT_EQ(v, gain ? 1.0 : 0.0) << name;
        }
    }
    const double mean = sum / n, sd = std::sqrt(sq / n - mean * mean);
    EXPECT_NEAR(mean, 0.0, 1e-3);
    EXPECT_NEAR(sd, 0.02, 5e-4);
}

TEST(InitModel, HierarchicalNames) {
    const ModelParams p(ModelConfig{});
    EXPECT_EQ(p.at("dec.3.self_attn.W_Q").shape(), (Shape{64, 64}));
    EXPECT_EQ(p.at("dec.0.cross_attn.b_O").shape(), (Shape{64}));
    EXPECT_EQ(p.at("enc.1.ffn.W1").shape(), (Shape{128, 64}));
    EXPECT_THROW(p.index("dec.4.self_attn.W_Q"), IndexError);
}

TEST(Forward, EmptyTargetGivesOneRow) {
    const ModelConfig c = tiny_config();
    Rng rng(1);
    const ModelParams p = random_model(c, 2);
    const ForwardResult r = forward_teacher_forced(p, random_features(c, 5, rng), {}, HeadMask::none());
    EXPECT_EQ(r.logits.shape(), (Shape{1, static_cast<std::size_t>(c.vocab_size)}));
    EXPECT_TRUE(std::isfinite(r.loss));
}

TEST(Forward, LengthLimits) {
    const ModelConfig c = tiny_config();
    Rng rng(1);
    const ModelParams p = random_model(c, 2);
    EXPECT_THROW(forward_teacher_forced(p, random_features(c, 17, rng), {}, HeadMask::none()),
                 LengthError);
    const std::vector<int> long_target(8, 0);
    EXPECT_THROW(forward_teacher_forced(p, random_features(c, 4, rng), long_target, HeadMask::none()),
                 LengthError);
}

TEST(Forward, AllHeadsMaskedIsResidualPlusBias) {
    const ModelConfig c = small_config();
    Rng rng(3);
    ModelParams p = random_model(c, 4);
    const HeadMask all = HeadMask::broadcast({0, 1, 2, 3});
    const auto target = random_target(c, 5, rng);
    const Tensor x = random_features(c, 9, rng);
    ForwardTrace trace;
    forward_teacher_forced(p, x, target, all, &trace);
    for (std::size_t l = 0; l < trace.self_attn_in.size(); ++l) {
        const Tensor& in = trace.self_attn_in[l];
        const Tensor bias = self_attn_b_o_rows(p, l, in.rows());
        for (std::size_t i = 0; i < in.size(); ++i)
            EXPECT_EQ(trace.self_attn_out[l][i], in[i] + bias[i]);
    }
    for (const DecoderLayerSlots& s : p.layout().dec) p[s.self_attn.b_o] = Tensor(p[s.self_attn.b_o].shape());
    ForwardTrace zero;
    forward_teacher_forced(p, x, target, all, &zero);
    for (std::size_t l = 0; l < zero.self_attn_in.size(); ++l)
        EXPECT_EQ(zero.self_attn_out[l], zero.self_attn_in[l]);
}

TEST(Forward, MaskEqualsParameterSurgery) {
    const ModelConfig c = small_config();
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng(100 + trial);
        const ModelParams p = random_model(c, 200 + trial);
        std::set<int> heads;
        for (int h = 0; h < c.n_heads; ++h)
            if (rng.uniform() < 0.4) heads.insert(h);
        const HeadMask mask = trial % 4 == 3 ? HeadMask::explicit_pairs({{0, 1}, {1, 3}})
                                             : HeadMask::broadcast(heads);
        const Tensor x = random_features(c, 6 + trial % 5, rng);
        const auto target = random_target(c, 1 + trial % 6, rng);
        const Tensor masked = forward_teacher_forced(p, x, target, mask).logits;
        const Tensor surgery =
            forward_teacher_forced(apply_head_mask(p, mask), x, target, HeadMask::none()).logits;
        EXPECT_LT(calm::testing::max_abs_diff(masked, surgery), 1e-12);
        EXPECT_EQ(greedy_decode(p, x, mask, 7), greedy_decode(apply_head_mask(p, mask), x, HeadMask::none(), 7));
    }
}

TEST(Forward, EmptyMaskIsIdentityPath) {
    const ModelConfig c = small_config();
    Rng rng(8);
    const ModelParams p = random_model(c, 9);
    const Tensor x = random_features(c, 7, rng);
    const auto target = random_target(c, 4, rng);
    const Tensor a = forward_teacher_forced(p, x, target, HeadMask::none()).logits;
    const Tensor b = forward_teacher_forced(p, x, target, HeadMask::broadcast({})).logits;
    const Tensor d = forward_teacher_forced(apply_head_mask(p, HeadMask::none()), x, target, HeadMask::none()).logits;
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, d);
}

TEST(Forward, MaskNeverTouchesCrossAttentionMemory) {
    const ModelConfig c = small_config();
    Rng rng(10);
    const ModelParams p = random_model(c, 11);
    const Tensor x = random_features(c, 8, rng);
    const auto target = random_target(c, 3, rng);
    ForwardTrace base, masked;
    forward_teacher_forced(p, x, target, HeadMask::none(), &base);
    forward_teacher_forced(p, x, target, HeadMask::broadcast({0, 2}), &masked);
    EXPECT_EQ(base.cross_keys, masked.cross_keys);
    EXPECT_EQ(base.cross_values, masked.cross_values);
    // Layer 0's cross-attention queries come after the masked block, so only
    // the memory is comparable there.
    EXPECT_NE(base.self_attn_out[0], masked.self_attn_out[0]);
}

TEST(Forward, Causality) {
    const ModelConfig c = small_config();
    Rng rng(12);
    const ModelParams p = random_model(c, 13);
    const Tensor x = random_features(c, 8, rng);
    auto target = random_target(c, 6, rng);
    const Tensor before = forward_teacher_forced(p, x, target, HeadMask::none()).logits;
    for (std::size_t j = 0; j < target.size(); ++j) {
        auto changed = target;
        changed[j] = (changed[j] + 1) % c.n_content();
        const Tensor after = forward_teacher_forced(p, x, changed, HeadMask::none()).logits;
        // Token j sits at decoder input position j + 1.
        for (std::size_t r = 0; r <= j; ++r)
            for (std::size_t v = 0; v < after.cols(); ++v) EXPECT_EQ(after.at(r, v), before.at(r, v));
        double moved = 0.0;
        for (std::size_t v = 0; v < after.cols(); ++v) moved += std::abs(after.at(j + 1, v) - before.at(j + 1, v));
        EXPECT_GT(moved, 0.0);
    }
}

TEST(Forward, FullModelGradients) {
    const ModelConfig c = tiny_config();
    Rng rng(14);
    const ModelParams p = random_model(c, 15);
    const Tensor x = random_features(c, 5, rng);
    const auto target = random_target(c, 3, rng);
    const ModelLayout layout = p.layout();
    const ScalarFn f = [&](Tape& tape, std::span<const Var> vars) {
        return teacher_forced_loss(tape, layout, vars, x, target, HeadMask::broadcast({1}));
    };
    GradCheckOptions opts;
    opts.max_coords = 300;
    opts.seed = 16;
    EXPECT_LT(grad_check(f, p.tensors(), opts).max_rel_error, 1e-6);
}

TEST(GreedyDecode, EosEverywhereGivesEmpty) {
    const ModelConfig c = tiny_config();
    Rng rng(17);
    ModelParams p = random_model(c, 18);
    p.at("dec.out_proj.W") = Tensor(p.at("dec.out_proj.W").shape());
    Tensor& b = p.at("dec.out_proj.b");
    b = Tensor(b.shape());
    b[c.eos()] = 1.0;
    EXPECT_TRUE(greedy_decode(p, random_features(c, 6, rng), HeadMask::none(), 7).empty());
}

TEST(GreedyDecode, DeterministicAndBounded) {
    const ModelConfig c = tiny_config();
    Rng rng(19);
    for (int trial = 0; trial < 5; ++trial) {
        const ModelParams p = random_model(c, 20 + trial, 1.0);
        const Tensor x = random_features(c, 6, rng);
        const Transcript t = greedy_decode(p, x, HeadMask::none(), 100);
        EXPECT_EQ(t, greedy_decode(p, x, HeadMask::none(), 100));
        EXPECT_LE(t.length(), static_cast<std::size_t>(c.max_tgt_len - 1));
        EXPECT_LE(greedy_decode(p, x, HeadMask::none(), 2).length(), 2u);
        for (int tok : t.tokens) EXPECT_TRUE(c.is_content(tok));
    }
}

TEST(GreedyDecode, TiesGoToLowestId) {
    const ModelConfig c = tiny_config();
    Rng rng(21);
    ModelParams p = random_model(c, 22);
    p.at("dec.out_proj.W") = Tensor(p.at("dec.out_proj.W").shape());
    p.at("dec.out_proj.b") = Tensor(p.at("dec.out_proj.b").shape());
    // Every logit equal: token 0 wins each step until max_len.
    EXPECT_EQ(greedy_decode(p, random_features(c, 4, rng), HeadMask::none(), 3).tokens,
              (std::vector<int>{0, 0, 0}));
}

// All blocks zeroed so each decoder position reads LN(embed + PE); the
// projection then picks token 5 after SOS and EOS after token 5.
TEST(GreedyDecode, RiggedModelEmitsFiveThenEos) {
    const ModelConfig c = tiny_config();
    ModelParams p(c);
    for (std::size_t i = 0; i < p.count(); ++i) {
        const std::string& n = p.name(i);
        if (n.size() > 2 && n.compare(n.size() - 2, 2, ".g") == 0) p[i].values().assign(p[i].size(), 1.0);
    }
    const std::size_t d = c.d_model;
    Tensor& embed = p.at("dec.embed");
    embed.at(c.sos(), 0) = 100.0;
    embed.at(5, 1) = 100.0;
    Tensor& w = p.at("dec.out_proj.W");
    w.at(5, 0) = 10.0;
    w.at(c.eos(), 1) = 10.0;

    auto hand_logits = [&](int token, std::size_t pos) {
        std::vector<double> y(d);
        for (std::size_t i = 0; i < d; ++i) {
            const double q = static_cast<double>(3 * pos + 1);
            const double angle = q / std::pow(10000.0, static_cast<double>(i - i % 2) / d);
            y[i] = embed.at(token, i) + (i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
        double mean = 0.0, var = 0.0;
        for (double v : y) mean += v;
        mean /= d;
        for (double v : y) var += (v - mean) * (v - mean);
        var /= d;
        std::vector<double> logits(c.vocab_size, 0.0);
        for (int v = 0; v < c.vocab_size; ++v)
            for (std::size_t i = 0; i < d; ++i) logits[v] += w.at(v, i) * (y[i] - mean) / std::sqrt(var + 1e-5);
        return logits;
    };
    auto argmax = [&](const std::vector<double>& l) {
        int best = c.eos();
        for (int v = 0; v < c.n_content(); ++v)
            if (l[v] > l[best] || (l[v] == l[best] && v < best)) best = v;
        return best;
    };
    EXPECT_EQ(argmax(hand_logits(c.sos(), 0)), 5);
    EXPECT_EQ(argmax(hand_logits(5, 1)), c.eos());

    Rng rng(23);
    const Tensor x = random_features(c, 6, rng);
    const std::vector<int> five{5};
    const Tensor logits = forward_teacher_forced(p, x, five, HeadMask::none()).logits;
    for (std::size_t pos = 0; pos < 2; ++pos) {
        const auto hand = hand_logits(pos == 0 ? c.sos() : 5, pos);
        for (int v = 0; v < c.vocab_size; ++v) EXPECT_NEAR(logits.at(pos, v), hand[v], 1e-9);
    }
    EXPECT_EQ(greedy_decode(p, x, HeadMask::none(), 7).tokens, five);
}

TEST(HeadMask, ParseDescribeValidate) {
    EXPECT_TRUE(HeadMask::parse("").empty());
    EXPECT_EQ(HeadMask::parse("1, 6,11").heads(), (std::set<int>{1, 6, 11}));
    EXPECT_EQ(HeadMask::parse("6,1").describe(), "1,6");
    EXPECT_EQ(HeadMask::none().describe(), "none");
    EXPECT_THROW(HeadMask::parse("1,x"), ConfigError);
    EXPECT_THROW(HeadMask::broadcast({8}).validate(ModelConfig{}), HeadIndexError);
    EXPECT_THROW(HeadMask::explicit_pairs({{4, 0}}).validate(ModelConfig{}), ConfigError);
    EXPECT_TRUE(HeadMask::broadcast({3}).masked(2, 3));
    EXPECT_FALSE(HeadMask::explicit_pairs({{0, 3}}).masked(1, 3));
}

TEST(ApplyHeadMask, ZeroesExactlyTheHeadSlices) {
    const ModelConfig c = small_config();
    const ModelParams p = random_model(c, 24);
    const std::size_t d = c.d_model, dh = c.d_head();
    for (int h = 0; h < c.n_heads; ++h) {
        const ModelParams m = apply_head_mask(p, HeadMask::broadcast({h}));
        std::size_t zeroed = 0;
        for (std::size_t i = 0; i < p.count(); ++i)
            for (std::size_t j = 0; j < p[i].size(); ++j)
                if (m[i][j] != p[i][j]) {
                    EXPECT_EQ(m[i][j], 0.0);
                    EXPECT_NE(p.name(i).find("self_attn"), std::string::npos);
                    EXPECT_EQ(p.name(i).rfind("dec.", 0), 0u);
                    ++zeroed;
                }
        EXPECT_EQ(zeroed, c.n_dec_layers * (3 * dh * d + 3 * dh + dh * d));
        EXPECT_EQ(apply_head_mask(m, HeadMask::broadcast({h})), m);
    }
    EXPECT_EQ(apply_head_mask(p, HeadMask::none()), p);
}

TEST(Checkpoint, BitExactRoundTrip) {
    const ModelConfig c = small_config();
    ModelParams p = random_model(c, 25);
    p[0][0] = -0.0;
    p[0][1] = 1e-310;
    p[0][2] = 0.1 + 0.2;
    std::stringstream buf;
    write_checkpoint(buf, p);
    const ModelParams q = read_checkpoint(buf);
    EXPECT_EQ(q, p);
    EXPECT_TRUE(std::signbit(q[0][0]));
    EXPECT_EQ(checkpoint_id(q), checkpoint_id(p));

    const std::string path = calm::testing::temp_dir("ckpt") + "/m.ckpt";
    save_checkpoint(path, p);
    EXPECT_EQ(load_checkpoint(path), p);
    EXPECT_THROW(load_checkpoint(path + ".missing"), IoError);
}

TEST(Checkpoint, RejectsCorruptInput) {
    std::stringstream bad("not a checkpoint\n");
    EXPECT_THROW(read_checkpoint(bad), IoError);
    std::stringstream buf;
    write_checkpoint(buf, random_model(tiny_config(), 26));
    const std::string bytes = buf.str();
    std::stringstream truncated(bytes.substr(0, bytes.size() - 10));
    EXPECT_THROW(read_checkpoint(truncated), IoError);
}
