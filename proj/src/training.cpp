#include "calm/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "calm/errors.hpp"
#include "calm/io.hpp"
#include "calm/rng.hpp"

namespace calm {

const char* to_string(Trainable t) {
    switch (t) {
        case Trainable::all: return "all";
        case Trainable::decoder_only: return "decoder-only";
        case Trainable::head_set: return "head-set";
    }
    return "?";
}

Trainable parse_trainable(const std::string& text) {
    for (Trainable t : {Trainable::all, Trainable::decoder_only, Trainable::head_set})
        if (text == to_string(t)) return t;
    throw ConfigError("unknown trainable mode '" + text + "' (all|decoder-only|head-set)");
}

// ---------------------------------------------------------------- config

TuneConfig TuneConfig::full_scale_preset() {
    TuneConfig c;
    c.batch_size = 128;
    c.learning_rate = 1e-6;
    return c;
}

void TuneConfig::validate(bool allow_zero_epochs) const {
    if (epochs < (allow_zero_epochs ? 0 : 1)) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
        throw ConfigError("warmup_fraction must be in [0, 1)");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw ConfigError("adam betas must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
    if (trainable == Trainable::head_set && heads.empty())
        throw ConfigError("head-set training needs at least one head");
}

KeyValues TuneConfig::to_kv() const {
    return {{"trainable", to_string(trainable)},
            {"heads", join_ints(std::vector<int>(heads.begin(), heads.end()), ',')},
            {"epochs", std::to_string(epochs)},
            {"batch_size", std::to_string(batch_size)},
            {"learning_rate", format_real(learning_rate)},
            {"warmup_fraction", format_real(warmup_fraction)},
            {"beta1", format_real(beta1)},
            {"beta2", format_real(beta2)},
            {"adam_eps", format_real(adam_eps)},
            {"seed", std::to_string(seed)}};
}

TuneConfig TuneConfig::from_kv(const std::map<std::string, std::string>& kv) {
    TuneConfig c;
    for (const auto& [k, v] : kv) {
        if (k == "trainable") c.trainable = parse_trainable(v);
        else if (k == "heads") {
            const auto list = parse_int_list(k, v);
            c.heads = std::set<int>(list.begin(), list.end());
        } else if (k == "epochs") c.epochs = parse_int(k, v);
        else if (k == "batch_size") c.batch_size = parse_int(k, v);
        else if (k == "learning_rate") c.learning_rate = parse_real(k, v);
        else if (k == "warmup_fraction") c.warmup_fraction = parse_real(k, v);
        else if (k == "beta1") c.beta1 = parse_real(k, v);
        else if (k == "beta2") c.beta2 = parse_real(k, v);
        else if (k == "adam_eps") c.adam_eps = parse_real(k, v);
        else if (k == "seed") c.seed = parse_u64(k, v);
        else throw ConfigError("unknown tune key '" + k + "'");
    }
    return c;
}

// ---------------------------------------------------------------- schedule

int warmup_steps(int total_steps, const TuneConfig& config) {
    // The small offset keeps products such as 0.15 * 100 from rounding up.
    const double raw = config.warmup_fraction * static_cast<double>(total_steps);
    return static_cast<int>(std::ceil(raw - 1e-9));
}

double lr_at(int step, int total_steps, const TuneConfig& config) {
    if (step < 1 || step > total_steps)
        throw ConfigError("lr_at: step " + std::to_string(step) + " outside [1," +
                          std::to_string(total_steps) + "]");
    const int w = warmup_steps(total_steps, config);
    if (step <= w) return config.learning_rate * static_cast<double>(step) / static_cast<double>(w);
    return config.learning_rate;
}

// ---------------------------------------------------------------- masks

TrainableMask build_trainable_mask(const ModelParams& params, const TuneConfig& config) {
    const ModelConfig& c = params.config();
    if (config.trainable == Trainable::head_set) {
        if (config.heads.empty()) throw ConfigError("head-set training needs at least one head");
        for (int h : config.heads)
            if (h < 0 || h >= c.n_heads)
                throw HeadIndexError("head index " + std::to_string(h) + " out of range [0," +
                                     std::to_string(c.n_heads) + ")");
    }
    TrainableMask mask;
    mask.flags.resize(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
        char fill = 0;
        if (config.trainable == Trainable::all) fill = 1;
        if (config.trainable == Trainable::decoder_only) fill = params.name(i).rfind("dec.", 0) == 0;
        mask.flags[i].assign(params[i].size(), fill);
    }
    if (config.trainable == Trainable::head_set) {
        const auto d = static_cast<std::size_t>(c.d_model);
        const auto dh = static_cast<std::size_t>(c.d_head());
        for (const DecoderLayerSlots& layer : params.layout().dec) {
            const AttentionSlots& s = layer.self_attn;
            for (int h : config.heads) {
                const std::size_t lo = static_cast<std::size_t>(h) * dh;
                for (std::size_t w : {s.w_q, s.w_k, s.w_v, s.w_o})
                    std::fill(mask.flags[w].begin() + static_cast<long>(lo * d),
                              mask.flags[w].begin() + static_cast<long>((lo + dh) * d), 1);
                for (std::size_t b : {s.b_q, s.b_k, s.b_v})
                    std::fill(mask.flags[b].begin() + static_cast<long>(lo),
                              mask.flags[b].begin() + static_cast<long>(lo + dh), 1);
            }
        }
    }
    for (const auto& f : mask.flags) mask.count += static_cast<std::size_t>(std::count(f.begin(), f.end(), 1));
    return mask;
}

// ---------------------------------------------------------------- adam

Adam::Adam(std::size_t size, double beta1, double beta2, double eps)
    : m_(size, 0.0), v_(size, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::span<double> values, std::span<const double> grads, double lr) {
    if (values.size() != m_.size() || grads.size() != m_.size())
        throw DimensionError("adam: expected " + std::to_string(m_.size()) + " coordinates");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < values.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
        const double m_hat = m_[i] / c1;
        const double v_hat = v_[i] / c2;
        values[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
    }
}

// ---------------------------------------------------------------- training

double batch_gradient(const ModelParams& params, const Corpus& corpus,
                      std::span<const std::size_t> batch, std::vector<Tensor>& grads) {
    grads.clear();
    for (const Tensor& t : params.tensors()) grads.emplace_back(t.shape(), 0.0);
    const HeadMask none;
    double loss = 0.0;
    for (std::size_t idx : batch) {
        const Sample& s = corpus[idx];
        Tape tape;
        const std::vector<Var> vars = bind_params(tape, params, true);
        Var l = teacher_forced_loss(tape, params.layout(), vars, s.features, s.label, none);
        tape.backward(l);
        loss += l.value()[0];
        for (std::size_t i = 0; i < vars.size(); ++i) {
            if (!tape.has_grad(vars[i].id())) continue;
            const Tensor& g = tape.grad(vars[i].id());
            double* dst = grads[i].data();
            for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (Tensor& g : grads)
        for (double& v : g.values()) v *= inv;
    return loss * inv;
}

TrainResult train(const ModelParams& params, const Corpus& corpus, const TuneConfig& config,
                  int max_steps) {
    config.validate(true);
    if (corpus.empty()) throw ConfigError("train: empty corpus");
    for (const Sample& s : corpus) check_lengths(params.config(), s.features, s.label.size());

    TrainResult result;
    result.params = params;
    ModelParams& p = result.params;
    const TrainableMask mask = build_trainable_mask(p, config);
    Adam adam(mask.count, config.beta1, config.beta2, config.adam_eps);

    const std::size_t n = corpus.size();
    const auto bs = static_cast<std::size_t>(config.batch_size);
    const int steps_per_epoch = static_cast<int>((n + bs - 1) / bs);
    const int total_steps = steps_per_epoch * config.epochs;

    std::vector<double> flat_values(mask.count), flat_grads(mask.count);
    std::vector<Tensor> grads;
    int step = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(config.seed, 0xE90C, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        for (std::size_t begin = 0; begin < n; begin += bs) {
            if (max_steps > 0 && step >= max_steps) break;
            ++step;
            const std::size_t end = std::min(n, begin + bs);
            const double loss = batch_gradient(
                p, corpus, std::span<const std::size_t>(order).subspan(begin, end - begin), grads);

            // Zero frozen coordinates, then gather the trainable ones.
            std::size_t k = 0;
            for (std::size_t i = 0; i < p.count(); ++i) {
                const auto& flags = mask.flags[i];
                for (std::size_t j = 0; j < flags.size(); ++j) {
                    if (!flags[j]) {
                        grads[i][j] = 0.0;
                        continue;
                    }
                    flat_values[k] = p[i][j];
                    flat_grads[k] = grads[i][j];
                    ++k;
                }
            }
            const double lr = lr_at(step, total_steps, config);
            adam.step(flat_values, flat_grads, lr);
            k = 0;
            for (std::size_t i = 0; i < p.count(); ++i) {
                const auto& flags = mask.flags[i];
                for (std::size_t j = 0; j < flags.size(); ++j)
                    if (flags[j]) p[i][j] = flat_values[k++];
            }
            result.trace.push_back({epoch, step, lr, loss});
        }
        result.epoch_checkpoints.push_back(p);
        if (max_steps > 0 && step >= max_steps) break;
    }
    return result;
}

TrainResult calm_tune(const ModelParams& params, const Corpus& noise_corpus,
                      const std::set<int>& heads, int epochs, const TuneConfig& base) {
    for (const Sample& s : noise_corpus)
        if (!s.label.empty())
            throw ConfigError("calm_tune: corpus must hold empty-label samples only");
    TuneConfig config = base;
    config.trainable = Trainable::head_set;
    config.heads = heads;
    config.epochs = epochs;
    return train(params, noise_corpus, config);
}

std::string loss_trace_csv(std::span<const LossRecord> trace) {
    std::ostringstream out;
    out << "epoch,step,lr,loss\n";
    for (const LossRecord& r : trace)
        out << r.epoch << ',' << r.step << ',' << format_real(r.lr) << ',' << format_real(r.loss)
            << '\n';
    return out.str();
}

}  // namespace calm
