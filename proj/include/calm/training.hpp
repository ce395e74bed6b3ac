#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "calm/data.hpp"
#include "calm/model.hpp"

namespace calm {

enum class Trainable { all, decoder_only, head_set };

const char* to_string(Trainable t);
Trainable parse_trainable(const std::string& text);

struct TuneConfig {
    Trainable trainable = Trainable::all;
    std::set<int> heads;  // head positions, head_set mode only
    int epochs = 1;
    int batch_size = 32;
    double learning_rate = 3e-4;
    double warmup_fraction = 0.15;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;

    // Batch 128, learning rate 1e-6: the full-scale fine-tuning setting.
    static TuneConfig full_scale_preset();

    void validate(bool allow_zero_epochs = false) const;
    KeyValues to_kv() const;
    static TuneConfig from_kv(const std::map<std::string, std::string>& kv);

    friend bool operator==(const TuneConfig&, const TuneConfig&) = default;
};

// W = ceil(warmup_fraction * total_steps); linear ramp learning_rate*step/W
// up to W, constant afterwards.
int warmup_steps(int total_steps, const TuneConfig& config);
double lr_at(int step, int total_steps, const TuneConfig& config);

// One flag per parameter coordinate, laid out like ModelParams.
struct TrainableMask {
    std::vector<std::vector<char>> flags;
    std::size_t count = 0;

    bool at(std::size_t tensor, std::size_t coord) const { return flags[tensor][coord] != 0; }
};

// head_set: for each decoder layer's self-attention, rows
// [h*d_head,(h+1)*d_head) of W_Q/W_K/W_V/W_O and the matching b_Q/b_K/b_V
// slices of every selected h. decoder_only: every dec.* tensor.
TrainableMask build_trainable_mask(const ModelParams& params, const TuneConfig& config);

// Adam over a flat coordinate vector. Moments are allocated only for the
// coordinates handed in.
class Adam {
public:
    Adam(std::size_t size, double beta1, double beta2, double eps);

    void step(std::span<double> values, std::span<const double> grads, double lr);
    int steps_taken() const { return t_; }

private:
    std::vector<double> m_, v_;
    double beta1_, beta2_, eps_;
    int t_ = 0;
};

struct LossRecord {
    int epoch = 0;
    int step = 0;
    double lr = 0.0;
    double loss = 0.0;
    friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

struct TrainResult {
    ModelParams params;
    std::vector<ModelParams> epoch_checkpoints;  // after epochs 1..N
    std::vector<LossRecord> trace;
};

// Mean teacher-forced loss and gradient over `batch` (corpus indices), in
// index order.
double batch_gradient(const ModelParams& params, const Corpus& corpus,
                      std::span<const std::size_t> batch, std::vector<Tensor>& grads);

// Mini-batch Adam. Gradients of frozen coordinates are zeroed before each
// update and the optimizer only sees trainable coordinates. Batches come
// from a per-epoch shuffle seeded by derive_seed(config.seed, epoch).
// `max_steps` > 0 stops early after that many updates (warm-up is still
// computed from the full schedule).
TrainResult train(const ModelParams& params, const Corpus& corpus, const TuneConfig& config,
                  int max_steps = 0);

// train() with trainable = head_set over `heads`; other fields from `base`.
TrainResult calm_tune(const ModelParams& params, const Corpus& noise_corpus,
                      const std::set<int>& heads, int epochs, const TuneConfig& base = {});

std::string loss_trace_csv(std::span<const LossRecord> trace);

}  // namespace calm
