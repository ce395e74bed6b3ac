#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "calm/autodiff.hpp"

namespace calm {

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckOptions {
    double eps = 1e-5;
    // 0 checks every coordinate; otherwise a seeded sample without replacement.
    std::size_t max_coords = 0;
    std::uint64_t seed = 1;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
};

// Analytic gradients of f at `inputs`, one tensor per input.
std::vector<Tensor> gradients(const ScalarFn& f, const std::vector<Tensor>& inputs);

// Evaluates f without recording.
double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs);

// Max over checked coordinates of |analytic - numeric| / max(1, |numeric|),
// numeric by central differences.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace calm
