#include "calm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "calm/rng.hpp"

namespace calm {

std::vector<Tensor> gradients(const ScalarFn& f, const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(tape.external(t, true));
    Var out = f(tape, vars);
    tape.backward(out);
    std::vector<Tensor> grads;
    grads.reserve(vars.size());
    for (const Var& v : vars) grads.push_back(v.grad());
    return grads;
}

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
    Tape tape(false);
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(tape.external(t, false));
    return f(tape, vars).value()[0];
}

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options) {
    const std::vector<Tensor> analytic = gradients(f, inputs);

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        for (std::size_t j = 0; j < inputs[i].size(); ++j) coords.emplace_back(i, j);
    if (options.max_coords != 0 && options.max_coords < coords.size()) {
        Rng rng(options.seed);
        rng.shuffle(coords);
        coords.resize(options.max_coords);
    }

    std::vector<Tensor> point = inputs;
    GradCheckResult result;
    for (auto [i, j] : coords) {
        const double orig = point[i][j];
        point[i][j] = orig + options.eps;
        const double up = evaluate(f, point);
        point[i][j] = orig - options.eps;
        const double down = evaluate(f, point);
        point[i][j] = orig;
        const double numeric = (up - down) / (2.0 * options.eps);
        const double err =
            std::abs(analytic[i][j] - numeric) / std::max(1.0, std::abs(numeric));
        result.max_rel_error = std::max(result.max_rel_error, err);
        ++result.coords_checked;
    }
    return result;
}

}  // namespace calm
