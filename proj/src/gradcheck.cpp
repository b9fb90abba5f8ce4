#include "sta/gradcheck.hpp"

#include <cmath>
#include <vector>

#include "sta/errors.hpp"

namespace sta {

namespace {

double evaluate(const GradCheckFn& f, std::span<Tensor> inputs) {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (Tensor& t : inputs) vars.push_back(g.leaf(t));
    Var out = f(g, vars);
    if (out.value().numel() != 1) {
        throw ContractError("grad_check function must return a scalar");
    }
    return out.value().data[0];
}

}  // namespace

double grad_check(const GradCheckFn& f, std::span<Tensor> inputs, double step) {
    if (inputs.empty()) throw ContractError("grad_check needs at least one input");
    if (!(step > 0.0) || step > 1e-3) {
        throw ContractError("grad_check step must lie in (0, 1e-3]");
    }
    for (const Tensor& t : inputs) {
        if (t.numel() > 64) {
            throw ContractError("grad_check input exceeds 64 elements; use a smaller probe");
        }
    }

    // Analytic gradients.
    {
        Graph g;
        std::vector<Var> vars;
        vars.reserve(inputs.size());
        for (Tensor& t : inputs) vars.push_back(g.leaf(t));
        Var out = f(g, vars);
        if (out.value().numel() != 1) {
            throw ContractError("grad_check function must return a scalar");
        }
        g.backward(out);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (const Tensor& t : inputs) analytic.push_back(t.grad);

    // Central differences.
    double worst = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (size_t j = 0; j < inputs[i].numel(); ++j) {
            double saved = inputs[i].data[j];
            inputs[i].data[j] = saved + step;
            double hi = evaluate(f, inputs);
            inputs[i].data[j] = saved - step;
            double lo = evaluate(f, inputs);
            inputs[i].data[j] = saved;
            double numeric = (hi - lo) / (2.0 * step);
            double a = analytic[i][j];
            double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
            worst = std::max(worst, std::fabs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace sta
