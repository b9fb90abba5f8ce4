#include "sta/optim.hpp"

#include <cmath>
#include <string>

#include "sta/errors.hpp"

namespace sta {

namespace {

void check_params(std::span<Tensor* const> params, const char* who) {
    for (size_t i = 0; i < params.size(); ++i) {
        const Tensor* p = params[i];
        if (p == nullptr) {
            throw ContractError(std::string(who) + ": parameter " + std::to_string(i) +
                                " is null");
        }
        if (!p->has_grad()) {
            throw ContractError(std::string(who) + ": parameter " + std::to_string(i) +
                                " has no gradient of matching size; run backward first");
        }
    }
}

}  // namespace

Sgd::Sgd(SgdConfig cfg) : config(cfg) {
    if (!(config.lr > 0.0)) throw ConfigError("sgd learning rate must be positive");
}

void Sgd::step(std::span<Tensor* const> params) {
    check_params(params, "sgd");
    for (Tensor* p : params) {
        for (size_t j = 0; j < p->data.size(); ++j) {
            p->data[j] -= config.lr * p->grad[j];
        }
    }
}

Adam::Adam(AdamConfig cfg) : config(cfg) {
    if (!(config.lr > 0.0)) throw ConfigError("adam learning rate must be positive");
    if (!(config.beta1 >= 0.0 && config.beta1 < 1.0)) {
        throw ConfigError("adam beta1 must lie in [0, 1)");
    }
    if (!(config.beta2 >= 0.0 && config.beta2 < 1.0)) {
        throw ConfigError("adam beta2 must lie in [0, 1)");
    }
    if (!(config.eps > 0.0)) throw ConfigError("adam eps must be positive");
}

void Adam::step(std::span<Tensor* const> params) {
    check_params(params, "adam");
    if (slots.empty()) {
        slots.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            slots[i].m.assign(params[i]->data.size(), 0.0);
            slots[i].v.assign(params[i]->data.size(), 0.0);
        }
    }
    if (slots.size() != params.size()) {
        throw ContractError("adam: parameter count changed between steps");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (slots[i].m.size() != params[i]->data.size()) {
            throw ContractError("adam: parameter " + std::to_string(i) +
                                " changed size between steps");
        }
    }

    ++step_count;
    double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step_count));
    double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step_count));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        Slot& s = slots[i];
        for (size_t j = 0; j < p.data.size(); ++j) {
            double g = p.grad[j];
            s.m[j] = config.beta1 * s.m[j] + (1.0 - config.beta1) * g;
            s.v[j] = config.beta2 * s.v[j] + (1.0 - config.beta2) * g * g;
            double mhat = s.m[j] / c1;
            double vhat = s.v[j] / c2;
            p.data[j] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
        }
    }
}

}  // namespace sta
