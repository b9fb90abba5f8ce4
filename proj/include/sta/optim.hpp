#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sta/tensor.hpp"

namespace sta {

struct SgdConfig {
    double lr = 1e-4;
};

// Plain gradient descent: p <- p - lr * grad. Every parameter must carry a
// gradient buffer matching its data size.
class Sgd {
public:
    explicit Sgd(SgdConfig cfg);

    void step(std::span<Tensor* const> params);

    SgdConfig config;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction; eps is added outside the square root. Moment
// slots are allocated on the first step and are keyed by position, so every
// step must pass the same parameters in the same order.
class Adam {
public:
    explicit Adam(AdamConfig cfg);

    void step(std::span<Tensor* const> params);

    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
    };

    AdamConfig config;
    std::vector<Slot> slots;
    int64_t step_count = 0;
};

}  // namespace sta
