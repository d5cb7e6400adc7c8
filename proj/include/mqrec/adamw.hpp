#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mqrec/common.hpp"

namespace mqrec {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. One optimizer instance owns the moment
/// buffers for a fixed set of registered tensors; the step counter is shared
/// across all of them.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    const AdamWConfig& config() const { return cfg_; }
    std::uint64_t step() const { return step_; }

    std::size_t register_param(std::size_t n) {
        slots_.push_back({std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
        return slots_.size() - 1;
    }

    void begin_step() { ++step_; }

    void update(std::size_t slot, std::span<double> params, std::span<const double> grads) {
        if (slot >= slots_.size() || params.size() != slots_[slot].m.size() ||
            grads.size() != params.size())
            throw std::invalid_argument("adamw: parameter/gradient shape mismatch");
        auto& s = slots_[slot];
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grads[i];
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            params[i] -= cfg_.lr * cfg_.weight_decay * params[i];
            params[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }

private:
    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
    };
    AdamWConfig cfg_;
    std::uint64_t step_ = 0;
    std::vector<Slot> slots_;
};

}  // namespace mqrec
