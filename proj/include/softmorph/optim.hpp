#pragma once

#include <cmath>
#include <vector>

#include "softmorph/errors.hpp"
#include "softmorph/toynet.hpp"

namespace softmorph {

/// Adam with decoupled weight decay: the decay term multiplies the parameter
/// directly and never enters the moment estimates.
template <typename T>
class AdamW {
public:
    struct Options {
        double lr = 1e-3;
        double weight_decay = 0.0;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    AdamW(const Options& options, const std::vector<ParamBlock<T>>& blocks) : options_(options) {
        if (!(options.lr > 0.0)) throw InvalidInputError("learning rate must be positive");
        m_.reserve(blocks.size());
        v_.reserve(blocks.size());
        for (const ParamBlock<T>& b : blocks) {
            m_.emplace_back(b.count(), T(0));
            v_.emplace_back(b.count(), T(0));
        }
    }

    void set_lr(double lr) { options_.lr = lr; }
    double lr() const { return options_.lr; }
    int64_t steps_taken() const { return t_; }

    void step(std::vector<ParamBlock<T>>& blocks) {
        ++t_;
        const T bc1 = static_cast<T>(1.0 - std::pow(options_.beta1, static_cast<double>(t_)));
        const T bc2 = static_cast<T>(1.0 - std::pow(options_.beta2, static_cast<double>(t_)));
        const T lr = static_cast<T>(options_.lr);
        const T wd = static_cast<T>(options_.weight_decay);
        const T b1 = static_cast<T>(options_.beta1);
        const T b2 = static_cast<T>(options_.beta2);
        const T eps = static_cast<T>(options_.eps);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            auto& value = blocks[b].value;
            auto& grad = blocks[b].grad;
            auto& m = m_[b];
            auto& v = v_[b];
            for (std::size_t i = 0; i < value.size(); ++i) {
                const T g = grad[i];
                m[i] = b1 * m[i] + (T(1) - b1) * g;
                v[i] = b2 * v[i] + (T(1) - b2) * g * g;
                const T m_hat = m[i] / bc1;
                const T v_hat = v[i] / bc2;
                value[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + wd * value[i]);
            }
        }
    }

private:
    Options options_;
    int64_t t_ = 0;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
};

/// lr0 * 0.5 * (1 + cos(pi * epoch / max_epochs)), epoch 0-based.
double cosine_annealed_lr(double base_lr, int epoch, int max_epochs);

}  // namespace softmorph
