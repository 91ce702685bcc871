#ifndef CONSOLIDATE_OPTIMIZER_HPP
#define CONSOLIDATE_OPTIMIZER_HPP

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "consolidate/tensor.hpp"

namespace ewc {

struct AdamParams {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// SGD or Adam over a flat parameter vector.
class Optimizer {
public:
    static Optimizer sgd(double lr) {
        Optimizer o;
        o.kind_ = Kind::Sgd;
        o.lr_ = lr;
        return o;
    }

    static Optimizer adam(AdamParams p, std::size_t n_params) {
        Optimizer o;
        o.kind_ = Kind::Adam;
        o.lr_ = p.lr;
        o.adam_ = p;
        o.m_.assign(n_params, 0.0);
        o.v_.assign(n_params, 0.0);
        return o;
    }

    double learning_rate() const { return lr_; }
    bool is_adam() const { return kind_ == Kind::Adam; }
    std::int64_t step_count() const { return t_; }

    void step(std::span<double> params, std::span<const double> grad) {
        if (grad.size() != params.size())
            throw ShapeError("optimizer step: gradient length " + std::to_string(grad.size()) +
                             " vs parameter length " + std::to_string(params.size()));
        if (kind_ == Kind::Sgd) {
            for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr_ * grad[i];
        } else {
            ++t_;
            const double bc1 = 1.0 - std::pow(adam_.beta1, double(t_));
            const double bc2 = 1.0 - std::pow(adam_.beta2, double(t_));
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i] = adam_.beta1 * m_[i] + (1.0 - adam_.beta1) * grad[i];
                v_[i] = adam_.beta2 * v_[i] + (1.0 - adam_.beta2) * grad[i] * grad[i];
                const double mhat = m_[i] / bc1;
                const double vhat = v_[i] / bc2;
                params[i] -= lr_ * mhat / (std::sqrt(vhat) + adam_.eps);
            }
        }
        for (std::size_t i = 0; i < params.size(); ++i)
            if (!std::isfinite(params[i]))
                throw NumericError("optimizer step: non-finite parameter at index " +
                                   std::to_string(i));
    }

private:
    enum class Kind { Sgd, Adam };
    Kind kind_ = Kind::Sgd;
    double lr_ = 0.01;
    AdamParams adam_;
    std::vector<double> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace ewc

#endif
