#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dhmlm/ndgrad/parameter.hpp"

namespace dhmlm::ndgrad {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam. Moments are kept in the same order as the store.
template <class T>
class Adam {
public:
    Adam(const ParameterStore<T>& store, AdamConfig cfg) : cfg_(cfg) {
        require(cfg.lr > 0.0 && cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0 &&
                    cfg.eps > 0.0,
                ErrorKind::InvalidArgument, "invalid Adam hyperparameters");
        for (const auto& p : store) {
            m_.push_back(Tensor<T>(p.value.shape()));
            v_.push_back(Tensor<T>(p.value.shape()));
        }
    }

    void step(ParameterStore<T>& store) {
        require(store.size() == m_.size(), ErrorKind::InvalidState, "parameter store changed under the optimizer");
        for (const auto& p : store) {
            require(p.grad.all_finite(), ErrorKind::NumericalError, "non-finite gradient in " + p.name);
        }
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        const double b1 = cfg_.beta1;
        const double b2 = cfg_.beta2;
        for (std::size_t i = 0; i < store.size(); ++i) {
            auto& p = store[i];
            T* w = p.value.data();
            const T* g = p.grad.data();
            T* m = m_[i].data();
            T* v = v_[i].data();
            for (std::size_t j = 0; j < p.value.size(); ++j) {
                const double gj = static_cast<double>(g[j]);
                const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
                const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                w[j] -= static_cast<T>(cfg_.lr * (mj / c1) / (std::sqrt(vj / c2) + cfg_.eps));
            }
        }
    }

    std::uint64_t steps() const noexcept { return t_; }
    const AdamConfig& config() const noexcept { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

    std::vector<Tensor<T>>& first_moments() noexcept { return m_; }
    std::vector<Tensor<T>>& second_moments() noexcept { return v_; }
    const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
    const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }
    void set_steps(std::uint64_t t) noexcept { t_ = t; }

private:
    AdamConfig cfg_;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
    std::uint64_t t_ = 0;
};

}  // namespace dhmlm::ndgrad
