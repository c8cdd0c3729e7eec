#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace cascreg {

struct AdamSettings {
    double learning_rate = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Element-wise Adam with bias correction. Moment buffers are sized on the
/// first step.
class Adam {
public:
    explicit Adam(AdamSettings s = {}) : s_(s) {}

    const AdamSettings& settings() const { return s_; }
    int steps() const { return t_; }

    template <class T, class G>
    void step(std::span<T> params, std::span<const G> grad, double lr) {
        if (m_.size() != params.size()) {
            m_.assign(params.size(), 0.0);
            v_.assign(params.size(), 0.0);
        }
        ++t_;
        const double c1 = 1.0 - std::pow(s_.beta1, t_);
        const double c2 = 1.0 - std::pow(s_.beta2, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grad[i];
            m_[i] = s_.beta1 * m_[i] + (1.0 - s_.beta1) * g;
            v_[i] = s_.beta2 * v_[i] + (1.0 - s_.beta2) * g * g;
            const double mh = m_[i] / c1, vh = v_[i] / c2;
            params[i] = static_cast<T>(params[i] - lr * mh / (std::sqrt(vh) + s_.eps));
        }
    }
    template <class T, class G>
    void step(std::span<T> params, std::span<const G> grad) {
        step(params, grad, s_.learning_rate);
    }

private:
    AdamSettings s_;
    int t_ = 0;
    std::vector<double> m_, v_;
};

}  // namespace cascreg
