#pragma once

// SGD with Nesterov momentum, Adam, and the step learning-rate schedule.
// Weight decay uses the gradient convention g' = g + decay * theta. By
// default every parameter is decayed, biases and batchnorm included; the
// decay_bias_and_bn flag restricts decay to dense weight matrices.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ole/matrix.hpp"
#include "ole/network.hpp"

namespace ole {

/// Piecewise-constant schedule: base_lr for the first half of training,
/// base_lr/10 from 50%, base_lr/100 from 75%.
inline double step_schedule(std::size_t epoch, std::size_t total_epochs, double base_lr) {
    if (total_epochs < 1 || epoch >= total_epochs) {
        throw std::invalid_argument("step_schedule: epoch " + std::to_string(epoch) +
                                    " out of range for " + std::to_string(total_epochs) +
                                    " epochs");
    }
    if (epoch * 4 >= total_epochs * 3) return base_lr * 0.01;
    if (epoch * 2 >= total_epochs) return base_lr * 0.1;
    return base_lr;
}

namespace detail {

inline void check_views(const std::vector<ParamView>& views, const std::vector<Matrix>& state,
                        const char* who) {
    if (views.size() != state.size()) {
        throw std::invalid_argument(std::string(who) + ": parameter count changed mid-run");
    }
    for (std::size_t k = 0; k < views.size(); ++k) {
        if (!views[k].value->same_shape(state[k]) ||
            !views[k].grad->same_shape(*views[k].value)) {
            throw std::invalid_argument(std::string(who) + ": shape mismatch at parameter " +
                                        std::to_string(k));
        }
    }
}

inline std::vector<Matrix> zeros_like(const std::vector<ParamView>& views) {
    std::vector<Matrix> out;
    out.reserve(views.size());
    for (const auto& v : views) out.emplace_back(v.value->rows(), v.value->cols());
    return out;
}

} // namespace detail

class SgdNesterov {
public:
    SgdNesterov(double momentum, double weight_decay, bool decay_bias_and_bn = true)
        : momentum_(momentum), weight_decay_(weight_decay),
          decay_bias_and_bn_(decay_bias_and_bn) {}

    /// g' = g + decay*theta; v <- momentum*v - lr*g'; theta += momentum*v - lr*g'.
    void step(const std::vector<ParamView>& views, double lr) {
        if (velocity_.empty()) velocity_ = detail::zeros_like(views);
        detail::check_views(views, velocity_, "SgdNesterov::step");
        for (std::size_t k = 0; k < views.size(); ++k) {
            const bool decay = weight_decay_ != 0.0 && (decay_bias_and_bn_ || views[k].weight);
            Matrix& theta = *views[k].value;
            const Matrix& grad = *views[k].grad;
            Matrix& vel = velocity_[k];
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double g =
                    grad.data()[i] + (decay ? weight_decay_ * theta.data()[i] : 0.0);
                vel.data()[i] = momentum_ * vel.data()[i] - lr * g;
                theta.data()[i] += momentum_ * vel.data()[i] - lr * g;
            }
        }
    }

private:
    double momentum_;
    double weight_decay_;
    bool decay_bias_and_bn_;
    std::vector<Matrix> velocity_;
};

class Adam {
public:
    Adam(double weight_decay, bool decay_bias_and_bn = true, double beta1 = 0.9,
         double beta2 = 0.999, double epsilon = 1e-8)
        : weight_decay_(weight_decay), decay_bias_and_bn_(decay_bias_and_bn), beta1_(beta1),
          beta2_(beta2), epsilon_(epsilon) {}

    /// Bias-corrected moment updates; decay is added to the gradient before
    /// the moments see it.
    void step(const std::vector<ParamView>& views, double lr) {
        if (m_.empty()) {
            m_ = detail::zeros_like(views);
            v_ = detail::zeros_like(views);
        }
        detail::check_views(views, m_, "Adam::step");
        ++step_count_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
        for (std::size_t k = 0; k < views.size(); ++k) {
            const bool decay = weight_decay_ != 0.0 && (decay_bias_and_bn_ || views[k].weight);
            Matrix& theta = *views[k].value;
            const Matrix& grad = *views[k].grad;
            Matrix& m = m_[k];
            Matrix& v = v_[k];
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double g =
                    grad.data()[i] + (decay ? weight_decay_ * theta.data()[i] : 0.0);
                m.data()[i] = beta1_ * m.data()[i] + (1.0 - beta1_) * g;
                v.data()[i] = beta2_ * v.data()[i] + (1.0 - beta2_) * g * g;
                const double mhat = m.data()[i] / bc1;
                const double vhat = v.data()[i] / bc2;
                theta.data()[i] -= lr * mhat / (std::sqrt(vhat) + epsilon_);
            }
        }
    }

private:
    double weight_decay_;
    bool decay_bias_and_bn_;
    double beta1_;
    double beta2_;
    double epsilon_;
    long step_count_ = 0;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
};

} // namespace ole
