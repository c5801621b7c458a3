#include "lcl/numerics/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "lcl/errors.hpp"

namespace lcl {

AdamW::AdamW(std::vector<Parameter*> params, AdamWOptions opts)
    : params_(std::move(params)), opts_(opts) {
    if (!(opts_.lr >= 0.0) || !(opts_.weight_decay >= 0.0)) {
        throw ParameterError("AdamW needs lr >= 0 and weight_decay >= 0");
    }
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Parameter* p : params_) {
        m_.emplace_back(p->value().shape());
        v_.emplace_back(p->value().shape());
    }
}

void AdamW::step(double lr) {
    for (Parameter* p : params_) {
        if (p->frozen()) throw ContractViolation("optimizer update of frozen parameter '" + p->name() + "'");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        Tensor& w = p.value();
        const Tensor& g = p.grad();
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g[j];
            v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= lr * (mhat / (std::sqrt(vhat) + opts_.eps) + opts_.weight_decay * w[j]);
        }
    }
}

void AdamW::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

double CosineSchedule::at(std::size_t step) const {
    if (warmup_steps > 0 && step < warmup_steps) {
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    const std::size_t span = total_steps > warmup_steps ? total_steps - warmup_steps : 1;
    const double progress =
        std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(span));
    return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace lcl
