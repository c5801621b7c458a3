#pragma once

#include <cstddef>
#include <vector>

#include "lcl/numerics/tape.hpp"

namespace lcl {

struct AdamWOptions {
    double lr = 3e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// AdamW with decoupled weight decay. Holds non-owning pointers to the
/// parameters it updates; build a fresh optimizer whenever the trainable set
/// changes (at every task boundary).
class AdamW {
public:
    AdamW(std::vector<Parameter*> params, AdamWOptions opts);

    /// One update using the gradients currently stored in the parameters.
    /// Throws ContractViolation if any registered parameter is frozen.
    void step(double lr);
    void step() { step(opts_.lr); }
    void zero_grad();

    std::size_t steps() const noexcept { return t_; }
    const AdamWOptions& options() const noexcept { return opts_; }
    const std::vector<Parameter*>& params() const noexcept { return params_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    AdamWOptions opts_;
    std::size_t t_ = 0;
};

/// Linear warm-up followed by cosine annealing to zero.
struct CosineSchedule {
    double base_lr = 3e-4;
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 1;

    double at(std::size_t step) const;
};

}  // namespace lcl
