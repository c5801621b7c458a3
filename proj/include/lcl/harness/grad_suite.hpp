#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace lcl {

struct GradSuiteEntry {
    std::string component;  // adapter, routing, seg_loss, estimator
    std::size_t instances = 0;
    std::size_t entries = 0;
    double max_rel_error = 0.0;
};

/// Central-difference check of the four trainable paths over `instances`
/// seeded random problems each:
///   adapter   - adapter_forward w.r.t. W_down, W_up
///   routing   - batched site_forward (both routers, fusion, experts, phi)
///   seg_loss  - 0.8 soft Dice + 0.2 BCE on sigmoid logits
///   estimator - autoencoder reconstruction loss
std::vector<GradSuiteEntry> run_grad_suite(std::size_t instances = 20, std::uint64_t seed = 1, double eps = 1e-5);

}  // namespace lcl
