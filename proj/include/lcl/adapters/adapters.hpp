#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lcl/numerics/rng.hpp"
#include "lcl/numerics/tape.hpp"

namespace lcl {

/// Welford online mean / variance. variance() is the sample (n - 1) form.
struct RunningStats {
    std::size_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void push(double x);
    double variance() const { return n >= 2 ? m2 / static_cast<double>(n - 1) : 0.0; }
};

/// Bottleneck expert f(x) = ReLU(x W_down) W_up.
struct AdapterExpert {
    Parameter down;  // d x r
    Parameter up;    // r x d
    std::size_t birth_task = 0;

    /// W_down ~ N(0, 0.02^2), W_up = 0: a newborn expert outputs exactly zero.
    static AdapterExpert create(const std::string& name, std::size_t width, std::size_t rank,
                                std::size_t birth_task, Rng& rng);

    std::size_t width() const { return down.value().rows(); }
    std::size_t rank() const { return down.value().cols(); }
    bool frozen() const { return down.frozen() && up.frozen(); }
};

/// Per-expert novelty estimator: a d -> r_e -> d ReLU autoencoder without
/// biases (so d(0) = 0) and the running statistics of its per-sample
/// reconstruction error.
struct EstimatorState {
    Parameter encoder;  // d x r_e
    Parameter decoder;  // r_e x d
    RunningStats stats;
    bool stats_locked = false;

    static EstimatorState create(const std::string& name, std::size_t width, std::size_t hidden, Rng& rng);

    bool frozen() const { return encoder.frozen() && decoder.frozen() && stats_locked; }
};

struct Expert {
    AdapterExpert adapter;
    EstimatorState estimator;
};

Tensor adapter_forward(const AdapterExpert& a, const Tensor& x);
Var adapter_forward(Tape& tape, AdapterExpert& a, Var x);

/// Reconstruction d(x) for a token matrix.
Tensor reconstruct(const EstimatorState& e, const Tensor& x);
/// sum over tokens of ||x - d(x)||^2. The input is treated as a constant, so
/// only estimator weights receive gradient.
Var estimator_loss(Tape& tape, EstimatorState& e, const Tensor& x);
double estimator_loss(const EstimatorState& e, const Tensor& x);

/// Per-sample errors for a batch stored as consecutive groups of `tokens` rows.
std::vector<double> reconstruction_errors(const EstimatorState& e, const Tensor& x, std::size_t tokens);

/// Mean over samples of (err - mu) / sqrt(sigma^2 + 1e-8). Pure read.
/// Throws InsufficientStatistics while fewer than two errors were recorded.
double reconstruction_zscore(const EstimatorState& e, std::span<const double> errors);

/// Pushes errors into the running statistics; ContractViolation once locked.
void update_running_stats(EstimatorState& e, std::span<const double> errors);

/// Locks adapter weights, estimator weights and statistics. Idempotent.
void freeze(Expert& expert);

}  // namespace lcl
