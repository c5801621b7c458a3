#include "lcl/adapters/adapters.hpp"

#include <cmath>

#include "lcl/errors.hpp"
#include "lcl/numerics/ops.hpp"

namespace lcl {

namespace {

constexpr double kZEps = 1e-8;

void check_width(std::size_t expected, const Tensor& x, const char* what) {
    if (x.rank() != 2 || x.cols() != expected) {
        throw ShapeError(std::string(what) + ": input " + shape_str(x.shape()) + " does not match width " +
                         std::to_string(expected));
    }
}

}  // namespace

void RunningStats::push(double x) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
}

AdapterExpert AdapterExpert::create(const std::string& name, std::size_t width, std::size_t rank,
                                    std::size_t birth_task, Rng& rng) {
    if (rank == 0 || rank >= width) throw ParameterError("adapter rank must satisfy 0 < r < d");
    AdapterExpert a;
    a.down = Parameter(name + ".down", rng.normal_tensor({width, rank}, 0.02));
    a.up = Parameter(name + ".up", Tensor({rank, width}));
    a.birth_task = birth_task;
    return a;
}

EstimatorState EstimatorState::create(const std::string& name, std::size_t width, std::size_t hidden, Rng& rng) {
    if (hidden == 0) throw ParameterError("estimator hidden width must be positive");
    EstimatorState e;
    e.encoder = Parameter(name + ".enc", rng.normal_tensor({width, hidden}, 1.0 / std::sqrt(static_cast<double>(width))));
    e.decoder = Parameter(name + ".dec", rng.normal_tensor({hidden, width}, 1.0 / std::sqrt(static_cast<double>(hidden))));
    return e;
}

Tensor adapter_forward(const AdapterExpert& a, const Tensor& x) {
    check_width(a.width(), x, "adapter_forward");
    return matmul(relu(matmul(x, a.down.value())), a.up.value());
}

Var adapter_forward(Tape& tape, AdapterExpert& a, Var x) {
    check_width(a.width(), x.value(), "adapter_forward");
    return ops::matmul(ops::relu(ops::matmul(x, tape.param(a.down))), tape.param(a.up));
}

Tensor reconstruct(const EstimatorState& e, const Tensor& x) {
    check_width(e.encoder.value().rows(), x, "estimator");
    return matmul(relu(matmul(x, e.encoder.value())), e.decoder.value());
}

Var estimator_loss(Tape& tape, EstimatorState& e, const Tensor& x) {
    check_width(e.encoder.value().rows(), x, "estimator_loss");
    const Var in = tape.constant(x);
    const Var rec = ops::matmul(ops::relu(ops::matmul(in, tape.param(e.encoder))), tape.param(e.decoder));
    return ops::squared_error(in, rec);
}

double estimator_loss(const EstimatorState& e, const Tensor& x) {
    const Tensor rec = reconstruct(e, x);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - rec[i]) * (x[i] - rec[i]);
    return s;
}

std::vector<double> reconstruction_errors(const EstimatorState& e, const Tensor& x, std::size_t tokens) {
    if (tokens == 0 || x.rows() % tokens != 0) throw ShapeError("reconstruction_errors: rows not divisible by tokens");
    const Tensor rec = reconstruct(e, x);
    const std::size_t per = tokens * x.cols();
    std::vector<double> out(x.rows() / tokens, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) out[i / per] += (x[i] - rec[i]) * (x[i] - rec[i]);
    return out;
}

double reconstruction_zscore(const EstimatorState& e, std::span<const double> errors) {
    if (e.stats.n < 2) {
        throw InsufficientStatistics("z-score needs at least two recorded errors, have " + std::to_string(e.stats.n));
    }
    if (errors.empty()) throw EmptyInputError("z-score of zero samples");
    const double denom = std::sqrt(e.stats.variance() + kZEps);
    double acc = 0.0;
    for (double err : errors) acc += (err - e.stats.mean) / denom;
    return acc / static_cast<double>(errors.size());
}

void update_running_stats(EstimatorState& e, std::span<const double> errors) {
    if (e.stats_locked) throw ContractViolation("running statistics of a frozen estimator cannot change");
    for (double err : errors) e.stats.push(err);
}

void freeze(Expert& expert) {
    expert.adapter.down.freeze();
    expert.adapter.up.freeze();
    expert.estimator.encoder.freeze();
    expert.estimator.decoder.freeze();
    expert.estimator.stats_locked = true;
}

}  // namespace lcl
