#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "lcl/adapters/adapters.hpp"
#include "lcl/errors.hpp"
#include "lcl/numerics/ops.hpp"
#include "lcl/numerics/optimizer.hpp"

using namespace lcl;

namespace {

Tensor oracle_adapter(const Tensor& x, const Tensor& down, const Tensor& up) {
    const std::size_t n = x.rows(), d = x.cols(), r = down.cols();
    Tensor h({n, r}), out({n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < r; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += x(i, k) * down(k, j);
            h(i, j) = std::max(0.0, s);
        }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = 0; k < r; ++k) out(i, j) += h(i, k) * up(k, j);
    return out;
}

}  // namespace

TEST(Adapter, BirthAndZeroInputGiveZero) {
    Rng rng(1);
    AdapterExpert a = AdapterExpert::create("a", 6, 3, 0, rng);
    for (double v : a.up.value().values()) EXPECT_EQ(v, 0.0);
    const Tensor x = rng.normal_tensor({4, 6}, 1.0);
    const Tensor y = adapter_forward(a, x);
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
    a.up.value() = rng.normal_tensor({3, 6}, 1.0);
    const Tensor z = adapter_forward(a, Tensor({4, 6}));
    for (double v : z.values()) EXPECT_EQ(v, 0.0);
}

TEST(Adapter, MatchesComposedOracle) {
    for (int seed = 0; seed < 5; ++seed) {
        Rng rng(100 + seed);
        AdapterExpert a = AdapterExpert::create("a", 7, 3, 0, rng);
        a.up.value() = rng.normal_tensor({3, 7}, 1.0);
        const Tensor x = rng.normal_tensor({5, 7}, 1.0);
        const Tensor got = adapter_forward(a, x), want = oracle_adapter(x, a.down.value(), a.up.value());
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    }
}

TEST(Estimator, LossIsZeroAtOriginAndNonnegative) {
    Rng rng(2);
    EstimatorState e = EstimatorState::create("e", 5, 2, rng);
    e.decoder.value() = rng.normal_tensor({2, 5}, 1.0);
    EXPECT_EQ(estimator_loss(e, Tensor({3, 5})), 0.0);
    for (int i = 0; i < 10; ++i) EXPECT_GE(estimator_loss(e, rng.normal_tensor({3, 5}, 2.0)), 0.0);
}

TEST(Estimator, LearnsASingleRepeatedVector) {
    for (int seed = 0; seed < 5; ++seed) {
        Rng rng(300 + seed);
        EstimatorState e = EstimatorState::create("e", 6, 8, rng);
        Tensor x({4, 6});
        const Tensor v = rng.normal_tensor({1, 6}, 1.0);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 6; ++j) x(i, j) = v[j];
        AdamW opt({&e.encoder, &e.decoder}, AdamWOptions{.lr = 0.02, .weight_decay = 0.0});
        for (int step = 0; step < 500; ++step) {
            opt.zero_grad();
            Tape tape;
            tape.backward(estimator_loss(tape, e, x));
            opt.step();
        }
        EXPECT_LT(estimator_loss(e, x), 1e-3) << "seed " << seed;
    }
}

TEST(RunningStats, WelfordMatchesTwoPassOracle) {
    RunningStats s;
    for (double v : {2.0, 2.0, 2.0}) s.push(v);
    EXPECT_EQ(s.mean, 2.0);
    EXPECT_EQ(s.variance(), 0.0);

    RunningStats t;
    for (double v : {1.0, 2.0, 3.0}) t.push(v);
    EXPECT_DOUBLE_EQ(t.mean, 2.0);
    EXPECT_DOUBLE_EQ(t.variance(), 1.0);  // sample form: 2 / (3 - 1)

    Rng rng(4);
    std::vector<double> xs(200);
    for (double& x : xs) x = rng.normal(3.0, 2.0);
    RunningStats a, b;
    for (double x : xs) a.push(x);
    std::vector<double> shuffled = xs;
    std::reverse(shuffled.begin(), shuffled.end());
    std::rotate(shuffled.begin(), shuffled.begin() + 37, shuffled.end());
    for (double x : shuffled) b.push(x);
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= 200.0;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    EXPECT_NEAR(a.mean, mean, 1e-9);
    EXPECT_NEAR(b.mean, a.mean, 1e-9);
    EXPECT_NEAR(a.variance(), ss / 199.0, 1e-9);
}

TEST(ZScore, ForcedCasesAndInsufficientStatistics) {
    Rng rng(5);
    EstimatorState e = EstimatorState::create("e", 4, 2, rng);
    std::vector<double> one{5.0};
    EXPECT_THROW(reconstruction_zscore(e, one), InsufficientStatistics);
    e.stats = RunningStats{2, 1.0, 4.0};  // mu = 1, sigma^2 = 4 / (2 - 1)
    EXPECT_NEAR(reconstruction_zscore(e, one), 2.0, 1e-8);
    std::vector<double> at_mean{1.0, 1.0};
    EXPECT_EQ(reconstruction_zscore(e, at_mean), 0.0);
}

TEST(ZScore, InDistributionDrawsStayNearZero) {
    int within = 0;
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng(500 + seed);
        EstimatorState e = EstimatorState::create("e", 4, 2, rng);
        std::vector<double> fit(200), probe(50);
        for (double& x : fit) x = rng.normal(3.0, 0.7);
        for (double& x : probe) x = rng.normal(3.0, 0.7);
        update_running_stats(e, fit);
        within += std::abs(reconstruction_zscore(e, probe)) < 0.5;
    }
    EXPECT_EQ(within, 20);
}

TEST(Freeze, LocksStatsWeightsAndIsIdempotent) {
    Rng rng(6);
    Expert x{AdapterExpert::create("a", 4, 2, 0, rng), EstimatorState::create("e", 4, 2, rng)};
    std::vector<double> errs{1.0, 2.0};
    update_running_stats(x.estimator, errs);
    freeze(x);
    freeze(x);
    EXPECT_TRUE(x.adapter.frozen());
    EXPECT_TRUE(x.estimator.frozen());
    EXPECT_THROW(update_running_stats(x.estimator, errs), ContractViolation);

    const std::uint64_t before = checksum(x.adapter.down.value());
    x.adapter.down.grad().fill(1.0);
    AdamW opt({&x.adapter.down}, AdamWOptions{});
    EXPECT_THROW(opt.step(), ContractViolation);
    EXPECT_EQ(checksum(x.adapter.down.value()), before);
}

TEST(ReconstructionErrors, PerSampleSumsOverTokens) {
    Rng rng(7);
    EstimatorState e = EstimatorState::create("e", 3, 2, rng);
    e.decoder.value() = rng.normal_tensor({2, 3}, 1.0);
    const Tensor x = rng.normal_tensor({6, 3}, 1.0);
    const auto errs = reconstruction_errors(e, x, 3);
    ASSERT_EQ(errs.size(), 2u);
    EXPECT_NEAR(errs[0], estimator_loss(e, x.row_slice(0, 3)), 1e-12);
    EXPECT_NEAR(errs[1], estimator_loss(e, x.row_slice(3, 3)), 1e-12);
    EXPECT_THROW(reconstruction_errors(e, x, 4), ShapeError);
}
