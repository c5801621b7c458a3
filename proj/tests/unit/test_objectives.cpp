#include <gtest/gtest.h>

#include <cmath>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "lcl/errors.hpp"
#include "lcl/objectives/objectives.hpp"

using namespace lcl;
using big = boost::multiprecision::cpp_bin_float_quad;

namespace {

BackboneConfig small_config() {
    BackboneConfig c;
    c.image = 8;
    c.patch = 2;
    c.width = 8;
    c.blocks = 2;
    c.heads = 2;
    c.mlp_ratio = 2;
    c.rank = 2;
    c.estimator_hidden = 2;
    c.expandable_blocks = {1};
    return c;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(Dice, WorkedExample) {
    const Tensor p = Tensor::matrix(1, 4, {1, 1, 0, 0}), t = Tensor::matrix(1, 4, {1, 0, 0, 0});
    EXPECT_NEAR(dice_loss(p, t, 0.0), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(dice_loss(p, t), 1.0 / 3.0, 1e-5);
    EXPECT_NEAR(dice_loss(t, t), 0.0, 1e-12);
    // Empty prediction and target: eps keeps the loss at zero.
    EXPECT_EQ(dice_loss(Tensor({1, 4}), Tensor({1, 4})), 0.0);
}

TEST(Bce, HalfIsLn2AndMatchesQuadPrecision) {
    const Tensor half = Tensor::matrix(1, 2, {0.5, 0.5});
    EXPECT_NEAR(bce_loss(half, Tensor::matrix(1, 2, {1, 0})), std::log(2.0), 1e-15);
    const std::vector<double> p{0.1, 0.35, 0.8, 0.999}, t{0, 1, 1, 0};
    big want = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const big pi(p[i]);
        want -= big(t[i]) * boost::multiprecision::log(pi) + big(1 - t[i]) * boost::multiprecision::log(1 - pi);
    }
    want /= p.size();
    EXPECT_NEAR(bce_loss(Tensor({1, 4}, p), Tensor({1, 4}, t)), static_cast<double>(want), 1e-14);
    // Clamping keeps saturated probabilities finite.
    EXPECT_TRUE(std::isfinite(bce_loss(Tensor::matrix(1, 1, {0.0}), Tensor::matrix(1, 1, {1.0}))));
}

TEST(Compose, WeightsAndEstimatorTerms) {
    const LossReport r = compose_losses(0.5, 0.25, {{"e", 0.1}});
    EXPECT_NEAR(r.seg, 0.45, 1e-15);
    EXPECT_NEAR(r.total, 0.55, 1e-15);
    EXPECT_EQ(compose_losses(0.5, 0.25, {}).total, r.seg);
}

namespace {

struct Scene {
    BackboneConfig config = small_config();
    Rng rng{23};
    ConceptMatrix concepts = synth_concepts({{"a", {{"x", 1.0}}}}, 6, 4).matrix;
    ToyBackbone bb = ToyBackbone::create(config, concepts.dim(), concepts.size(), rng);
    SegmentationHead head = SegmentationHead::create(config);
    std::vector<SegSample> samples;
    std::vector<const SegSample*> batch;

    Scene() {
        register_task_classes(head, {"old"}, 0);
        register_task_classes(head, {"new"}, 1);
        for (auto& r : head.rows) {
            r.weight.value() = rng.normal_tensor(r.weight.value().shape(), 0.5);
            r.bias.value() = rng.normal_tensor(r.bias.value().shape(), 0.5);
        }
        for (AdapterSite* s : bb.sites())
            if (s->expandable) s->grow(1, config.rank, config.estimator_hidden, rng);
        for (int i = 0; i < 2; ++i) {
            SegSample s;
            s.task = 1;
            s.image = rng.normal_tensor({config.image, config.image, config.channels}, 1.0);
            s.mask.assign(config.image * config.image, 0);
            for (std::size_t p = 10 + i; p < 30; ++p) s.mask[p] = 2;
            samples.push_back(s);
        }
        for (const auto& s : samples) batch.push_back(&s);
    }
};

}  // namespace

TEST(Objective, MatchesPixelSpaceOracle) {
    Scene s;
    Tape tape;
    ForwardOptions o;
    o.keep_site_inputs = true;
    const ForwardResult out = forward(tape, s.bb, s.head, s.concepts, patchify(s.batch, s.config), 2, o);
    const Objective obj = total_objective(tape, out, s.batch, s.head, {0, 2}, s.bb);

    double dice = 0.0, bce = 0.0;
    for (std::size_t row : {0, 2}) {
        double row_bce = 0.0, row_dice = 0.0, n = 0.0;
        for (std::size_t b = 0; b < 2; ++b) {
            const auto logits = unpatchify(out.class_logits[row].value(), b, s.config);
            double inter = 0.0, denom = 0.0;
            for (std::size_t px = 0; px < logits.size(); ++px) {
                const double p = sigmoid(logits[px]), t = s.samples[b].mask[px] == static_cast<int>(row);
                inter += p * t;
                denom += p + t;
                row_bce -= t * std::log(p) + (1 - t) * std::log(1 - p);
                n += 1.0;
            }
            row_dice += (1.0 - (2.0 * inter + 1e-5) / (denom + 1e-5)) / 2.0;
        }
        dice += row_dice;
        bce += row_bce / n;
    }
    EXPECT_NEAR(obj.report.dice, dice, 1e-12);
    EXPECT_NEAR(obj.report.bce, bce, 1e-12);
    EXPECT_NEAR(obj.report.seg, 0.8 * dice + 0.2 * bce, 1e-12);
    ASSERT_EQ(obj.report.est.size(), 2u);  // one trainable estimator per expandable site
    double est = 0.0;
    for (const auto& [name, v] : obj.report.est) est += v;
    EXPECT_NEAR(obj.total.value()[0], obj.report.seg + est, 1e-12);

    const SegSample* other = &s.samples[0];
    SegSample mixed = s.samples[1];
    mixed.task = 0;
    EXPECT_THROW(total_objective(tape, out, {other, &mixed}, s.head, {0, 2}, s.bb), ContractViolation);
}

TEST(Objective, FrozenParametersReceiveNoGradient) {
    Scene s;
    s.bb.freeze_base();
    Tape tape;
    ForwardOptions o;
    o.keep_site_inputs = true;
    const ForwardResult out = forward(tape, s.bb, s.head, s.concepts, patchify(s.batch, s.config), 2, o);
    tape.backward(total_objective(tape, out, s.batch, s.head, {0, 2}, s.bb).total);

    auto all_zero = [](const Parameter& p) {
        for (double g : p.grad().values())
            if (g != 0.0) return false;
        return true;
    };
    for (Parameter* p : s.bb.base_parameters()) EXPECT_TRUE(all_zero(*p)) << p->name();
    EXPECT_TRUE(all_zero(s.head.rows[1].weight));
    EXPECT_FALSE(all_zero(s.head.rows[2].weight));
    EXPECT_FALSE(all_zero(s.head.rows[0].bias));
    for (AdapterSite* site : s.bb.sites())
        for (const auto& e : site->experts) EXPECT_FALSE(all_zero(e.adapter.up)) << site->id.str();  // down gets none while up is still zero
}
