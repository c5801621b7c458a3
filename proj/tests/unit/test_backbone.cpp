#include <gtest/gtest.h>

#include <vector>

#include "lcl/backbone/backbone.hpp"
#include "lcl/errors.hpp"
#include "lcl/numerics/ops.hpp"

using namespace lcl;

namespace {

BackboneConfig small_config() {
    BackboneConfig c;
    c.image = 8;
    c.channels = 2;
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

SegSample random_sample(const BackboneConfig& c, Rng& rng) {
    SegSample s;
    s.image = rng.normal_tensor({c.image, c.image, c.channels}, 1.0);
    s.mask.resize(c.image * c.image);
    for (int& m : s.mask) m = static_cast<int>(rng.uniform() * 3.0);
    return s;
}

struct Fixture {
    BackboneConfig config = small_config();
    Rng rng{17};
    ConceptMatrix concepts = synth_concepts({{"a", {{"x", 1.0}, {"y", 0.5}}}}, 6, 3).matrix;
    ToyBackbone bb = ToyBackbone::create(config, concepts.dim(), concepts.size(), rng);
    SegmentationHead head = SegmentationHead::create(config);
    std::vector<SegSample> samples;
    std::vector<const SegSample*> batch;
    Tensor patches;

    Fixture() {
        register_task_classes(head, {"l0", "l1"}, 0);
        for (auto& r : head.rows) {
            r.weight.value() = rng.normal_tensor(r.weight.value().shape(), 0.5);
            r.bias.value() = rng.normal_tensor(r.bias.value().shape(), 0.5);
        }
        for (int i = 0; i < 3; ++i) samples.push_back(random_sample(config, rng));
        for (const auto& s : samples) batch.push_back(&s);
        patches = patchify(batch, config);
    }

    std::vector<Tensor> logits(const ForwardOptions& opts = {}) {
        Tape tape;
        const ForwardResult r = forward(tape, bb, head, concepts, patches, batch.size(), opts);
        std::vector<Tensor> out;
        for (const Var& v : r.class_logits) out.push_back(v.value());
        return out;
    }
};

}  // namespace

TEST(Patchify, PixelPlacementOracle) {
    const BackboneConfig c = small_config();
    Rng rng(1);
    SegSample a = random_sample(c, rng), b = random_sample(c, rng);
    const Tensor p = patchify({&a, &b}, c);
    const std::size_t g = c.image / c.patch;
    ASSERT_EQ(p.shape(), (Shape{2 * c.tokens(), c.patch_features()}));
    const SegSample* src[] = {&a, &b};
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t y = 0; y < c.image; ++y)
            for (std::size_t x = 0; x < c.image; ++x)
                for (std::size_t ch = 0; ch < c.channels; ++ch) {
                    const std::size_t row = s * c.tokens() + (y / c.patch) * g + x / c.patch;
                    const std::size_t col = ((y % c.patch) * c.patch + x % c.patch) * c.channels + ch;
                    EXPECT_EQ(p(row, col), src[s]->image[(y * c.image + x) * c.channels + ch]);
                }
    SegSample wrong;
    wrong.image = Tensor({4, 4, 2});
    EXPECT_THROW(patchify({&wrong}, c), ShapeError);
}

TEST(Patchify, MaskRoundTrip) {
    const BackboneConfig c = small_config();
    Rng rng(2);
    SegSample a = random_sample(c, rng), b = random_sample(c, rng);
    const Tensor m = patch_mask({&a, &b}, 2, c);
    for (std::size_t s = 0; s < 2; ++s) {
        const auto back = unpatchify(m, s, c);
        const auto& mask = (s == 0 ? a : b).mask;
        for (std::size_t i = 0; i < mask.size(); ++i) EXPECT_EQ(back[i], mask[i] == 2 ? 1.0 : 0.0);
    }
}

TEST(Head, RegisterClassesFreezesEarlierLesionRows) {
    SegmentationHead h = SegmentationHead::create(small_config());
    ASSERT_EQ(h.size(), 1u);
    EXPECT_EQ(register_task_classes(h, {"a"}, 0), (std::vector<std::size_t>{1}));
    EXPECT_EQ(register_task_classes(h, {"b", "c"}, 1), (std::vector<std::size_t>{2, 3}));
    EXPECT_EQ(h.size(), 4u);
    EXPECT_EQ(h.index_of("c"), 3u);
    EXPECT_TRUE(h.rows[1].weight.frozen());
    EXPECT_TRUE(h.rows[1].bias.frozen());
    EXPECT_FALSE(h.rows[0].weight.frozen());
    EXPECT_FALSE(h.rows[2].weight.frozen());
    for (double v : h.rows[3].weight.value().values()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(register_task_classes(h, {"a"}, 2), RegistryError);
    EXPECT_THROW(register_task_classes(h, {"d", "d"}, 2), RegistryError);
    EXPECT_EQ(h.size(), 4u);
}

TEST(Forward, ZeroHeadPredictsBackground) {
    Fixture f;
    for (auto& r : f.head.rows) {
        r.weight.value().fill(0.0);
        r.bias.value().fill(0.0);
    }
    Tape tape;
    const ForwardResult r = forward(tape, f.bb, f.head, f.concepts, f.patches, f.batch.size(), {});
    ASSERT_EQ(r.class_logits.size(), 3u);
    for (std::size_t s = 0; s < f.batch.size(); ++s)
        for (int v : predict_mask(r, s, f.config)) EXPECT_EQ(v, 0);
}

TEST(Forward, NewbornExpertsLeaveOutputBitIdentical) {
    Fixture f;
    const auto before = f.logits();
    std::size_t grown = 0;
    for (AdapterSite* s : f.bb.sites()) {
        if (!s->expandable) continue;
        s->grow(0, f.config.rank, f.config.estimator_hidden, f.rng);
        ++grown;
    }
    ASSERT_GT(grown, 0u);
    const auto after = f.logits();
    for (std::size_t k = 0; k < before.size(); ++k) EXPECT_TRUE(before[k].bit_equal(after[k])) << "row " << k;

    // A trained expert does move the output.
    for (AdapterSite* s : f.bb.sites())
        if (s->size() > 0) s->experts[0].adapter.up.value() = f.rng.normal_tensor(s->experts[0].adapter.up.value().shape(), 1.0);
    EXPECT_FALSE(before[1].bit_equal(f.logits()[1]));
}

TEST(Forward, CachedPrefixMatchesFullForward) {
    Fixture f;
    for (AdapterSite* s : f.bb.sites()) {
        if (!s->expandable) continue;
        s->grow(0, f.config.rank, f.config.estimator_hidden, f.rng);
        s->experts[0].adapter.up.value() = f.rng.normal_tensor(s->experts[0].adapter.up.value().shape(), 1.0);
    }
    const auto full = f.logits();
    const Tensor hidden = hidden_before(f.bb, f.patches, f.batch.size(), 1);
    ForwardOptions o;
    o.start_block = 1;
    o.cached_hidden = &hidden;
    const auto cached = f.logits(o);
    for (std::size_t k = 0; k < full.size(); ++k)
        for (std::size_t i = 0; i < full[k].size(); ++i) EXPECT_NEAR(cached[k][i], full[k][i], 1e-12);
}

TEST(PredictMask, LesionNeedsPositiveLogitAndHighestWins) {
    BackboneConfig c = small_config();
    c.image = 4;
    c.channels = 1;
    // Pixel-space logit maps, turned into patch layout through patchify.
    auto layout = [&](const std::vector<double>& pixels) {
        SegSample s;
        s.image = Tensor({c.image, c.image, 1});
        for (std::size_t i = 0; i < pixels.size(); ++i) s.image[i] = pixels[i];
        return patchify({&s}, c);
    };
    const std::vector<double> bg(16, 5.0);
    std::vector<double> l1(16, -1.0), l2(16, -2.0);
    l1[1] = 0.5, l2[1] = 0.2;   // -> 1
    l1[2] = 0.5, l2[2] = 0.7;   // -> 2
    l1[3] = 0.0, l2[3] = 0.0;   // probability exactly 0.5 -> background
    l1[4] = 0.3, l2[4] = 0.3;   // tie -> first lesion class
    l1[5] = -0.1, l2[5] = 1e-9; // -> 2
    Tape tape;
    ForwardResult r;
    r.class_logits = {tape.constant(layout(bg)), tape.constant(layout(l1)), tape.constant(layout(l2))};
    const auto m = predict_mask(r, 0, c);
    const std::vector<int> want{0, 1, 2, 0, 1, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    EXPECT_EQ(m, want);
}
