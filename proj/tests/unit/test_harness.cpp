#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "lcl/errors.hpp"
#include "lcl/harness/checkpoint.hpp"
#include "lcl/harness/config.hpp"
#include "lcl/harness/data.hpp"
#include "lcl/harness/run.hpp"
#include "lcl/numerics/ops.hpp"

using namespace lcl;
using CKind = CheckpointError::Kind;

namespace {

// Seconds-scale run: small samples, two epochs.
RunConfig tiny(const std::string& stream, Mode mode = Mode::Core) {
    RunConfig c;
    c.stream = stream;
    c.mode = mode;
    c.samples_per_task = 40;
    c.epochs = 2;
    c.log_steps = false;
    return c;
}

RunResult run(const RunConfig& cfg) {
    ConceptMatrix concepts;
    TaskStream stream = build_stream(cfg, concepts);
    return run_continual(cfg, stream, concepts);
}

CKind checkpoint_kind(const std::string& bytes) {
    try {
        deserialize_model(bytes);
    } catch (const CheckpointError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "checkpoint accepted";
    return CKind::Io;
}

std::vector<Tensor> probe(Model& m, std::uint64_t seed) {
    Rng rng(seed);
    const BackboneConfig& c = m.backbone.config;
    std::vector<SegSample> s(2);
    for (auto& x : s) x.image = rng.normal_tensor({c.image, c.image, c.channels}, 1.0);
    const std::vector<const SegSample*> batch{&s[0], &s[1]};
    Tape tape;
    ForwardOptions o;
    o.lambda = 0.7;
    const ForwardResult r = forward(tape, m.backbone, m.head, m.concepts, patchify(batch, c), 2, o);
    std::vector<Tensor> out;
    for (const Var& v : r.class_logits) out.push_back(v.value());
    return out;
}

}  // namespace

TEST(Config, TextGrammarAndErrors) {
    RunConfig c;
    apply_config_text(c, "# comment\n\nmode = finetune   # trailing\nlambda=0.25\n  epochs = 3\nexpandable_blocks = 1,3\n");
    EXPECT_EQ(c.mode, Mode::Finetune);
    EXPECT_EQ(c.lambda, 0.25);
    EXPECT_EQ(c.epochs, 3u);
    EXPECT_EQ(c.backbone.expandable_blocks, (std::vector<std::size_t>{1, 3}));
    try {
        set_config_value(c, "no_such_key", "1");
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("no_such_key"), std::string::npos);
    }
    EXPECT_THROW(set_config_value(c, "epochs", "three"), ValidationError);
    EXPECT_THROW(set_config_value(c, "mode", "bogus"), ValidationError);
    EXPECT_THROW(apply_config_text(c, "epochs 3\n"), ValidationError);
    RunConfig bad;
    bad.lambda = 1.5;
    EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Config, TextRoundTripAndShippedFiles) {
    RunConfig c;
    c.seed = 99;
    c.mode = Mode::RandConcepts;
    c.lambda = 0.1 + 0.2;  // not exactly representable in short form
    c.tau_i = 1.75;
    c.output_dir = "out/x";
    const std::string text = config_to_text(c);
    RunConfig back;
    apply_config_text(back, text);
    EXPECT_EQ(config_to_text(back), text);
    EXPECT_EQ(back.lambda, c.lambda);
    for (const auto& key : config_keys()) EXPECT_NE(text.find(key + " = "), std::string::npos) << key;

    const std::filesystem::path dir = std::filesystem::path(LCL_SOURCE_DIR) / "configs";
    const RunConfig base = load_config(dir / "base.cfg");
    EXPECT_NO_THROW(base.validate());
    const RunConfig quick = load_config(dir / "quick.cfg");
    EXPECT_EQ(quick.stream, "standard");
    EXPECT_EQ(quick.epochs, 5u);
    EXPECT_THROW(load_config(dir / "missing.cfg"), std::exception);
}

TEST(Stream, DeterministicSplitsAndMasks) {
    const BackboneConfig bc;
    const StreamRecipe rec = standard_stream(30);
    const ConceptMatrix cm = recipe_concepts(rec, 16, 3);
    const TaskStream a = generate_stream(rec.specs, cm, 5, bc), b = generate_stream(rec.specs, cm, 5, bc);
    const TaskStream other = generate_stream(rec.specs, cm, 6, bc);
    ASSERT_EQ(a.size(), 4u);
    for (std::size_t t = 0; t < a.size(); ++t) {
        const auto& spec = a.spec(t);
        EXPECT_EQ(a.train(t).size() + a.val(t).size() + a.test(t).size(), spec.samples);
        EXPECT_EQ(a.train(t).size(), spec.train_count());
        for (std::size_t i = 0; i < a.train(t).size(); ++i) {
            EXPECT_TRUE(a.train(t)[i].image.bit_equal(b.train(t)[i].image));
            EXPECT_EQ(a.train(t)[i].mask, b.train(t)[i].mask);
        }
        EXPECT_FALSE(a.train(t)[0].image.bit_equal(other.train(t)[0].image));
        for (const auto* split : {&a.train(t), &a.val(t), &a.test(t)})
            for (const SegSample& s : *split) {
                EXPECT_EQ(s.task, t);
                std::size_t lesion = 0;
                for (int v : s.mask) {
                    EXPECT_TRUE(v == 0 || v == static_cast<int>(t + 1));
                    lesion += v != 0;
                }
                EXPECT_GT(lesion, 0u);
            }
    }
}

TEST(Stream, IntensityIsZScoredPerImage) {
    const BackboneConfig bc;
    const StreamRecipe rec = standard_stream(20);
    const TaskStream s = generate_stream(rec.specs, recipe_concepts(rec, 16, 1), 2, bc);
    const Tensor& img = s.train(0)[0].image;
    const std::size_t n = bc.image * bc.image;
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += img[i * bc.channels];
    mean /= n;
    for (std::size_t i = 0; i < n; ++i) sq += (img[i * bc.channels] - mean) * (img[i * bc.channels] - mean);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(sq / n, 1.0, 1e-9);
}

TEST(Stream, SharedProfileSharesConceptActivation) {
    const BackboneConfig bc;
    for (const std::string kind : {"repeat", "image_shift", "full_shift"}) {
        const StreamRecipe rec = dual_signal_stream(kind, 20);
        const TaskStream s = generate_stream(rec.specs, recipe_concepts(rec, 16, 1), 1, bc);
        ASSERT_EQ(s.size(), 2u);
        const bool same_profile = s.concept_activation(0).bit_equal(s.concept_activation(1));
        const bool same_modality = s.spec(0).modality.name == s.spec(1).modality.name;
        EXPECT_EQ(same_profile, kind != "full_shift") << kind;
        EXPECT_EQ(same_modality, kind == "repeat") << kind;
    }
    const StreamRecipe d = default_stream(20);
    EXPECT_EQ(d.specs.size(), 12u);
    EXPECT_EQ(d.profiles.size(), 7u);
}

TEST(Stream, ReleasedTrainingDataIsGone) {
    const BackboneConfig bc;
    const StreamRecipe rec = dual_signal_stream("repeat", 20);
    TaskStream s = generate_stream(rec.specs, recipe_concepts(rec, 16, 1), 1, bc);
    s.release(0);
    EXPECT_TRUE(s.released(0));
    EXPECT_THROW(s.train(0), ContractViolation);
    EXPECT_THROW(s.val(0), ContractViolation);
    EXPECT_FALSE(s.test(0).empty());
    EXPECT_FALSE(s.train(1).empty());
}

TEST(Checkpoint, RoundTripRestoresStructureAndOutputs) {
    RunResult r = run(tiny("standard"));
    const std::string bytes = serialize_model(r.model);
    Model back = deserialize_model(bytes);
    EXPECT_EQ(serialize_model(back), bytes);
    const auto sa = r.model.backbone.sites();
    const auto sb = back.backbone.sites();
    ASSERT_EQ(sa.size(), sb.size());
    for (std::size_t i = 0; i < sa.size(); ++i) {
        EXPECT_EQ(sa[i]->size(), sb[i]->size());
        for (std::size_t k = 0; k < sa[i]->size(); ++k) {
            EXPECT_EQ(sa[i]->experts[k].estimator.stats.n, sb[i]->experts[k].estimator.stats.n);
            EXPECT_EQ(sa[i]->experts[k].adapter.frozen(), sb[i]->experts[k].adapter.frozen());
        }
    }
    EXPECT_EQ(back.head.size(), r.model.head.size());
    const auto pa = probe(r.model, 4), pb = probe(back, 4);
    for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_TRUE(pa[k].bit_equal(pb[k]));

    const auto path = std::filesystem::temp_directory_path() / "lcl_harness.ckpt";
    save_checkpoint(r.model, path);
    EXPECT_EQ(serialize_model(load_checkpoint(path)), bytes);
    std::filesystem::remove(path);
    try {
        load_checkpoint(path);
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CKind::Io);
    }
}

TEST(Checkpoint, RejectsDamagedBytes) {
    const std::string bytes = serialize_model(run(tiny("repeat")).model);
    EXPECT_EQ(checkpoint_kind(bytes.substr(0, bytes.size() / 2)), CKind::Corrupt);
    EXPECT_EQ(checkpoint_kind(bytes.substr(0, 10)), CKind::Corrupt);
    std::string magic = bytes;
    magic[0] = 'X';
    EXPECT_EQ(checkpoint_kind(magic), CKind::BadMagic);
    std::string version = bytes;
    version[4] = static_cast<char>(kCheckpointVersion + 1);
    EXPECT_EQ(checkpoint_kind(version), CKind::VersionMismatch);
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x01;
    EXPECT_EQ(checkpoint_kind(flipped), CKind::Corrupt);
}

TEST(Run, ReportRebuiltFromLog) {
    RunResult r = run(tiny("standard"));
    const RunResult back = report_from_log(r.log);
    EXPECT_TRUE(back.ledger == r.ledger);
    ASSERT_EQ(back.decisions.size(), r.decisions.size());
    for (std::size_t i = 0; i < r.decisions.size(); ++i) {
        EXPECT_EQ(back.decisions[i].site, r.decisions[i].site);
        EXPECT_EQ(back.decisions[i].expanded, r.decisions[i].expanded);
        EXPECT_EQ(back.decisions[i].experts_after, r.decisions[i].experts_after);
    }
    EXPECT_EQ(routing_heatmap_csv(back.heatmap), routing_heatmap_csv(r.heatmap));
    EXPECT_THROW(report_from_log({"not json"}), ValidationError);
    EXPECT_THROW(report_from_log({}), ValidationError);
}

TEST(Run, SameSeedSameLedgerAndWeights) {
    RunResult a = run(tiny("standard")), b = run(tiny("standard"));
    EXPECT_TRUE(a.ledger == b.ledger);
    EXPECT_EQ(serialize_model(a.model), serialize_model(b.model));
    RunConfig other = tiny("standard");
    other.seed = 2;
    EXPECT_NE(serialize_model(run(other).model), serialize_model(a.model));
}

TEST(Run, ReleasingTrainingDataChangesNothing) {
    RunConfig keep = tiny("standard");
    keep.release_data = false;
    RunResult a = run(tiny("standard")), b = run(keep);
    EXPECT_TRUE(a.ledger == b.ledger);
    EXPECT_EQ(serialize_model(a.model), serialize_model(b.model));
}

TEST(Run, RepeatedTaskAddsNoExperts) {
    const RunResult r = run(tiny("repeat"));
    std::size_t first = 0, second = 0;
    for (const auto& d : r.decisions) (d.task == 0 ? first : second) += d.expanded;
    EXPECT_GT(first, 0u);
    EXPECT_EQ(second, 0u);
}

TEST(Run, IndividualModeHasNoForgetting) {
    const RunResult r = run(tiny("standard", Mode::Individual));
    EXPECT_DOUBLE_EQ(bwt(r.ledger), 100.0);
    for (std::size_t j = 0; j < r.ledger.size(); ++j) EXPECT_EQ(r.ledger.at(r.ledger.size() - 1, j), r.ledger.at(j, j));
}
