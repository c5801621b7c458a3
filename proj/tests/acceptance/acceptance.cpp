// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any selected criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lcl/harness/checkpoint.hpp"
#include "lcl/harness/config.hpp"
#include "lcl/harness/grad_suite.hpp"
#include "lcl/harness/run.hpp"
#include "lcl/metrics/metrics.hpp"
#include "lcl/numerics/ops.hpp"

using namespace lcl;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string num(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

RunResult run(const RunConfig& cfg, const TaskObserver& observer = {}) {
    ConceptMatrix concepts;
    TaskStream stream = build_stream(cfg, concepts);
    return run_continual(cfg, stream, concepts, nullptr, observer);
}

RunConfig base(const std::string& stream, Mode mode, std::uint64_t seed) {
    RunConfig c;
    c.stream = stream;
    c.mode = mode;
    c.seed = seed;
    c.log_steps = false;
    c.log_routing = false;
    return c;
}

// ---------------------------------------------------------------------------

Verdict grad_integrity() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto entries = run_grad_suite(20, 1, 1e-5);
    const double secs = seconds_since(t0);
    Verdict v{secs < 30.0, ""};
    for (const auto& e : entries) {
        v.pass = v.pass && e.instances >= 20 && e.max_rel_error < 1e-4;
        v.detail += e.component + " " + sci(e.max_rel_error) + " (" + std::to_string(e.instances) + " inst), ";
    }
    v.detail += num(secs, 2) + " s; need < 1e-4 and < 30 s";
    return v;
}

std::vector<Tensor> probe_logits(Model& m, const std::vector<const SegSample*>& batch, double lambda) {
    Tape tape;
    ForwardOptions o;
    o.lambda = lambda;
    const ForwardResult r =
        forward(tape, m.backbone, m.head, m.concepts, patchify(batch, m.backbone.config), batch.size(), o);
    std::vector<Tensor> out;
    for (const Var& v : r.class_logits) out.push_back(v.value());
    return out;
}

double max_abs_change(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    double mx = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k)
        for (std::size_t i = 0; i < a[k].size(); ++i) mx = std::max(mx, std::abs(a[k][i] - b[k][i]));
    return mx;
}

bool bit_equal(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    for (std::size_t k = 0; k < a.size(); ++k)
        if (!a[k].bit_equal(b[k])) return false;
    return true;
}

void grow_any(AdapterSite& s, const BackboneConfig& c, Rng& rng) {
    const bool was = s.expandable;
    s.expandable = true;
    s.grow(0, c.rank, c.estimator_hidden, rng);
    s.expandable = was;
}

Verdict birth_identity() {
    RunConfig cfg = base("standard", Mode::Core, 1);
    ConceptMatrix concepts;
    TaskStream stream = build_stream(cfg, concepts);
    std::vector<const SegSample*> batch;
    for (std::size_t i = 0; i < 6; ++i) batch.push_back(&stream.test(i % stream.size())[i]);

    // A fresh model with random (nonzero) head rows so that logits depend on
    // every feature.
    auto fresh = [&]() {
        Model m = create_model(cfg, concepts, cfg.seed);
        register_task_classes(m.head, {"probe_a", "probe_b"}, 0);
        Rng rng(99);
        for (auto& r : m.head.rows) {
            r.weight.value() = rng.normal_tensor(r.weight.value().shape(), 0.5);
            r.bias.value() = rng.normal_tensor(r.bias.value().shape(), 0.5);
        }
        return m;
    };

    Model ref = fresh();
    const auto before = probe_logits(ref, batch, cfg.lambda);
    std::size_t sites = 0, exact = 0;
    Rng rng(5);
    for (std::size_t si = 0; si < ref.backbone.sites().size(); ++si) {
        Model m = fresh();
        grow_any(*m.backbone.sites()[si], cfg.backbone, rng);
        ++sites;
        exact += bit_equal(before, probe_logits(m, batch, cfg.lambda));
    }
    // Several untrained experts everywhere at once.
    Model many = fresh();
    for (AdapterSite* s : many.backbone.sites())
        for (int k = 0; k < 3; ++k) grow_any(*s, cfg.backbone, rng);
    const bool many_exact = bit_equal(before, probe_logits(many, batch, cfg.lambda));

    // Information only: a site that already holds trained experts.
    RunConfig small = cfg;
    small.samples_per_task = 60;
    small.epochs = 3;
    small.max_tasks = 2;
    RunResult trained = run(small);
    const auto tb = probe_logits(trained.model, batch, cfg.lambda);
    for (AdapterSite* s : trained.model.backbone.sites())
        if (s->size() > 0) grow_any(*s, cfg.backbone, rng);
    const double populated = max_abs_change(tb, probe_logits(trained.model, batch, cfg.lambda));

    Verdict v{exact == sites && many_exact, ""};
    v.detail = std::to_string(exact) + "/" + std::to_string(sites) + " single-site additions bit-identical, " +
               "3 experts at every site " + (many_exact ? "bit-identical" : "CHANGED") +
               "; info: adding to sites with trained experts moves logits by up to " + sci(populated) +
               " (softmax renormalisation)";
    return v;
}

// Structural key for every parameter so that keys survive growth.
std::map<std::string, std::uint64_t> param_checksums(const Model& m) {
    std::map<std::string, std::uint64_t> out;
    auto& bb = const_cast<ToyBackbone&>(m.backbone);
    const auto basep = bb.base_parameters();
    for (std::size_t i = 0; i < basep.size(); ++i) out["base/" + std::to_string(i)] = checksum(basep[i]->value());
    for (const AdapterSite* s : m.backbone.sites()) {
        const std::string p = s->id.str() + "/";
        out[p + "phi"] = checksum(s->projection.weight.value());
        for (std::size_t k = 0; k < s->size(); ++k) {
            const std::string e = p + "e" + std::to_string(k) + "/";
            out[e + "down"] = checksum(s->experts[k].adapter.down.value());
            out[e + "up"] = checksum(s->experts[k].adapter.up.value());
            out[e + "enc"] = checksum(s->experts[k].estimator.encoder.value());
            out[e + "dec"] = checksum(s->experts[k].estimator.decoder.value());
            const auto& st = s->experts[k].estimator.stats;
            out[e + "stats"] = checksum(Tensor({1, 3}, {static_cast<double>(st.n), st.mean, st.m2}));
            out[e + "wac"] = checksum(s->concept_columns[k].value());
            out[e + "wr"] = checksum(s->router_columns[k].value());
        }
    }
    for (std::size_t r = 0; r < m.head.size(); ++r) {
        out["head/" + m.head.rows[r].name + "/w"] = checksum(m.head.rows[r].weight.value());
        out["head/" + m.head.rows[r].name + "/b"] = checksum(m.head.rows[r].bias.value());
    }
    return out;
}

Verdict freeze_immutability() {
    RunConfig cfg = base("standard", Mode::Core, 1);
    cfg.epochs = 10;
    std::vector<std::map<std::string, std::uint64_t>> after;
    run(cfg, [&](std::size_t, const Model& m) { after.push_back(param_checksums(m)); });
    std::size_t checked = 0, changed = 0, background_changes = 0, grew = 0;
    std::string first_bad;
    for (std::size_t t = 1; t < after.size(); ++t) {
        for (const auto& [key, sum] : after[t - 1]) {
            const bool moved = after[t].at(key) != sum;
            if (key.rfind("head/background/", 0) == 0) {  // shared row, trainable on every task by design
                background_changes += moved && key.back() == 'w';
                continue;
            }
            ++checked;
            if (moved) {
                ++changed;
                if (first_bad.empty()) first_bad = key + " after task " + std::to_string(t + 1);
            }
        }
        grew += after[t].size() - after[t - 1].size();
    }
    Verdict v{after.size() == 4 && changed == 0 && checked > 0, ""};
    v.detail = std::to_string(checked) + " (parameter, task) checks over 4 tasks, " + std::to_string(changed) +
               " changed" + (first_bad.empty() ? "" : " (first: " + first_bad + ")") + "; " + std::to_string(grew) +
               " tensors born after task 1; shared background row updated on " + std::to_string(background_changes) +
               " later tasks (excluded)";
    return v;
}

Verdict dual_signal() {
    struct Row {
        std::string kind;
        std::size_t expanded = 0, concept_sig = 0, image_sig = 0, sites = 0;
    };
    std::vector<Row> rows;
    for (const std::string kind : {"repeat", "image_shift", "full_shift"}) {
        const RunResult r = run(base(kind, Mode::Core, 1));
        Row row{kind};
        for (const auto& d : r.decisions) {
            if (d.task != 1) continue;
            ++row.sites;
            row.expanded += d.expanded;
            row.concept_sig += d.concept_triggered;
            row.image_sig += d.image_triggered;
        }
        rows.push_back(row);
    }
    Verdict v{rows[0].expanded == 0 && rows[1].expanded == 0 && rows[2].expanded > 0 && rows[0].sites > 0, ""};
    for (const Row& r : rows) {
        v.detail += r.kind + ": task-2 expansions " + std::to_string(r.expanded) + "/" + std::to_string(r.sites) +
                    " (concept " + std::to_string(r.concept_sig) + ", image " + std::to_string(r.image_sig) + "); ";
    }
    v.detail += "need expansion only on full_shift";
    return v;
}

Verdict sublinear_growth() {
    std::vector<std::string> parts;
    bool pass = true;
    for (Mode mode : {Mode::ImageOnlyExpansion, Mode::Core}) {
        RunConfig cfg = base("default", mode, 1);
        cfg.epochs = 10;
        const RunResult r = run(cfg);
        std::string ks;
        for (const AdapterSite* s : r.model.backbone.sites()) {
            if (!s->expandable) continue;
            ks += (ks.empty() ? "" : "/") + std::to_string(s->size());
            pass = pass && (mode == Mode::Core ? s->size() <= 8 : s->size() >= 10);
        }
        pass = pass && r.seconds < 600.0;
        parts.push_back(mode_name(mode) + " K=" + ks + " in " + num(r.seconds, 0) + " s");
    }
    return {pass, parts[0] + ", " + parts[1] + "; need image_only >= 10, core <= 8, each < 600 s (12 tasks, 10 epochs)"};
}

Verdict forgetting_ordering() {
    const std::vector<std::uint64_t> seeds{1, 2, 3};
    std::map<Mode, double> mean_bwt;
    std::vector<double> core_final(4, 0.0), core_min(4, 1e9);
    for (Mode mode : {Mode::Individual, Mode::Core, Mode::Finetune}) {
        for (std::uint64_t s : seeds) {
            const RunResult r = run(base("standard", mode, s));
            mean_bwt[mode] += bwt(r.ledger) / seeds.size();
            if (mode == Mode::Core)
                for (std::size_t j = 0; j < 4; ++j) {
                    core_final[j] += r.ledger.at(3, j) / seeds.size();
                    core_min[j] = std::min(core_min[j], r.ledger.at(3, j));
                }
        }
    }
    const double ind = mean_bwt[Mode::Individual], core = mean_bwt[Mode::Core], ft = mean_bwt[Mode::Finetune];
    const bool ordering = std::abs(ind - 100.0) < 1e-9 && ind >= core && core > ft && core - ft >= 10.0;
    bool per_task = true;
    std::string finals;
    for (std::size_t j = 0; j < 4; ++j) {
        per_task = per_task && core_final[j] >= 85.0;
        finals += (j ? "/" : "") + num(core_final[j], 1);
    }
    Verdict v{ordering && per_task, ""};
    v.detail = "BWT individual " + num(ind) + ", core " + num(core) + ", finetune " + num(ft) + " (margin " +
               num(core - ft) + ", ordering " + (ordering ? "ok" : "violated") + "); core final DSC per task " +
               finals + " (need each >= 85: " + (per_task ? "ok" : "no") + "); 3 seeds";
    return v;
}

Verdict lambda_endpoints() {
    const std::vector<std::uint64_t> seeds{1, 2, 3};
    std::map<double, double> avg;
    for (double lambda : {0.0, 0.7, 1.0})
        for (std::uint64_t s : seeds) {
            RunConfig cfg = base("default", Mode::Core, s);
            cfg.lambda = lambda;
            cfg.epochs = 10;
            avg[lambda] += run(cfg).ledger.average_final() / seeds.size();
        }
    return {avg[0.7] >= avg[0.0] && avg[0.7] >= avg[1.0],
            "average DSC lambda=0 " + num(avg[0.0]) + ", 0.7 " + num(avg[0.7]) + ", 1 " + num(avg[1.0]) +
                "; need 0.7 >= both (default stream, 10 epochs, 3 seeds)"};
}

Verdict metric_anchors() {
    const std::vector<int> pred{1, 1, 0, 0}, target{1, 0, 0, 0};
    const double d = dsc(pred, target);
    MetricsLedger two({"a", "b"});
    two.set(0, 0, 80.0), two.set(1, 0, 70.0), two.set(1, 1, 60.0);
    MetricsLedger flat({"a", "b", "c", "d"});
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t j = 0; j <= t; ++j) flat.set(t, j, 73.5);
    const double b2 = bwt(two), bc = bwt(flat);
    return {d == 200.0 / 3.0 && b2 == 90.0 && bc == 100.0,
            "dsc " + num(d, 4) + " (2/3 case), bwt two-task " + num(b2) + ", constant ledger " + num(bc)};
}

RunConfig small_standard(std::uint64_t seed) {
    RunConfig c = base("standard", Mode::Core, seed);
    c.samples_per_task = 100;
    c.epochs = 5;
    return c;
}

Verdict determinism() {
    RunResult a = run(small_standard(4)), b = run(small_standard(4));
    const std::string ca = serialize_model(a.model), cb = serialize_model(b.model);
    const bool ledgers = a.ledger == b.ledger && ledger_json(a.ledger) == ledger_json(b.ledger);
    return {ledgers && ca == cb,
            std::string("ledgers ") + (ledgers ? "identical" : "differ") + ", checkpoints (" + std::to_string(ca.size()) +
                " bytes) " + (ca == cb ? "identical" : "differ")};
}

Verdict buffer_free() {
    RunConfig keep = small_standard(5);
    keep.release_data = false;
    ConceptMatrix concepts;
    RunConfig drop_cfg = small_standard(5);
    TaskStream stream = build_stream(drop_cfg, concepts);
    RunResult drop = run_continual(drop_cfg, stream, concepts);
    bool gone = true;
    for (std::size_t j = 0; j < stream.size(); ++j) gone = gone && stream.released(j);
    RunResult kept = run(keep);
    const bool same = drop.ledger == kept.ledger && serialize_model(drop.model) == serialize_model(kept.model);
    return {gone && same, std::string("training data ") + (gone ? "released after each task" : "NOT released") +
                              "; ledger and checkpoint vs. run without deletion: " + (same ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> checks{
        {"grad_integrity", grad_integrity},           {"birth_identity", birth_identity},
        {"freeze_immutability", freeze_immutability}, {"dual_signal", dual_signal},
        {"sublinear_growth", sublinear_growth},       {"forgetting_ordering", forgetting_ordering},
        {"lambda_endpoints", lambda_endpoints},       {"metric_anchors", metric_anchors},
        {"determinism", determinism},                 {"buffer_free", buffer_free},
    };
    CLI::App app{"acceptance checks"};
    std::vector<std::string> only;
    bool list = false;
    app.add_option("--only", only, "run just these checks");
    app.add_flag("--list", list, "print check names");
    CLI11_PARSE(app, argc, argv);
    if (list) {
        for (const auto& [name, fn] : checks) std::cout << name << '\n';
        return 0;
    }
    const std::set<std::string> wanted(only.begin(), only.end());
    for (const auto& w : wanted) {
        if (std::none_of(checks.begin(), checks.end(), [&](const auto& c) { return c.first == w; })) {
            std::cerr << "unknown check '" << w << "'\n";
            return 2;
        }
    }
    int failed = 0;
    for (const auto& [name, fn] : checks) {
        if (!wanted.empty() && !wanted.count(name)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << " [" << num(seconds_since(t0), 1)
                  << " s]" << std::endl;
        failed += !v.pass;
    }
    return failed == 0 ? 0 : 1;
}
