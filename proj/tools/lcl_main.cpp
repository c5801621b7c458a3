// lcl: command-line front end for continual segmentation runs.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lcl/errors.hpp"
#include "lcl/harness/checkpoint.hpp"
#include "lcl/harness/config.hpp"
#include "lcl/harness/grad_suite.hpp"
#include "lcl/harness/run.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lcl;

namespace {

struct CommonOpts {
    std::string config;
    std::vector<std::string> sets;
    std::string mode, stream, out;
    long long seed = -1;
    double lambda = -1.0;
    long long epochs = -1;
};

void add_common(CLI::App* app, CommonOpts& o, bool single_lambda = true) {
    app->add_option("--config", o.config, "config file (key = value lines)");
    app->add_option("--set", o.sets, "override, key=value (repeatable)");
    app->add_option("--mode", o.mode, "run mode");
    app->add_option("--stream", o.stream, "stream name");
    app->add_option("--seed", o.seed, "seed");
    if (single_lambda) app->add_option("--lambda", o.lambda, "concept/visual routing balance");
    app->add_option("--epochs", o.epochs, "epochs per task");
    app->add_option("--out", o.out, "output directory");
}

// File first, then the explicit flags, then --set entries in order.
RunConfig resolve(const CommonOpts& o) {
    RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
    if (!o.mode.empty()) cfg.mode = parse_mode(o.mode);
    if (!o.stream.empty()) cfg.stream = o.stream;
    if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
    if (o.lambda >= 0.0) cfg.lambda = o.lambda;
    if (o.epochs >= 0) cfg.epochs = static_cast<std::size_t>(o.epochs);
    if (!o.out.empty()) cfg.output_dir = o.out;
    for (const std::string& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ValidationError(ValidationError::Kind::Parse, "--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw Error("cannot read " + p.string());
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) out.push_back(line);
    return out;
}

void print_summary(const RunResult& r, BwtForm form) {
    std::printf("%s", report_csv(r.ledger, form).c_str());
    const GrowthCurve g = growth_curve(r.decisions);
    if (!g.counts.empty()) {
        std::printf("experts after last task:");
        for (std::size_t s = 0; s < g.sites.size(); ++s) std::printf(" %s=%zu", g.sites[s].c_str(), g.counts.back()[s]);
        std::printf("\n");
    }
}

int cmd_run(const CommonOpts& o) {
    const RunConfig cfg = resolve(o);
    const RunResult r = run_continual(cfg);
    print_summary(r, cfg.bwt_form);
    if (!cfg.output_dir.empty()) std::printf("reports written to %s\n", cfg.output_dir.c_str());
    return 0;
}

int cmd_gen_stream(const CommonOpts& o) {
    const RunConfig cfg = resolve(o);
    ConceptMatrix concepts;
    TaskStream stream = build_stream(cfg, concepts);
    json tasks = json::array();
    for (std::size_t t = 0; t < stream.size(); ++t) {
        const SyntheticTaskSpec& s = stream.spec(t);
        double lesion = 0.0, intensity = 0.0, concept_energy = 0.0;
        std::size_t pixels = 0;
        for (const SegSample& smp : stream.train(t)) {
            for (std::size_t i = 0; i < smp.mask.size(); ++i) {
                lesion += smp.mask[i] != 0;
                intensity += smp.image[i * cfg.backbone.channels];
                const double c = smp.image[i * cfg.backbone.channels + 1];
                concept_energy += c * c;
            }
            pixels += smp.mask.size();
        }
        const double n = static_cast<double>(pixels);
        tasks.push_back({{"task", t + 1},
                         {"name", s.name},
                         {"class", s.lesion_class},
                         {"modality", s.modality.name},
                         {"profile", s.profile_name},
                         {"train", stream.train(t).size()},
                         {"val", stream.val(t).size()},
                         {"test", stream.test(t).size()},
                         {"lesion_fraction", lesion / n},
                         {"mean_intensity", intensity / n},
                         {"concept_rms", std::sqrt(concept_energy / n)}});
    }
    const json summary{{"stream", cfg.stream}, {"seed", cfg.seed}, {"tasks", tasks}};
    if (cfg.output_dir.empty()) {
        std::printf("%s\n", summary.dump(2).c_str());
        return 0;
    }
    fs::create_directories(cfg.output_dir);
    std::ofstream(fs::path(cfg.output_dir) / "stream.json") << summary.dump(2) << "\n";
    save_concept_matrix(concepts, fs::path(cfg.output_dir) / "concepts.json");
    std::printf("stream summary and concept matrix written to %s\n", cfg.output_dir.c_str());
    return 0;
}

int cmd_report(const std::string& run_dir, const std::string& out) {
    const fs::path dir(run_dir);
    RunConfig cfg;
    if (fs::exists(dir / "config.cfg")) cfg = load_config(dir / "config.cfg");
    const RunResult r = report_from_log(read_lines(dir / "run.jsonl"));
    write_reports(r, cfg, out.empty() ? dir : fs::path(out));
    print_summary(r, cfg.bwt_form);
    return 0;
}

std::string block_label(const std::vector<std::size_t>& blocks) {
    std::string s;
    for (std::size_t b : blocks) s += (s.empty() ? "" : "+") + std::to_string(b);
    return s;
}

std::vector<std::size_t> parse_blocks(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    for (std::string tok; std::getline(ss, tok, ',');) {
        if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) {
            throw ValidationError(ValidationError::Kind::Parse, "bad block list '" + text + "'");
        }
        out.push_back(std::stoul(tok));
    }
    return out;
}

int cmd_sweep(const CommonOpts& o, const std::vector<double>& lambdas, const std::vector<std::string>& grids) {
    const RunConfig base = resolve(o);
    if (lambdas.empty() && grids.empty()) throw ParameterError("sweep needs --lambda and/or --blocks");
    const fs::path root = base.output_dir.empty() ? fs::path("sweep") : fs::path(base.output_dir);
    fs::create_directories(root);
    if (!lambdas.empty()) {
        std::ofstream csv(root / "sweep_lambda.csv");
        csv << "lambda,average,bwt\n";
        for (double l : lambdas) {
            RunConfig cfg = base;
            cfg.lambda = l;
            std::ostringstream tag;
            tag << "lambda_" << l;
            cfg.output_dir = (root / tag.str()).string();
            cfg.validate();
            const RunResult r = run_continual(cfg);
            const double b = r.ledger.size() >= 2 ? bwt(r.ledger, cfg.bwt_form) : 100.0;
            csv << l << "," << r.ledger.average_final() << "," << b << "\n";
            std::printf("lambda %.3g: average %.2f bwt %.2f\n", l, r.ledger.average_final(), b);
        }
    }
    if (!grids.empty()) {
        std::ofstream csv(root / "sweep_blocks.csv");
        csv << "blocks,average,bwt\n";
        for (const std::string& g : grids) {
            RunConfig cfg = base;
            cfg.backbone.expandable_blocks = parse_blocks(g);
            cfg.output_dir = (root / ("blocks_" + block_label(cfg.backbone.expandable_blocks))).string();
            cfg.validate();
            const RunResult r = run_continual(cfg);
            const double b = r.ledger.size() >= 2 ? bwt(r.ledger, cfg.bwt_form) : 100.0;
            csv << block_label(cfg.backbone.expandable_blocks) << "," << r.ledger.average_final() << "," << b << "\n";
            std::printf("blocks %s: average %.2f bwt %.2f\n", g.c_str(), r.ledger.average_final(), b);
        }
    }
    return 0;
}

int cmd_affinity(std::string checkpoint, const std::string& run_dir, std::size_t top) {
    if (checkpoint.empty()) {
        if (run_dir.empty()) throw ParameterError("affinity needs --checkpoint or --run");
        checkpoint = (fs::path(run_dir) / "model.ckpt").string();
    }
    const Model m = load_checkpoint(checkpoint);
    std::printf("site,adapter,birth_task,rank,concept,value\n");
    for (const AdapterSite* s : m.backbone.sites()) {
        for (const AffinityEntry& e : affinity_report(*s, m.concepts, top)) {
            for (std::size_t i = 0; i < e.top.size(); ++i) {
                std::printf("%s,%zu,%zu,%zu,%s,%.6g\n", s->id.str().c_str(), e.adapter, e.birth_task + 1, i + 1,
                            e.top[i].first.c_str(), e.top[i].second);
            }
        }
    }
    return 0;
}

int cmd_grad_check(std::size_t instances, std::uint64_t seed) {
    bool ok = true;
    std::printf("component,instances,entries,max_rel_error\n");
    for (const GradSuiteEntry& e : run_grad_suite(instances, seed)) {
        std::printf("%s,%zu,%zu,%.3e\n", e.component.c_str(), e.instances, e.entries, e.max_rel_error);
        ok = ok && e.max_rel_error < 1e-4;
    }
    if (!ok) std::fprintf(stderr, "error: gradient check above 1e-4\n");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual segmentation with concept-guided experts"};
    app.require_subcommand(1);

    CommonOpts run_o, gen_o, sweep_o;
    auto* run = app.add_subcommand("run", "run a continual stream and write reports");
    add_common(run, run_o);

    auto* gen = app.add_subcommand("gen-stream", "generate a synthetic stream and summarise it");
    add_common(gen, gen_o);

    std::string report_run, report_out;
    auto* report = app.add_subcommand("report", "rebuild report files from a run log");
    report->add_option("--run", report_run, "run output directory")->required();
    report->add_option("--out", report_out, "write reports here instead of the run directory");

    std::vector<double> lambdas;
    std::vector<std::string> grids;
    auto* sweep = app.add_subcommand("sweep", "lambda grid and expandable-block grid");
    add_common(sweep, sweep_o, false);
    sweep->add_option("--lambda", lambdas, "comma-separated lambda values")->delimiter(',');
    sweep->add_option("--blocks", grids, "expandable blocks, e.g. 2,3 (repeat for each grid point)");

    std::string ckpt, aff_run;
    std::size_t top = 5;
    auto* affinity = app.add_subcommand("affinity", "top concepts per expert from a checkpoint");
    affinity->add_option("--checkpoint", ckpt, "checkpoint file");
    affinity->add_option("--run", aff_run, "run directory holding model.ckpt");
    affinity->add_option("--top", top, "concepts per expert");

    std::size_t instances = 20;
    std::uint64_t gc_seed = 1;
    auto* grad = app.add_subcommand("grad-check", "finite-difference check of the trainable paths");
    grad->add_option("--instances", instances, "random instances per component");
    grad->add_option("--seed", gc_seed, "seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    }

    try {
        if (*run) return cmd_run(run_o);
        if (*gen) return cmd_gen_stream(gen_o);
        if (*report) return cmd_report(report_run, report_out);
        if (*sweep) return cmd_sweep(sweep_o, lambdas, grids);
        if (*affinity) return cmd_affinity(ckpt, aff_run, top);
        if (*grad) return cmd_grad_check(instances, gc_seed);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
