#include "lcl/harness/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "lcl/errors.hpp"
#include "lcl/harness/checkpoint.hpp"
#include "lcl/numerics/ops.hpp"
#include "lcl/numerics/optimizer.hpp"
#include "lcl/objectives/objectives.hpp"

namespace lcl {

using json = nlohmann::json;
using VKind = ValidationError::Kind;

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out = backbone.base_parameters();
    for (AdapterSite* s : backbone.sites()) {
        out.push_back(&s->projection.weight);
        for (auto& e : s->experts) {
            for (Parameter* p : {&e.adapter.down, &e.adapter.up, &e.estimator.encoder, &e.estimator.decoder}) out.push_back(p);
        }
        for (auto& c : s->concept_columns) out.push_back(&c);
        for (auto& c : s->router_columns) out.push_back(&c);
    }
    for (auto& r : head.rows) {
        out.push_back(&r.weight);
        out.push_back(&r.bias);
    }
    return out;
}

std::vector<const Parameter*> Model::parameters() const {
    auto ps = const_cast<Model*>(this)->parameters();
    return {ps.begin(), ps.end()};
}

void Model::set_training(bool on) {
    for (Parameter* p : parameters()) p->set_active(on);
}

Model create_model(const RunConfig& cfg, const ConceptMatrix& concepts, std::uint64_t init_seed) {
    Rng rng = Rng::derive(init_seed, 7);
    Model m{ToyBackbone::create(cfg.backbone, concepts.dim(), concepts.size(), rng),
            SegmentationHead::create(cfg.backbone), concepts};
    if (cfg.phi_warm_start) warm_start_projections(m);
    return m;
}

void warm_start_projections(Model& model) {
    const BackboneConfig& c = model.backbone.config;
    if (model.concepts.dim() != c.patch_pixels() || c.channels < 2) {
        throw ParameterError("projection warm start needs concept width p^2 and a concept channel");
    }
    const Tensor phi = matmul(concept_render_matrix(c.patch), model.backbone.channel_embedding(1));
    for (AdapterSite* s : model.backbone.sites()) {
        if (s->projection.weight.frozen()) continue;
        s->projection.weight.value() = phi;
    }
}

void RunLog::write(std::string line) {
    if (sink_) *sink_ << line << '\n';
    lines_.push_back(std::move(line));
}

std::string routing_heatmap_csv(const RoutingHeatmap& h) {
    std::ostringstream o;
    o << "site,task,expert,mean_weight\n" << std::setprecision(10);
    for (std::size_t s = 0; s < h.sites.size(); ++s)
        for (std::size_t t = 0; t < h.tasks.size(); ++t)
            for (std::size_t k = 0; k < h.weights[s][t].size(); ++k)
                o << h.sites[s] << ',' << h.tasks[t] << ',' << k << ',' << h.weights[s][t][k] << '\n';
    return o.str();
}

namespace {

std::vector<double> row_values(const Tensor& t, std::size_t r) {
    if (t.empty()) return {};
    std::vector<double> v(t.cols());
    for (std::size_t j = 0; j < t.cols(); ++j) v[j] = t(r, j);
    return v;
}

json nan_safe(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// Residual stream entering `start` for every sample, computed once per sample
// set while the blocks before `start` are frozen and hold no experts.
struct PrefixCache {
    std::size_t start = 0;
    Tensor hidden;  // (S*N) x d
};

bool base_frozen(ToyBackbone& bb) {
    for (Parameter* p : bb.base_parameters())
        if (!p->frozen()) return false;
    return true;
}

std::size_t cacheable_start(ToyBackbone& bb) {
    if (!base_frozen(bb)) return 0;
    std::size_t start = bb.config.blocks - 1;
    for (std::size_t b = 0; b < bb.config.blocks; ++b) {
        if (bb.blocks[b].attn.size() > 0 || bb.blocks[b].ffn.size() > 0 || bb.blocks[b].attn.expandable ||
            bb.blocks[b].ffn.expandable) {
            start = std::min(start, b);
            break;
        }
    }
    return start;
}

PrefixCache build_cache(ToyBackbone& bb, const std::vector<const SegSample*>& samples) {
    PrefixCache c;
    c.start = cacheable_start(bb);
    if (c.start == 0) return c;
    const std::size_t n = bb.config.tokens(), d = bb.config.width, chunk = 32;
    c.hidden = Tensor({samples.size() * n, d});
    for (std::size_t i = 0; i < samples.size(); i += chunk) {
        const std::vector<const SegSample*> part(samples.begin() + i, samples.begin() + std::min(samples.size(), i + chunk));
        const Tensor h = hidden_before(bb, patchify(part, bb.config), part.size(), c.start);
        std::copy(h.values().begin(), h.values().end(), c.hidden.data().begin() + i * n * d);
    }
    return c;
}

Tensor gather_hidden(const PrefixCache& c, const std::vector<std::size_t>& idx, std::size_t tokens) {
    const std::size_t d = c.hidden.cols(), per = tokens * d;
    Tensor out({idx.size() * tokens, d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(c.hidden.values().begin() + idx[i] * per, per, out.data().begin() + i * per);
    }
    return out;
}

struct BatchForward {
    Tensor patches;
    Tensor hidden;
    ForwardOptions opts;
};

BatchForward prepare(Model& m, const std::vector<const SegSample*>& batch, const std::vector<std::size_t>& idx,
                     const PrefixCache* cache, double lambda, bool keep) {
    BatchForward f;
    f.opts.lambda = lambda;
    f.opts.keep_site_inputs = keep;
    if (cache && cache->start > 0) {
        f.hidden = gather_hidden(*cache, idx, m.backbone.config.tokens());
        f.opts.start_block = cache->start;
        f.opts.cached_hidden = &f.hidden;
    } else {
        f.patches = patchify(batch, m.backbone.config);
    }
    return f;
}

std::vector<const SegSample*> pointers(const std::vector<SegSample>& v) {
    std::vector<const SegSample*> out;
    for (const auto& s : v) out.push_back(&s);
    return out;
}

struct Context {
    const RunConfig& cfg;
    RunLog& log;
    std::vector<ExpansionDecision>& decisions;
    std::string model_tag;
};

// Pooled concept activation (1 x M) of an all-zero input at every site.
std::vector<Tensor> blank_reference(Model& m, double lambda) {
    const BackboneConfig& c = m.backbone.config;
    const Tensor patches({c.tokens(), c.patch_features()});
    ForwardOptions o;
    o.lambda = lambda;
    o.keep_site_inputs = true;
    m.set_training(false);
    Tape tape;
    const ForwardResult out = forward(tape, m.backbone, m.head, m.concepts, patches, 1, o);
    std::vector<Tensor> refs;
    auto sites = m.backbone.sites();
    for (std::size_t si = 0; si < sites.size(); ++si) {
        Tape t2;
        const Tensor x_bar = ops::mean_blocks(t2.constant(out.site_inputs[si]), c.tokens()).value();
        refs.push_back(matmul_nt(x_bar, project_concepts(m.concepts, sites[si]->projection)));
    }
    return refs;
}

// Evaluation-only pass over the task's data feeding every expandable site's scan.
std::vector<ExpansionScan> scan_task(Model& m, const std::vector<const SegSample*>& samples, const PrefixCache& cache,
                                     double lambda, std::size_t batch_size) {
    auto sites = m.backbone.sites();
    std::vector<ExpansionScan> scans;
    std::vector<Tensor> projected;
    for (AdapterSite* s : sites) {
        scans.push_back(ExpansionScan::begin(*s));
        projected.push_back(project_concepts(m.concepts, s->projection));
    }
    const std::size_t n = m.backbone.config.tokens();
    const std::vector<Tensor> refs = blank_reference(m, lambda);
    for (std::size_t si = 0; si < sites.size(); ++si) scans[si].reference = refs[si];
    m.set_training(false);
    for (std::size_t i = 0; i < samples.size(); i += batch_size) {
        std::vector<const SegSample*> batch;
        std::vector<std::size_t> idx;
        for (std::size_t j = i; j < std::min(samples.size(), i + batch_size); ++j) {
            batch.push_back(samples[j]);
            idx.push_back(j);
        }
        BatchForward f = prepare(m, batch, idx, &cache, lambda, true);
        Tape tape;
        const ForwardResult out = forward(tape, m.backbone, m.head, m.concepts, f.patches, batch.size(), f.opts);
        for (std::size_t si = 0; si < sites.size(); ++si) {
            if (!sites[si]->expandable || out.site_inputs[si].empty()) continue;
            Tape t2;
            const Tensor x_bar = ops::mean_blocks(t2.constant(out.site_inputs[si]), n).value();
            const Tensor s_bar = matmul_nt(x_bar, projected[si]);
            std::vector<std::vector<double>> errs;
            for (const auto& e : sites[si]->experts) errs.push_back(reconstruction_errors(e.estimator, out.site_inputs[si], n));
            scans[si].add(concept_familiarity(*sites[si], s_bar), s_bar, errs);
        }
    }
    return scans;
}

void train_rows(Model& m, const std::vector<const SegSample*>& samples, const std::vector<std::size_t>& rows,
                const PrefixCache& cache, const Context& ctx, std::size_t task, Rng& rng) {
    const RunConfig& cfg = ctx.cfg;
    m.set_training(true);
    std::vector<Parameter*> trainable;
    for (Parameter* p : m.parameters())
        if (!p->frozen()) trainable.push_back(p);
    bool keep = false;
    for (AdapterSite* s : m.backbone.sites())
        for (auto& e : s->experts) keep = keep || e.estimator.encoder.requires_grad();

    AdamWOptions o;
    o.lr = cfg.lr;
    o.weight_decay = cfg.weight_decay;
    AdamW opt(trainable, o);
    const std::size_t steps_per_epoch = (samples.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total = steps_per_epoch * cfg.epochs;
    const CosineSchedule sched{cfg.lr, static_cast<std::size_t>(std::llround(cfg.warmup_fraction * static_cast<double>(total))),
                               total};
    std::vector<std::size_t> order(samples.size());
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < steps_per_epoch; ++b) {
            std::vector<const SegSample*> batch;
            std::vector<std::size_t> idx;
            for (std::size_t j = b * cfg.batch_size; j < std::min(order.size(), (b + 1) * cfg.batch_size); ++j) {
                batch.push_back(samples[order[j]]);
                idx.push_back(order[j]);
            }
            BatchForward f = prepare(m, batch, idx, &cache, cfg.effective_lambda(), keep);
            opt.zero_grad();
            Tape tape;
            const ForwardResult out = forward(tape, m.backbone, m.head, m.concepts, f.patches, batch.size(), f.opts);
            const Objective obj = total_objective(tape, out, batch, m.head, rows, m.backbone);
            tape.backward(obj.total);
            const double lr = sched.at(step);
            opt.step(lr);
            epoch_loss += obj.report.total;
            if (cfg.log_steps) {
                json j{{"type", "loss"}, {"model", ctx.model_tag}, {"task", task + 1}, {"epoch", epoch + 1},
                       {"step", step + 1}, {"lr", lr}, {"dice", obj.report.dice}, {"bce", obj.report.bce},
                       {"seg", obj.report.seg}, {"total", obj.report.total}};
                json est = json::object();
                for (const auto& [name, v] : obj.report.est) est[name] = v;
                j["est"] = est;
                ctx.log.write(j.dump());
            }
            ++step;
        }
        if (!cfg.log_steps) {
            ctx.log.write(json{{"type", "epoch"}, {"model", ctx.model_tag}, {"task", task + 1}, {"epoch", epoch + 1},
                               {"mean_total", epoch_loss / static_cast<double>(steps_per_epoch)}}
                              .dump());
        }
    }
    m.set_training(false);
}

// Post-training pass: records estimator statistics for every estimator that
// has none yet and moves each newborn concept column by the change of its
// anchor between birth and now (replacing it outright when the base network
// trained, since the projection was re-initialised).
void calibrate(Model& m, const std::vector<const SegSample*>& samples, const PrefixCache& cache, double lambda,
               std::size_t batch_size, double anchor_gain, const std::vector<ExpansionScan>* birth, bool replace,
               std::size_t task) {
    auto sites = m.backbone.sites();
    const std::size_t n = m.backbone.config.tokens();
    std::vector<std::vector<std::vector<double>>> errs(sites.size());
    std::vector<Tensor> s_sum(sites.size());
    std::vector<Tensor> projected;
    const std::vector<Tensor> refs = blank_reference(m, lambda);
    for (std::size_t si = 0; si < sites.size(); ++si) {
        errs[si].resize(sites[si]->size());
        s_sum[si] = Tensor({1, sites[si]->concept_count});
        projected.push_back(project_concepts(m.concepts, sites[si]->projection));
    }
    m.set_training(false);
    for (std::size_t i = 0; i < samples.size(); i += batch_size) {
        std::vector<const SegSample*> batch;
        std::vector<std::size_t> idx;
        for (std::size_t j = i; j < std::min(samples.size(), i + batch_size); ++j) {
            batch.push_back(samples[j]);
            idx.push_back(j);
        }
        BatchForward f = prepare(m, batch, idx, &cache, lambda, true);
        Tape tape;
        const ForwardResult out = forward(tape, m.backbone, m.head, m.concepts, f.patches, batch.size(), f.opts);
        for (std::size_t si = 0; si < sites.size(); ++si) {
            if (sites[si]->size() == 0) continue;
            for (std::size_t k = 0; k < sites[si]->size(); ++k) {
                if (sites[si]->experts[k].estimator.stats_locked) continue;
                const auto e = reconstruction_errors(sites[si]->experts[k].estimator, out.site_inputs[si], n);
                errs[si][k].insert(errs[si][k].end(), e.begin(), e.end());
            }
            Tape t2;
            const Tensor x_bar = ops::mean_blocks(t2.constant(out.site_inputs[si]), n).value();
            const Tensor s_bar = matmul_nt(x_bar, projected[si]);
            for (std::size_t r = 0; r < s_bar.rows(); ++r)
                for (std::size_t c = 0; c < s_bar.cols(); ++c) s_sum[si][c] += s_bar(r, c);
        }
    }
    for (std::size_t si = 0; si < sites.size(); ++si) {
        for (std::size_t k = 0; k < sites[si]->size(); ++k) {
            Expert& e = sites[si]->experts[k];
            if (e.estimator.stats_locked) continue;
            update_running_stats(e.estimator, errs[si][k]);
            e.estimator.stats_locked = true;
            if (anchor_gain > 0.0 && e.adapter.birth_task == task && !sites[si]->concept_columns[k].frozen()) {
                Tensor mean = s_sum[si];
                for (double& v : mean.data()) v /= static_cast<double>(samples.size());
                const auto now = anchor_column(mean, refs[si], anchor_gain);
                const auto then = birth ? concept_anchor((*birth)[si], anchor_gain) : std::nullopt;
                if (!now) continue;
                Tensor& col = sites[si]->concept_columns[k].value();
                for (std::size_t c = 0; c < col.size(); ++c) {
                    col[c] = replace || !then ? (*now)[c] : col[c] + (*now)[c] - (*then)[c];
                }
            }
        }
    }
}

GrowthRule growth_rule(Mode m) {
    switch (m) {
        case Mode::ImageOnlyExpansion: return GrowthRule::ImageOnly;
        case Mode::NoCde: return GrowthRule::Always;
        case Mode::Finetune:
        case Mode::Individual:
        case Mode::Joint: return GrowthRule::FirstOnly;
        default: return GrowthRule::DualSignal;
    }
}

bool freezes(Mode m) { return m != Mode::Finetune; }

void log_decision(const Context& ctx, const ExpansionDecision& d) {
    json j = json::parse(decision_json(d));
    j["model"] = ctx.model_tag;
    ctx.log.write(j.dump());
}

// One task of the continual protocol on `m`, using only `samples` of task `task`.
void learn_task(Model& m, const std::vector<const SegSample*>& samples, const std::string& lesion_class,
                std::size_t task, const Context& ctx, std::uint64_t seed) {
    const RunConfig& cfg = ctx.cfg;
    const double lambda = cfg.effective_lambda();
    if (!cfg.tune_backbone && cfg.mode != Mode::Finetune) m.backbone.freeze_base();
    const bool base_trainable = !base_frozen(m.backbone);

    PrefixCache cache = build_cache(m.backbone, samples);
    std::vector<ExpansionScan> scans = scan_task(m, samples, cache, lambda, cfg.batch_size);
    GrowthOptions g;
    g.tau_c = cfg.tau_c;
    g.tau_i = cfg.tau_i;
    g.rule = growth_rule(cfg.mode);
    g.rank = cfg.backbone.rank;
    g.estimator_hidden = cfg.backbone.estimator_hidden;
    g.concept_anchor_gain = cfg.concept_anchor_gain;
    Rng grow_rng = Rng::derive(seed, 5000 + task);
    auto sites = m.backbone.sites();
    for (std::size_t si = 0; si < sites.size(); ++si) {
        if (!sites[si]->expandable) continue;
        const ExpansionDecision d = decide_and_grow(*sites[si], scans[si], g, task, grow_rng);
        ctx.decisions.push_back(d);
        log_decision(ctx, d);
    }
    // Growth may change which blocks can be cached.
    if (cacheable_start(m.backbone) != cache.start) cache = build_cache(m.backbone, samples);

    const std::vector<std::size_t> new_rows = register_task_classes(m.head, {lesion_class}, task);
    std::vector<std::size_t> rows{0};
    rows.insert(rows.end(), new_rows.begin(), new_rows.end());
    Rng train_rng = Rng::derive(seed, 6000 + task);
    train_rows(m, samples, rows, cache, ctx, task, train_rng);

    if (base_trainable && cfg.phi_warm_start) warm_start_projections(m);
    calibrate(m, samples, cache, lambda, cfg.batch_size, cfg.concept_anchor_gain, &scans, base_trainable, task);
    if (freezes(cfg.mode)) {
        m.backbone.freeze_base();
        for (AdapterSite* s : m.backbone.sites()) s->freeze_all();
    }
}

struct EvalStats {
    double dsc = 0.0;
    std::vector<std::vector<double>> mean_w;  // [site][expert]
};

EvalStats evaluate(Model& m, const std::vector<SegSample>& samples, std::size_t row, int label, double lambda,
                   std::size_t batch_size, const PrefixCache* cache, RunLog* routing_log, const std::string& tag,
                   std::size_t trained, std::size_t evaluated) {
    EvalStats st;
    auto sites = m.backbone.sites();
    st.mean_w.resize(sites.size());
    for (std::size_t si = 0; si < sites.size(); ++si) st.mean_w[si].assign(sites[si]->size(), 0.0);
    const BackboneConfig& c = m.backbone.config;
    m.set_training(false);
    double acc = 0.0;
    for (std::size_t i = 0; i < samples.size(); i += batch_size) {
        std::vector<const SegSample*> batch;
        std::vector<std::size_t> idx;
        for (std::size_t j = i; j < std::min(samples.size(), i + batch_size); ++j) {
            batch.push_back(&samples[j]);
            idx.push_back(j);
        }
        BatchForward f = prepare(m, batch, idx, cache, lambda, false);
        Tape tape;
        const ForwardResult out = forward(tape, m.backbone, m.head, m.concepts, f.patches, batch.size(), f.opts);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const std::vector<int> pred = predict_mask(out, b, c);
            std::vector<int> p(pred.size()), t(pred.size());
            for (std::size_t px = 0; px < pred.size(); ++px) {
                p[px] = pred[px] == static_cast<int>(row);
                t[px] = batch[b]->mask[px] == label;
            }
            acc += dsc(p, t);
        }
        for (std::size_t si = 0; si < sites.size(); ++si) {
            const RoutingDecision& d = out.decisions[si];
            if (d.w.empty()) continue;
            for (std::size_t b = 0; b < batch.size(); ++b) {
                for (std::size_t k = 0; k < d.w.cols(); ++k) st.mean_w[si][k] += d.w(b, k);
                if (routing_log && sites[si]->expandable) {
                    routing_log->write(json{{"type", "routing"}, {"model", tag}, {"after_task", trained + 1},
                                            {"eval_task", evaluated + 1}, {"sample", idx[b]}, {"site", sites[si]->id.str()},
                                            {"w_c", row_values(d.w_c, b)}, {"w_v", row_values(d.w_v, b)},
                                            {"w", row_values(d.w, b)}, {"s_bar", row_values(d.s_bar, b)}}
                                           .dump());
                }
            }
        }
    }
    for (auto& v : st.mean_w)
        for (double& x : v) x /= static_cast<double>(samples.size());
    st.dsc = acc / static_cast<double>(samples.size());
    return st;
}

// Test-set prefix caches, rebuilt when the cacheable start block changes.
struct TestCaches {
    std::map<std::size_t, PrefixCache> by_task;
    const PrefixCache* get(ToyBackbone& bb, std::size_t task, const std::vector<SegSample>& samples) {
        const std::size_t start = cacheable_start(bb);
        if (start == 0) return nullptr;
        auto it = by_task.find(task);
        if (it == by_task.end() || it->second.start != start) {
            by_task[task] = build_cache(bb, pointers(samples));
        }
        return &by_task[task];
    }
};

void fill_heatmap(RoutingHeatmap& h, Model& m, std::size_t eval_index, const EvalStats& st) {
    auto sites = m.backbone.sites();
    std::size_t out = 0;
    for (std::size_t si = 0; si < sites.size(); ++si) {
        if (!sites[si]->expandable) continue;
        h.weights[out][eval_index] = st.mean_w[si];
        ++out;
    }
}

void init_heatmap(RoutingHeatmap& h, Model& m, const TaskStream& stream, std::size_t tasks) {
    h = RoutingHeatmap{};
    for (AdapterSite* s : m.backbone.sites())
        if (s->expandable) h.sites.push_back(s->id.str());
    for (std::size_t j = 0; j < tasks; ++j) h.tasks.push_back(stream.spec(j).name);
    h.weights.assign(h.sites.size(), std::vector<std::vector<double>>(tasks));
}

void log_eval(RunLog& log, const std::string& tag, std::size_t t, std::size_t j, double v) {
    log.write(json{{"type", "eval"}, {"model", tag}, {"after_task", t + 1}, {"task", j + 1}, {"dsc", v}}.dump());
}

}  // namespace

double evaluate_samples(Model& model, const std::vector<SegSample>& samples, std::size_t row, int label,
                        double lambda, std::size_t batch_size) {
    return evaluate(model, samples, row, label, lambda, batch_size, nullptr, nullptr, "", 0, 0).dsc;
}

std::string decision_json(const ExpansionDecision& d) {
    json z = json::array();
    for (double v : d.mean_z) z.push_back(nan_safe(v));
    return json{{"type", "expansion"},
                {"site", d.site.str()},
                {"block", d.site.block},
                {"sublayer", d.site.sublayer == Sublayer::Attn ? "attn" : "ffn"},
                {"task", d.task + 1},
                {"rule", growth_rule_name(d.rule)},
                {"concept_triggered", d.concept_triggered},
                {"image_triggered", d.image_triggered},
                {"expanded", d.expanded},
                {"cold_start", d.cold_start},
                {"max_familiarity", d.max_familiarity},
                {"min_z", nan_safe(d.min_z)},
                {"mean_z", z},
                {"experts_before", d.experts_before},
                {"experts_after", d.experts_after}}
        .dump();
}

ExpansionDecision parse_decision_json(const std::string& line) {
    const json j = json::parse(line);
    ExpansionDecision d;
    d.site.block = j.at("block").get<std::size_t>();
    d.site.sublayer = j.at("sublayer").get<std::string>() == "attn" ? Sublayer::Attn : Sublayer::Ffn;
    d.task = j.at("task").get<std::size_t>() - 1;
    const std::string rule = j.at("rule").get<std::string>();
    for (GrowthRule r : {GrowthRule::DualSignal, GrowthRule::ImageOnly, GrowthRule::Always, GrowthRule::FirstOnly})
        if (growth_rule_name(r) == rule) d.rule = r;
    d.concept_triggered = j.at("concept_triggered").get<bool>();
    d.image_triggered = j.at("image_triggered").get<bool>();
    d.expanded = j.at("expanded").get<bool>();
    d.cold_start = j.at("cold_start").get<bool>();
    d.max_familiarity = j.at("max_familiarity").get<double>();
    d.min_z = j.at("min_z").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("min_z").get<double>();
    for (const auto& v : j.at("mean_z")) d.mean_z.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
    d.experts_before = j.at("experts_before").get<std::size_t>();
    d.experts_after = j.at("experts_after").get<std::size_t>();
    return d;
}

TaskStream build_stream(const RunConfig& cfg, ConceptMatrix& concepts) {
    StreamRecipe recipe = stream_by_name(cfg.stream, cfg.samples_per_task);
    if (cfg.max_tasks > 0 && cfg.max_tasks < recipe.specs.size()) recipe.specs.resize(cfg.max_tasks);
    concepts = cfg.concepts_path.empty() ? recipe_concepts(recipe, cfg.concept_dim, cfg.seed)
                                         : load_concept_matrix(cfg.concepts_path);
    return generate_stream(recipe.specs, concepts, cfg.seed, cfg.backbone);
}

RunResult run_continual(const RunConfig& cfg, TaskStream& stream, const ConceptMatrix& concepts, std::ostream* log_sink,
                        const TaskObserver& after_task) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    RunLog log(log_sink);
    RunResult res;
    const std::size_t tasks = stream.size();
    std::vector<std::string> names;
    for (std::size_t j = 0; j < tasks; ++j) names.push_back(stream.spec(j).name);
    res.ledger = MetricsLedger(names);

    const ConceptMatrix routing_concepts =
        cfg.mode == Mode::RandConcepts ? random_concepts_like(concepts, cfg.seed ^ 0x5eedULL) : concepts;
    const double lambda = cfg.effective_lambda();
    log.write(json{{"type", "run"}, {"mode", mode_name(cfg.mode)}, {"seed", cfg.seed}, {"tasks", tasks},
                   {"task_names", names}, {"lambda", lambda}, {"tau_c", cfg.tau_c}, {"tau_i", cfg.tau_i}}
                  .dump());

    if (cfg.mode == Mode::Individual) {
        std::vector<double> diag(tasks);
        for (std::size_t j = 0; j < tasks; ++j) {
            Model m = create_model(cfg, routing_concepts, cfg.seed);
            Context ctx{cfg, log, res.decisions, "task" + std::to_string(j + 1)};
            learn_task(m, pointers(stream.train(j)), stream.spec(j).lesion_class, j, ctx, cfg.seed);
            const std::size_t row = m.head.index_of(stream.spec(j).lesion_class);
            diag[j] = evaluate(m, stream.test(j), row, static_cast<int>(j + 1), lambda, 16, nullptr, nullptr, "", j, j).dsc;
            for (std::size_t t = j; t < tasks; ++t) {
                res.ledger.set(t, j, diag[j]);
                log_eval(log, ctx.model_tag, t, j, diag[j]);
            }
            if (cfg.release_data) stream.release(j);
            if (after_task) after_task(j, m);
            if (j + 1 == tasks) res.model = std::move(m);
        }
    } else if (cfg.mode == Mode::Joint) {
        Model m = create_model(cfg, routing_concepts, cfg.seed);
        Context ctx{cfg, log, res.decisions, "joint"};
        if (!cfg.tune_backbone) m.backbone.freeze_base();
        // One model over the union; batches stay single-task.
        std::vector<const SegSample*> all;
        for (std::size_t j = 0; j < tasks; ++j)
            for (const auto& s : stream.train(j)) all.push_back(&s);
        PrefixCache none;
        auto scans = scan_task(m, all, none, lambda, cfg.batch_size);
        GrowthOptions g;
        g.rule = GrowthRule::FirstOnly;
        g.rank = cfg.backbone.rank;
        g.estimator_hidden = cfg.backbone.estimator_hidden;
        Rng grow_rng = Rng::derive(cfg.seed, 5000);
        auto sites = m.backbone.sites();
        for (std::size_t si = 0; si < sites.size(); ++si) {
            if (!sites[si]->expandable) continue;
            const auto d = decide_and_grow(*sites[si], scans[si], g, 0, grow_rng);
            res.decisions.push_back(d);
            log_decision(ctx, d);
        }
        std::vector<std::string> classes;
        for (std::size_t j = 0; j < tasks; ++j) classes.push_back(stream.spec(j).lesion_class);
        register_task_classes(m.head, classes, 0);
        Rng rng = Rng::derive(cfg.seed, 6000);
        // Interleave single-task passes: each epoch visits every task once.
        RunConfig one = cfg;
        one.epochs = 1;
        for (std::size_t e = 0; e < cfg.epochs; ++e) {
            for (std::size_t j = 0; j < tasks; ++j) {
                one.lr = CosineSchedule{cfg.lr, 0, cfg.epochs}.at(e);
                Context c2{one, log, res.decisions, "joint"};
                train_rows(m, pointers(stream.train(j)), {0, j + 1}, none, c2, j, rng);
            }
        }
        calibrate(m, all, none, lambda, cfg.batch_size, 0.0, nullptr, false, 0);
        for (std::size_t j = 0; j < tasks; ++j) {
            const double v = evaluate(m, stream.test(j), j + 1, static_cast<int>(j + 1), lambda, 16, nullptr, nullptr, "", 0, j).dsc;
            for (std::size_t t = j; t < tasks; ++t) {
                res.ledger.set(t, j, v);
                log_eval(log, "joint", t, j, v);
            }
        }
        init_heatmap(res.heatmap, m, stream, tasks);
        for (std::size_t j = 0; j < tasks; ++j) {
            const auto st = evaluate(m, stream.test(j), j + 1, static_cast<int>(j + 1), lambda, 16, nullptr,
                                     cfg.log_routing ? &log : nullptr, "joint", tasks - 1, j);
            fill_heatmap(res.heatmap, m, j, st);
        }
        if (cfg.release_data)
            for (std::size_t j = 0; j < tasks; ++j) stream.release(j);
        if (after_task) after_task(tasks - 1, m);
        res.model = std::move(m);
    } else {
        Model m = create_model(cfg, routing_concepts, cfg.seed);
        Context ctx{cfg, log, res.decisions, "main"};
        TestCaches caches;
        for (std::size_t t = 0; t < tasks; ++t) {
            learn_task(m, pointers(stream.train(t)), stream.spec(t).lesion_class, t, ctx, cfg.seed);
            if (cfg.release_data) stream.release(t);
            const bool last = t + 1 == tasks;
            if (last) init_heatmap(res.heatmap, m, stream, tasks);
            for (std::size_t j = 0; j <= t; ++j) {
                const std::size_t row = m.head.index_of(stream.spec(j).lesion_class);
                const PrefixCache* cache = caches.get(m.backbone, j, stream.test(j));
                const auto st = evaluate(m, stream.test(j), row, static_cast<int>(j + 1), lambda, 16, cache,
                                         last && cfg.log_routing ? &log : nullptr, "main", t, j);
                res.ledger.set(t, j, st.dsc);
                log_eval(log, "main", t, j, st.dsc);
                if (last) fill_heatmap(res.heatmap, m, j, st);
            }
            if (after_task) after_task(t, m);
        }
        res.model = std::move(m);
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json summary{{"type", "summary"}, {"average", res.ledger.average_final()}};
    if (tasks >= 2) summary["bwt"] = bwt(res.ledger, cfg.bwt_form);
    log.write(summary.dump());
    res.log = log.lines();
    return res;
}

RunResult report_from_log(const std::vector<std::string>& lines) {
    RunResult r;
    bool have_run = false;
    std::size_t last_after = 0;
    std::map<std::string, std::size_t> site_index;
    std::vector<std::vector<std::size_t>> counts;  // [site][task]
    for (const std::string& line : lines) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ValidationError(VKind::Parse, std::string("run log: ") + e.what());
        }
        const std::string type = j.value("type", "");
        if (type == "run") {
            r.ledger = MetricsLedger(j.at("task_names").get<std::vector<std::string>>());
            r.heatmap.tasks = j.at("task_names").get<std::vector<std::string>>();
            have_run = true;
        } else if (type == "eval") {
            if (!have_run) throw ValidationError(VKind::MissingField, "run log: eval record before the run record");
            r.ledger.set(j.at("after_task").get<std::size_t>() - 1, j.at("task").get<std::size_t>() - 1, j.at("dsc"));
        } else if (type == "expansion") {
            r.decisions.push_back(parse_decision_json(line));
        } else if (type == "routing") {
            const std::size_t after = j.at("after_task");
            if (after > last_after) {
                last_after = after;
                site_index.clear();
                counts.clear();
                r.heatmap.sites.clear();
                r.heatmap.weights.clear();
            }
            if (after < last_after) continue;
            const std::string site = j.at("site");
            auto [it, fresh] = site_index.try_emplace(site, r.heatmap.sites.size());
            if (fresh) {
                r.heatmap.sites.push_back(site);
                r.heatmap.weights.emplace_back(r.heatmap.tasks.size());
                counts.emplace_back(r.heatmap.tasks.size(), 0);
            }
            const std::size_t task = j.at("eval_task").get<std::size_t>() - 1;
            const auto w = j.at("w").get<std::vector<double>>();
            auto& acc = r.heatmap.weights[it->second].at(task);
            if (acc.empty()) acc.assign(w.size(), 0.0);
            for (std::size_t k = 0; k < w.size() && k < acc.size(); ++k) acc[k] += w[k];
            ++counts[it->second][task];
        }
    }
    if (!have_run) throw ValidationError(VKind::MissingField, "run log has no run record");
    for (std::size_t s = 0; s < counts.size(); ++s)
        for (std::size_t t = 0; t < counts[s].size(); ++t)
            for (double& x : r.heatmap.weights[s][t]) x /= static_cast<double>(counts[s][t]);
    r.log = lines;
    return r;
}

void write_reports(const RunResult& r, const RunConfig& cfg, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto put = [&](const std::string& name, const std::string& text) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw Error("cannot write " + (dir / name).string());
        out << text;
    };
    put("ledger.json", ledger_json(r.ledger) + "\n");
    put("report.csv", report_csv(r.ledger, cfg.bwt_form));
    put("growth.csv", growth_curve_csv(growth_curve(r.decisions)));
    put("routing_heatmap.csv", routing_heatmap_csv(r.heatmap));
}

RunResult run_continual(const RunConfig& cfg) {
    cfg.validate();
    ConceptMatrix concepts;
    TaskStream stream = build_stream(cfg, concepts);
    if (cfg.output_dir.empty()) return run_continual(cfg, stream, concepts);
    std::filesystem::create_directories(cfg.output_dir);
    std::ofstream log(std::filesystem::path(cfg.output_dir) / "run.jsonl", std::ios::binary);
    RunResult r = run_continual(cfg, stream, concepts, &log);
    write_reports(r, cfg, cfg.output_dir);
    save_checkpoint(r.model, std::filesystem::path(cfg.output_dir) / "model.ckpt");
    std::ofstream(std::filesystem::path(cfg.output_dir) / "config.cfg") << config_to_text(cfg);
    return r;
}

}  // namespace lcl
