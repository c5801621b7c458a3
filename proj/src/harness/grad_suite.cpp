#include "lcl/harness/grad_suite.hpp"

#include <algorithm>

#include "lcl/numerics/grad_check.hpp"
#include "lcl/numerics/ops.hpp"
#include "lcl/objectives/objectives.hpp"
#include "lcl/routing/site.hpp"

namespace lcl {

namespace {

Var contract(Var out, const Tensor& w) { return ops::sum(ops::mul(out, out.tape->constant(w))); }

void add(GradSuiteEntry& e, const GradCheckResult& r) {
    ++e.instances;
    e.entries += r.entries;
    e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
}

}  // namespace

std::vector<GradSuiteEntry> run_grad_suite(std::size_t instances, std::uint64_t seed, double eps) {
    GradSuiteEntry adapter{"adapter"}, routing{"routing"}, seg{"seg_loss"}, est{"estimator"};
    constexpr std::size_t d = 6, r = 3, m = 4, dt = 5, batch = 2, tokens = 3;

    for (std::size_t i = 0; i < instances; ++i) {
        Rng rng = Rng::derive(seed, i);

        AdapterExpert a = AdapterExpert::create("a", d, r, 0, rng);
        a.down.value() = rng.normal_tensor({d, r}, 0.7);
        a.up.value() = rng.normal_tensor({r, d}, 0.7);
        const Tensor x = rng.normal_tensor({batch * tokens, d}, 1.0);
        const Tensor wa = rng.normal_tensor({batch * tokens, d}, 1.0);
        add(adapter, grad_check([&](Tape& t) { return contract(adapter_forward(t, a, t.constant(x)), wa); },
                                {&a.down, &a.up}, eps));

        std::vector<Concept> cs;
        for (std::size_t c = 0; c < m; ++c) {
            std::vector<double> v(dt);
            for (double& e : v) e = rng.normal();
            cs.push_back({"c" + std::to_string(c), "", v});
        }
        const ConceptMatrix cm = ConceptMatrix::create(dt, cs, false);
        AdapterSite site;
        site.id = SiteId{0, Sublayer::Ffn};
        site.expandable = true;
        site.concept_count = m;
        site.projection.site = "s";
        site.projection.weight = Parameter("phi", rng.normal_tensor({dt, d}, 0.5));
        for (std::size_t k = 0; k < 3; ++k) {
            site.grow(0, r, 2, rng, rng.normal_tensor({m, 1}, 1.0));
            site.router_columns.back().value() = rng.normal_tensor({d, 1}, 1.0);
            site.experts.back().adapter.up.value() = rng.normal_tensor({r, d}, 0.7);
        }
        const Tensor base = rng.normal_tensor({batch * tokens, d}, 1.0);
        const double lambda = rng.uniform(0.0, 1.0);
        std::vector<Parameter*> ps{&site.projection.weight};
        for (auto& c : site.concept_columns) ps.push_back(&c);
        for (auto& c : site.router_columns) ps.push_back(&c);
        for (auto& e : site.experts) {
            ps.push_back(&e.adapter.down);
            ps.push_back(&e.adapter.up);
        }
        add(routing, grad_check(
                         [&](Tape& t) {
                             const SiteOutput o = site_forward(t, site, cm, t.constant(x), t.constant(base), batch,
                                                               tokens, lambda);
                             return contract(o.out, wa);
                         },
                         ps, eps));

        Parameter logits("logits", rng.normal_tensor({batch * tokens, 4}, 1.5));
        Tensor target({batch * tokens, 4});
        for (double& v : target.data()) v = rng.uniform(0.0, 1.0) < 0.4 ? 1.0 : 0.0;
        add(seg, grad_check(
                     [&](Tape& t) {
                         const Var p = ops::sigmoid(t.param(logits));
                         return ops::add(ops::scale(ops::dice_loss(p, target, batch), kDiceWeight),
                                         ops::scale(ops::bce_loss(p, target), kBceWeight));
                     },
                     {&logits}, eps));

        EstimatorState e = EstimatorState::create("e", d, r, rng);
        e.decoder.value() = rng.normal_tensor({r, d}, 0.7);
        add(est, grad_check([&](Tape& t) { return estimator_loss(t, e, x); }, {&e.encoder, &e.decoder}, eps));
    }
    return {adapter, routing, seg, est};
}

}  // namespace lcl
