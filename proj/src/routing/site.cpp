#include "lcl/routing/site.hpp"

#include <algorithm>
#include <numeric>

#include "lcl/errors.hpp"
#include "lcl/numerics/ops.hpp"

namespace lcl {

std::string SiteId::str() const {
    return "b" + std::to_string(block) + (sublayer == Sublayer::Attn ? ".attn" : ".ffn");
}

void AdapterSite::grow(std::size_t birth_task, std::size_t rank, std::size_t estimator_hidden, Rng& rng,
                       const std::optional<Tensor>& concept_column) {
    if (!expandable) throw ContractViolation("site " + id.str() + " is not expandable");
    const std::size_t d = width();
    const std::size_t m = concept_count;
    const std::string base = id.str() + ".e" + std::to_string(experts.size());

    Expert e{AdapterExpert::create(base + ".adapter", d, rank, birth_task, rng),
             EstimatorState::create(base + ".est", d, estimator_hidden, rng)};
    Tensor wac({m, 1});
    if (concept_column) {
        if (concept_column->size() != m) {
            throw ShapeError("concept column for " + id.str() + " has " + std::to_string(concept_column->size()) +
                             " entries, expected " + std::to_string(m));
        }
        for (std::size_t i = 0; i < m; ++i) wac[i] = (*concept_column)[i];
    }
    Tensor wr = rng.normal_tensor({d, 1}, 0.02);

    experts.push_back(std::move(e));
    concept_columns.emplace_back(base + ".wac", std::move(wac));
    router_columns.emplace_back(base + ".wr", std::move(wr));
}

namespace {

Tensor stack_columns(const std::vector<Parameter>& cols, std::size_t rows) {
    Tensor out({rows, cols.size()});
    for (std::size_t k = 0; k < cols.size(); ++k)
        for (std::size_t i = 0; i < rows; ++i) out(i, k) = cols[k].value()[i];
    return out;
}

void require_experts(const AdapterSite& site) {
    if (site.size() == 0) throw ContractViolation("site " + site.id.str() + " holds no experts");
}

}  // namespace

Tensor AdapterSite::concept_matrix() const { return stack_columns(concept_columns, concept_count); }
Tensor AdapterSite::router_matrix() const { return stack_columns(router_columns, width()); }

void AdapterSite::freeze_all() {
    for (auto& e : experts) freeze(e);
    for (auto& c : concept_columns) c.freeze();
    for (auto& c : router_columns) c.freeze();
    projection.weight.freeze();
}

Tensor concept_route(const AdapterSite& site, const Tensor& s_bar) {
    require_experts(site);
    return softmax_rows(matmul(s_bar, site.concept_matrix()));
}

Tensor image_route(const AdapterSite& site, const Tensor& x_bar) {
    require_experts(site);
    return softmax_rows(matmul(x_bar, site.router_matrix()));
}

Tensor fuse(const Tensor& w_c, const Tensor& w_v, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("lambda must lie in [0, 1], got " + std::to_string(lambda));
    if (w_c.shape() != w_v.shape()) {
        throw ShapeError("fuse: " + shape_str(w_c.shape()) + " vs " + shape_str(w_v.shape()));
    }
    Tensor out(w_c.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = lambda * w_c[i] + (1.0 - lambda) * w_v[i];
    return out;
}

std::pair<Tensor, RoutingDecision> site_forward(const AdapterSite& site, const ConceptMatrix& concepts,
                                                const Tensor& x, const Tensor& base_out, double lambda) {
    require_rank2(x, "site_forward");
    if (x.shape() != base_out.shape()) {
        throw ShapeError("site_forward: input " + shape_str(x.shape()) + " vs base output " +
                         shape_str(base_out.shape()));
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("lambda must lie in [0, 1], got " + std::to_string(lambda));
    require_experts(site);
    const ConceptSimilarity sim = concept_similarity(x, project_concepts(concepts, site.projection));
    Tensor x_bar({1, x.cols()});
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) x_bar[j] += x(i, j);
    for (std::size_t j = 0; j < x.cols(); ++j) x_bar[j] /= static_cast<double>(x.rows());

    RoutingDecision dec;
    dec.s_bar = sim.pooled;
    dec.w_c = concept_route(site, dec.s_bar);
    dec.w_v = image_route(site, x_bar);
    dec.w = fuse(dec.w_c, dec.w_v, lambda);

    Tensor out = base_out;
    for (std::size_t k = 0; k < site.size(); ++k) {
        const Tensor f = adapter_forward(site.experts[k].adapter, x);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += dec.w[k] * f[i];
    }
    return {std::move(out), std::move(dec)};
}

SiteOutput site_forward(Tape& tape, AdapterSite& site, const ConceptMatrix& concepts, Var x, Var base_out,
                        std::size_t batch, std::size_t tokens, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("lambda must lie in [0, 1], got " + std::to_string(lambda));
    if (x.value().shape() != base_out.value().shape() || x.value().rows() != batch * tokens) {
        throw ShapeError("site_forward: input " + shape_str(x.value().shape()) + ", base output " +
                         shape_str(base_out.value().shape()) + ", batch " + std::to_string(batch) + " x " +
                         std::to_string(tokens));
    }
    SiteOutput res{base_out, {}};
    if (site.size() == 0) return res;

    const Var c_proj = project_concepts(tape, concepts, site.projection);
    const Var x_bar = ops::mean_blocks(x, tokens);
    const Var s_bar = ops::matmul_nt(x_bar, c_proj);

    std::vector<Var> wac, wr;
    for (auto& c : site.concept_columns) wac.push_back(tape.param(c));
    for (auto& c : site.router_columns) wr.push_back(tape.param(c));
    const Var w_c = ops::softmax_rows(ops::matmul(s_bar, ops::concat_cols(wac)));
    const Var w_v = ops::softmax_rows(ops::matmul(x_bar, ops::concat_cols(wr)));
    const Var w = ops::add(ops::scale(w_c, lambda), ops::scale(w_v, 1.0 - lambda));

    Var out = base_out;
    for (std::size_t k = 0; k < site.size(); ++k) {
        const Var f = adapter_forward(tape, site.experts[k].adapter, x);
        out = ops::add(out, ops::scale_blocks(f, ops::slice_cols(w, k, 1), tokens));
    }
    res.out = out;
    res.decision = {w_c.value(), w_v.value(), w.value(), s_bar.value()};
    return res;
}

std::vector<AffinityEntry> affinity_report(const AdapterSite& site, const ConceptMatrix& concepts,
                                           std::size_t top_n) {
    std::vector<AffinityEntry> out;
    for (std::size_t k = 0; k < site.size(); ++k) {
        const Tensor& col = site.concept_columns[k].value();
        if (col.size() != concepts.size()) {
            throw ShapeError("affinity_report: W_AC column has " + std::to_string(col.size()) + " rows, " +
                             std::to_string(concepts.size()) + " concepts");
        }
        std::vector<std::size_t> idx(col.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return col[a] > col[b]; });
        AffinityEntry e{k, site.experts[k].adapter.birth_task, {}};
        for (std::size_t i = 0; i < std::min(top_n, idx.size()); ++i) e.top.emplace_back(concepts.name(idx[i]), col[idx[i]]);
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace lcl
