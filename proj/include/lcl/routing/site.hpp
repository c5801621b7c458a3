#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lcl/adapters/adapters.hpp"
#include "lcl/concepts/concept_library.hpp"
#include "lcl/numerics/rng.hpp"
#include "lcl/numerics/tape.hpp"

namespace lcl {

enum class Sublayer { Attn, Ffn };

struct SiteId {
    std::size_t block = 0;
    Sublayer sublayer = Sublayer::Attn;

    /// e.g. "b3.attn" (block indices are zero-based).
    std::string str() const;
    bool operator==(const SiteId&) const = default;
};

/// One routing outcome per sample. Rows of w_c, w_v, w are distributions over
/// the site's K experts; s_bar is the pooled concept activation (1 x M).
struct RoutingDecision {
    Tensor w_c;
    Tensor w_v;
    Tensor w;
    Tensor s_bar;
};

/// Expert pool at one (block, sublayer) location together with its routers.
/// W_AC and W_r are stored column by column so that each column can be
/// frozen with the expert it describes.
struct AdapterSite {
    SiteId id;
    bool expandable = false;
    std::size_t concept_count = 0;  // M, rows of W_AC
    std::vector<Expert> experts;
    std::vector<Parameter> concept_columns;  // each M x 1: columns of W_AC
    std::vector<Parameter> router_columns;   // each d x 1: columns of W_r
    ConceptProjection projection;

    std::size_t size() const noexcept { return experts.size(); }
    std::size_t width() const { return projection.visual_dim(); }

    /// Appends an expert, its estimator, one W_AC column and one W_r column.
    /// The W_AC column starts at `concept_column` when given, else at zero;
    /// the W_r column is drawn from N(0, 0.02^2). Throws ContractViolation on
    /// a non-expandable site.
    void grow(std::size_t birth_task, std::size_t rank, std::size_t estimator_hidden, Rng& rng,
              const std::optional<Tensor>& concept_column = std::nullopt);

    Tensor concept_matrix() const;  // W_AC, M x K
    Tensor router_matrix() const;   // W_r, d x K

    /// Freezes every expert, column and the projection.
    void freeze_all();
};

/// Softmax(s_bar W_AC) for each row of s_bar (B x M) -> B x K.
Tensor concept_route(const AdapterSite& site, const Tensor& s_bar);
/// Softmax(x_bar W_r) for each row of x_bar (B x d) -> B x K.
Tensor image_route(const AdapterSite& site, const Tensor& x_bar);
/// lambda * w_c + (1 - lambda) * w_v. ParameterError unless lambda in [0, 1].
Tensor fuse(const Tensor& w_c, const Tensor& w_v, double lambda);

/// Single-sample evaluation of x_out = base_out + sum_k w_k f_k(x).
std::pair<Tensor, RoutingDecision> site_forward(const AdapterSite& site, const ConceptMatrix& concepts,
                                                const Tensor& x, const Tensor& base_out, double lambda);

struct SiteOutput {
    Var out;
    RoutingDecision decision;  // rows are samples
};

/// Batched, differentiable form over `batch` groups of `tokens` rows.
SiteOutput site_forward(Tape& tape, AdapterSite& site, const ConceptMatrix& concepts, Var x, Var base_out,
                        std::size_t batch, std::size_t tokens, double lambda);

struct AffinityEntry {
    std::size_t adapter = 0;
    std::size_t birth_task = 0;
    std::vector<std::pair<std::string, double>> top;
};

/// For every expert, the top-n concepts by W_AC column value (ties go to the
/// lower concept index).
std::vector<AffinityEntry> affinity_report(const AdapterSite& site, const ConceptMatrix& concepts,
                                           std::size_t top_n);

}  // namespace lcl
