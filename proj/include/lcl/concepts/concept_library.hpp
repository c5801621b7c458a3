#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "lcl/numerics/tape.hpp"
#include "lcl/numerics/tensor.hpp"

namespace lcl {

struct Concept {
    std::string name;
    std::string text;
    std::vector<double> vector;
};

/// Ordered concept embeddings. Row order is the canonical concept index: row i
/// of the adapter-concept matrices always refers to concept i here.
class ConceptMatrix {
public:
    ConceptMatrix() = default;

    /// Validates and builds the matrix. With `normalize` set, every vector is
    /// scaled to unit L2 norm and the matrix is marked normalized.
    static ConceptMatrix create(std::size_t dim, std::vector<Concept> concepts, bool already_normalized,
                                bool normalize = true);

    std::size_t size() const noexcept { return names_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    bool normalized() const noexcept { return normalized_; }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    const std::string& text(std::size_t i) const { return texts_.at(i); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    /// M x d_t embedding matrix.
    const Tensor& embeddings() const noexcept { return embeddings_; }
    /// Row index of `name`; throws ValidationError if unknown.
    std::size_t index_of(const std::string& name) const;

    bool bit_equal(const ConceptMatrix& other) const;

private:
    std::size_t dim_ = 0;
    bool normalized_ = false;
    std::vector<std::string> names_;
    std::vector<std::string> texts_;
    Tensor embeddings_;
};

/// Concept-matrix JSON: { "dim", "normalized", "concepts": [{name, text, vector}] }.
ConceptMatrix parse_concept_matrix(const std::string& json_text);
ConceptMatrix load_concept_matrix(const std::filesystem::path& path);
std::string dump_concept_matrix(const ConceptMatrix& cm);
void save_concept_matrix(const ConceptMatrix& cm, const std::filesystem::path& path);

/// Learnable map from text space (d_t) into a site's visual width (d).
struct ConceptProjection {
    std::string site;
    Parameter weight;  // d_t x d

    std::size_t text_dim() const { return weight.value().rows(); }
    std::size_t visual_dim() const { return weight.value().cols(); }
};

/// C~ = C^ * phi  (M x d).
Tensor project_concepts(const ConceptMatrix& cm, const ConceptProjection& proj);
Var project_concepts(Tape& tape, const ConceptMatrix& cm, ConceptProjection& proj);

struct ConceptSimilarity {
    Tensor tokens_by_concepts;  // S, N x M
    Tensor pooled;              // s-bar, 1 x M (column mean of S)
};

/// S = x C~^T and its token mean.
ConceptSimilarity concept_similarity(const Tensor& x, const Tensor& projected_concepts);

struct ConceptProfile {
    std::string task;
    std::vector<std::pair<std::string, double>> activations;
};

struct SynthConcepts {
    ConceptMatrix matrix;
    /// One 1 x M ground-truth activation row per profile, in profile order.
    std::vector<Tensor> task_activations;
};

/// Deterministic synthetic library: one concept per distinct name referenced
/// by the profiles (first-appearance order), rows orthonormalized by
/// Gram-Schmidt over seeded Gaussian draws while M <= d_t.
SynthConcepts synth_concepts(const std::vector<ConceptProfile>& profiles, std::size_t dim, std::uint64_t seed);

/// Random unit-norm library with the same names as `like` (the "random
/// concepts" ablation): vectors carry no relation to any task.
ConceptMatrix random_concepts_like(const ConceptMatrix& like, std::uint64_t seed);

}  // namespace lcl
