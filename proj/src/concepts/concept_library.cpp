#include "lcl/concepts/concept_library.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "lcl/errors.hpp"
#include "lcl/numerics/ops.hpp"
#include "lcl/numerics/rng.hpp"

namespace lcl {

using json = nlohmann::json;
using VKind = ValidationError::Kind;

namespace {

std::string concept_label(std::size_t index, const std::string& name) {
    return "concept #" + std::to_string(index + 1) + (name.empty() ? "" : " ('" + name + "')");
}

double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

ConceptMatrix ConceptMatrix::create(std::size_t dim, std::vector<Concept> concepts, bool already_normalized,
                                    bool normalize) {
    if (dim == 0) throw ValidationError(VKind::InvalidValue, "concept matrix: dim must be positive");
    if (concepts.empty()) throw ValidationError(VKind::Empty, "concept matrix: no concepts");
    ConceptMatrix cm;
    cm.dim_ = dim;
    cm.embeddings_ = Tensor({concepts.size(), dim});
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < concepts.size(); ++i) {
        Concept& c = concepts[i];
        if (c.name.empty()) throw ValidationError(VKind::MissingField, concept_label(i, c.name) + ": empty name");
        if (!seen.insert(c.name).second) {
            throw ValidationError(VKind::DuplicateName, concept_label(i, c.name) + ": duplicate name");
        }
        if (c.vector.size() != dim) {
            throw ValidationError(VKind::DimensionMismatch, concept_label(i, c.name) + ": vector length " +
                                                                std::to_string(c.vector.size()) + ", expected " +
                                                                std::to_string(dim));
        }
        for (double x : c.vector) {
            if (!std::isfinite(x)) {
                throw ValidationError(VKind::NonFinite, concept_label(i, c.name) + ": non-finite component");
            }
        }
        if (normalize && !already_normalized) {
            const double n = l2_norm(c.vector);
            if (n == 0.0) {
                throw ValidationError(VKind::InvalidValue, concept_label(i, c.name) + ": zero vector cannot be normalized");
            }
            for (double& x : c.vector) x /= n;
        }
        for (std::size_t j = 0; j < dim; ++j) cm.embeddings_(i, j) = c.vector[j];
        cm.names_.push_back(std::move(c.name));
        cm.texts_.push_back(std::move(c.text));
    }
    cm.normalized_ = already_normalized || normalize;
    return cm;
}

std::size_t ConceptMatrix::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return i;
    throw ValidationError(VKind::InvalidValue, "unknown concept '" + name + "'");
}

bool ConceptMatrix::bit_equal(const ConceptMatrix& other) const {
    return dim_ == other.dim_ && normalized_ == other.normalized_ && names_ == other.names_ &&
           texts_ == other.texts_ && embeddings_.bit_equal(other.embeddings_);
}

ConceptMatrix parse_concept_matrix(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(VKind::Parse, std::string("concept matrix: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError(VKind::Parse, "concept matrix: top level must be an object");
    for (const char* key : {"dim", "normalized", "concepts"}) {
        if (!doc.contains(key)) throw ValidationError(VKind::MissingField, std::string("concept matrix: missing '") + key + "'");
    }
    if (!doc["dim"].is_number_integer() || doc["dim"].get<long long>() <= 0) {
        throw ValidationError(VKind::InvalidValue, "concept matrix: 'dim' must be a positive integer");
    }
    if (!doc["normalized"].is_boolean()) throw ValidationError(VKind::InvalidValue, "concept matrix: 'normalized' must be a bool");
    if (!doc["concepts"].is_array()) throw ValidationError(VKind::InvalidValue, "concept matrix: 'concepts' must be an array");

    const auto dim = doc["dim"].get<std::size_t>();
    std::vector<Concept> concepts;
    const auto& arr = doc["concepts"];
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& c = arr[i];
        const std::string name = c.is_object() && c.contains("name") && c["name"].is_string() ? c["name"].get<std::string>() : "";
        for (const char* key : {"name", "text", "vector"}) {
            if (!c.is_object() || !c.contains(key)) {
                throw ValidationError(VKind::MissingField, concept_label(i, name) + ": missing '" + key + "'");
            }
        }
        if (!c["name"].is_string() || !c["text"].is_string()) {
            throw ValidationError(VKind::InvalidValue, concept_label(i, name) + ": name and text must be strings");
        }
        if (!c["vector"].is_array()) throw ValidationError(VKind::InvalidValue, concept_label(i, name) + ": vector must be an array");
        Concept out{name, c["text"].get<std::string>(), {}};
        for (const auto& x : c["vector"]) {
            if (!x.is_number()) throw ValidationError(VKind::InvalidValue, concept_label(i, name) + ": non-numeric component");
            out.vector.push_back(x.get<double>());
        }
        concepts.push_back(std::move(out));
    }
    return ConceptMatrix::create(dim, std::move(concepts), doc["normalized"].get<bool>());
}

ConceptMatrix load_concept_matrix(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError(VKind::Parse, "cannot open concept matrix file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_concept_matrix(ss.str());
}

std::string dump_concept_matrix(const ConceptMatrix& cm) {
    json doc;
    doc["dim"] = cm.dim();
    doc["normalized"] = cm.normalized();
    doc["concepts"] = json::array();
    for (std::size_t i = 0; i < cm.size(); ++i) {
        json c;
        c["name"] = cm.name(i);
        c["text"] = cm.text(i);
        std::vector<double> v(cm.dim());
        for (std::size_t j = 0; j < cm.dim(); ++j) v[j] = cm.embeddings()(i, j);
        c["vector"] = v;
        doc["concepts"].push_back(std::move(c));
    }
    return doc.dump(1);
}

void save_concept_matrix(const ConceptMatrix& cm, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write concept matrix file " + path.string());
    out << dump_concept_matrix(cm) << '\n';
}

Tensor project_concepts(const ConceptMatrix& cm, const ConceptProjection& proj) {
    if (proj.text_dim() != cm.dim()) {
        throw ShapeError("projection expects text width " + std::to_string(proj.text_dim()) + ", concepts have " +
                         std::to_string(cm.dim()));
    }
    return matmul(cm.embeddings(), proj.weight.value());
}

Var project_concepts(Tape& tape, const ConceptMatrix& cm, ConceptProjection& proj) {
    if (proj.text_dim() != cm.dim()) {
        throw ShapeError("projection expects text width " + std::to_string(proj.text_dim()) + ", concepts have " +
                         std::to_string(cm.dim()));
    }
    return ops::matmul(tape.constant(cm.embeddings()), tape.param(proj.weight));
}

ConceptSimilarity concept_similarity(const Tensor& x, const Tensor& projected_concepts) {
    require_rank2(x, "concept_similarity");
    if (x.rows() == 0) throw EmptyInputError("concept_similarity: no tokens");
    ConceptSimilarity out;
    out.tokens_by_concepts = matmul_nt(x, projected_concepts);
    const std::size_t n = x.rows(), m = projected_concepts.rows();
    out.pooled = Tensor({1, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.pooled[j] += out.tokens_by_concepts(i, j);
    for (std::size_t j = 0; j < m; ++j) out.pooled[j] /= static_cast<double>(n);
    return out;
}

SynthConcepts synth_concepts(const std::vector<ConceptProfile>& profiles, std::size_t dim, std::uint64_t seed) {
    if (dim < 1) throw ParameterError("synth_concepts: dim must be >= 1");
    std::vector<std::string> names;
    std::unordered_set<std::string> seen;
    for (const auto& p : profiles)
        for (const auto& [name, w] : p.activations)
            if (seen.insert(name).second) names.push_back(name);
    if (names.empty()) throw ParameterError("synth_concepts: profiles reference no concepts");

    Rng rng = Rng::derive(seed, 0xC0C0);
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < names.size(); ++i) {
        std::vector<double> v(dim);
        for (double& x : v) x = rng.normal();
        if (i < dim) {
            // Two Gram-Schmidt passes for numerical orthogonality.
            for (int pass = 0; pass < 2; ++pass) {
                for (const auto& r : rows) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < dim; ++j) dot += v[j] * r[j];
                    for (std::size_t j = 0; j < dim; ++j) v[j] -= dot * r[j];
                }
            }
        }
        const double n = l2_norm(v);
        for (double& x : v) x /= n;
        rows.push_back(std::move(v));
    }
    std::vector<Concept> concepts;
    for (std::size_t i = 0; i < names.size(); ++i) {
        concepts.push_back({names[i], "synthetic concept " + names[i], rows[i]});
    }
    SynthConcepts out;
    out.matrix = ConceptMatrix::create(dim, std::move(concepts), true, false);
    for (const auto& p : profiles) {
        Tensor a({1, names.size()});
        for (const auto& [name, w] : p.activations) a[out.matrix.index_of(name)] += w;
        out.task_activations.push_back(std::move(a));
    }
    return out;
}

ConceptMatrix random_concepts_like(const ConceptMatrix& like, std::uint64_t seed) {
    Rng rng = Rng::derive(seed, 0xBAD0C0);
    std::vector<Concept> concepts;
    for (std::size_t i = 0; i < like.size(); ++i) {
        std::vector<double> v(like.dim());
        for (double& x : v) x = rng.normal();
        concepts.push_back({like.name(i), "random description " + std::to_string(i), std::move(v)});
    }
    return ConceptMatrix::create(like.dim(), std::move(concepts), false, true);
}

}  // namespace lcl
