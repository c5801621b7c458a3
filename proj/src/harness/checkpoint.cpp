#include "lcl/harness/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "lcl/errors.hpp"

namespace lcl {

static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");

using json = nlohmann::json;
using CKind = CheckpointError::Kind;

namespace {

constexpr char kMagic[4] = {'L', 'C', 'K', 'P'};

std::uint64_t fnv1a(const char* p, std::size_t n) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(p[i]);
        h *= 1099511628211ULL;
    }
    return h;
}

class Writer {
public:
    template <class T>
    void put(T v) {
        char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        out_.append(b, sizeof(T));
    }
    void bytes(const std::string& s) {
        put<std::uint64_t>(s.size());
        out_ += s;
    }
    void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
    std::string& str() { return out_; }

private:
    std::string out_;
};

class Reader {
public:
    Reader(const char* p, std::size_t n) : p_(p), n_(n) {}
    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, p_ + at_, sizeof(T));
        at_ += sizeof(T);
        return v;
    }
    std::string bytes() {
        const auto n = get<std::uint64_t>();
        need(n);
        std::string s(p_ + at_, n);
        at_ += n;
        return s;
    }
    void raw(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, p_ + at_, n);
        at_ += n;
    }
    bool done() const { return at_ == n_; }

private:
    void need(std::uint64_t n) const {
        if (n > n_ - at_) throw CheckpointError(CKind::Corrupt, "checkpoint truncated");
    }
    const char* p_;
    std::size_t n_;
    std::size_t at_ = 0;
};

void put_tensor(Writer& w, const Tensor& t) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
    w.raw(t.data().data(), t.size() * sizeof(double));
}

Tensor get_tensor(Reader& r) {
    const auto rank = r.get<std::uint32_t>();
    if (rank > 4) throw CheckpointError(CKind::Corrupt, "tensor rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.get<std::uint64_t>());
    Tensor t(shape);
    r.raw(t.data().data(), t.size() * sizeof(double));
    return t;
}

json backbone_json(const BackboneConfig& c) {
    return {{"image", c.image},
            {"channels", c.channels},
            {"patch", c.patch},
            {"width", c.width},
            {"blocks", c.blocks},
            {"heads", c.heads},
            {"mlp_ratio", c.mlp_ratio},
            {"positional", c.positional},
            {"rank", c.rank},
            {"estimator_hidden", c.estimator_hidden},
            {"expandable_blocks", c.expandable_blocks}};
}

BackboneConfig backbone_from(const json& j) {
    BackboneConfig c;
    c.image = j.at("image");
    c.channels = j.at("channels");
    c.patch = j.at("patch");
    c.width = j.at("width");
    c.blocks = j.at("blocks");
    c.heads = j.at("heads");
    c.mlp_ratio = j.at("mlp_ratio");
    c.positional = j.at("positional");
    c.rank = j.at("rank");
    c.estimator_hidden = j.at("estimator_hidden");
    c.expandable_blocks = j.at("expandable_blocks").get<std::vector<std::size_t>>();
    return c;
}

std::string meta_section(const Model& m) {
    json sites = json::array();
    for (const AdapterSite* s : m.backbone.sites()) {
        json experts = json::array();
        for (const Expert& e : s->experts) {
            const RunningStats& st = e.estimator.stats;
            experts.push_back({{"birth_task", e.adapter.birth_task},
                               {"rank", e.adapter.rank()},
                               {"hidden", e.estimator.encoder.value().cols()},
                               {"stats_n", st.n},
                               {"stats_mean", std::bit_cast<std::uint64_t>(st.mean)},
                               {"stats_m2", std::bit_cast<std::uint64_t>(st.m2)},
                               {"stats_locked", e.estimator.stats_locked}});
        }
        sites.push_back({{"site", s->id.str()}, {"experts", experts}});
    }
    json rows = json::array();
    for (const ClassRow& r : m.head.rows) rows.push_back({{"name", r.name}, {"task", r.task}});
    json concepts = json::array();
    for (std::size_t i = 0; i < m.concepts.size(); ++i) {
        concepts.push_back({{"name", m.concepts.name(i)}, {"text", m.concepts.text(i)}});
    }
    json meta{{"backbone", backbone_json(m.backbone.config)},
              {"sites", sites},
              {"head", rows},
              {"concept_dim", m.concepts.dim()},
              {"concepts_normalized", m.concepts.normalized()},
              {"concepts", concepts}};
    return meta.dump();
}

Model rebuild(const json& meta, const Tensor& embeddings) {
    std::vector<Concept> cs;
    const json& names = meta.at("concepts");
    const std::size_t dim = meta.at("concept_dim");
    if (embeddings.rank() != 2 || embeddings.rows() != names.size() || embeddings.cols() != dim) {
        throw CheckpointError(CKind::Corrupt, "concept embeddings do not match the concept list");
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
        Concept c{names[i].at("name"), names[i].at("text"), {}};
        for (std::size_t j = 0; j < dim; ++j) c.vector.push_back(embeddings(i, j));
        cs.push_back(std::move(c));
    }
    ConceptMatrix concepts = ConceptMatrix::create(dim, std::move(cs), meta.at("concepts_normalized"), false);

    const BackboneConfig bc = backbone_from(meta.at("backbone"));
    Rng scratch(0);
    Model m{ToyBackbone::create(bc, concepts.dim(), concepts.size(), scratch), SegmentationHead::create(bc), concepts};

    const json& sites = meta.at("sites");
    auto ptrs = m.backbone.sites();
    if (sites.size() != ptrs.size()) throw CheckpointError(CKind::Corrupt, "site count mismatch");
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
        AdapterSite& s = *ptrs[i];
        if (sites[i].at("site") != s.id.str()) throw CheckpointError(CKind::Corrupt, "site order mismatch");
        const bool expandable = s.expandable;
        s.expandable = true;  // checkpoints may carry experts on any site (joint, individual)
        for (const json& e : sites[i].at("experts")) {
            s.grow(e.at("birth_task"), e.at("rank"), e.at("hidden"), scratch);
            EstimatorState& est = s.experts.back().estimator;
            est.stats.n = e.at("stats_n");
            est.stats.mean = std::bit_cast<double>(e.at("stats_mean").get<std::uint64_t>());
            est.stats.m2 = std::bit_cast<double>(e.at("stats_m2").get<std::uint64_t>());
            est.stats_locked = e.at("stats_locked");
        }
        s.expandable = expandable;
    }
    const json& rows = meta.at("head");
    if (rows.empty() || rows[0].at("name") != "background") throw CheckpointError(CKind::Corrupt, "head without background row");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const std::string name = rows[i].at("name");
        m.head.rows.push_back(ClassRow{name, rows[i].at("task"),
                                       Parameter("head." + name + ".w", Tensor({bc.width, bc.patch_pixels()})),
                                       Parameter("head." + name + ".b", Tensor({1, bc.patch_pixels()}))});
    }
    return m;
}

}  // namespace

std::string serialize_model(const Model& m) {
    Writer conc;
    put_tensor(conc, m.concepts.embeddings());

    Writer parm;
    const auto params = m.parameters();
    parm.put<std::uint64_t>(params.size());
    for (const Parameter* p : params) {
        parm.bytes(p->name());
        parm.put<std::uint8_t>(p->frozen() ? 1 : 0);
        put_tensor(parm, p->value());
    }

    Writer w;
    w.raw(kMagic, 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint32_t>(3);
    auto section = [&](const char* tag, const std::string& payload) {
        w.raw(tag, 4);
        w.bytes(payload);
    };
    section("META", meta_section(m));
    section("CONC", conc.str());
    section("PARM", parm.str());
    w.put<std::uint64_t>(fnv1a(w.str().data(), w.str().size()));
    return std::move(w.str());
}

Model deserialize_model(const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw CheckpointError(CKind::BadMagic, "not a checkpoint (bad magic)");
    }
    if (bytes.size() < 16) throw CheckpointError(CKind::Corrupt, "checkpoint truncated");
    Reader head(bytes.data() + 4, 4);
    const auto version = head.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError(CKind::VersionMismatch, "checkpoint version " + std::to_string(version) +
                                                          ", expected " + std::to_string(kCheckpointVersion));
    }
    const std::size_t body = bytes.size() - 8;
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body, 8);
    if (stored != fnv1a(bytes.data(), body)) throw CheckpointError(CKind::Corrupt, "checkpoint checksum mismatch");

    Reader r(bytes.data() + 8, body - 8);
    const auto count = r.get<std::uint32_t>();
    std::string meta_text, conc, parm;
    for (std::uint32_t i = 0; i < count; ++i) {
        char tag[5] = {};
        r.raw(tag, 4);
        std::string payload = r.bytes();
        const std::string t(tag);
        if (t == "META") meta_text = std::move(payload);
        else if (t == "CONC") conc = std::move(payload);
        else if (t == "PARM") parm = std::move(payload);
    }
    if (!r.done()) throw CheckpointError(CKind::Corrupt, "trailing bytes after the last section");
    if (meta_text.empty() || conc.empty() || parm.empty()) throw CheckpointError(CKind::Corrupt, "missing section");

    try {
        Reader cr(conc.data(), conc.size());
        Model m = rebuild(json::parse(meta_text), get_tensor(cr));

        Reader pr(parm.data(), parm.size());
        auto params = m.parameters();
        if (pr.get<std::uint64_t>() != params.size()) throw CheckpointError(CKind::Corrupt, "parameter count mismatch");
        for (Parameter* p : params) {
            const std::string name = pr.bytes();
            const bool frozen = pr.get<std::uint8_t>() != 0;
            Tensor value = get_tensor(pr);
            if (name != p->name() || value.shape() != p->value().shape()) {
                throw CheckpointError(CKind::Corrupt, "parameter '" + name + "' does not match the structure");
            }
            *p = Parameter(name, std::move(value));
            if (frozen) p->freeze();
        }
        if (!pr.done()) throw CheckpointError(CKind::Corrupt, "trailing parameter bytes");
        return m;
    } catch (const json::exception& e) {
        throw CheckpointError(CKind::Corrupt, std::string("checkpoint metadata: ") + e.what());
    } catch (const ValidationError& e) {
        throw CheckpointError(CKind::Corrupt, std::string("checkpoint concepts: ") + e.what());
    }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    const std::string bytes = serialize_model(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError(CKind::Io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CKind::Io, "write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CKind::Io, "cannot read " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

}  // namespace lcl
