#include "lcl/backbone/backbone.hpp"

#include <cmath>

#include "lcl/errors.hpp"
#include "lcl/numerics/ops.hpp"

namespace lcl {

void BackboneConfig::validate() const {
    if (patch == 0 || image == 0 || image % patch != 0) {
        throw ShapeError("image size " + std::to_string(image) + " is not divisible by patch " + std::to_string(patch));
    }
    if (blocks < 2) throw ParameterError("backbone needs at least two blocks");
    if (channels == 0 || width == 0 || mlp_ratio == 0) throw ParameterError("backbone dimensions must be positive");
    if (heads == 0 || width % heads != 0) throw ParameterError("width must be divisible by the head count");
    if (rank == 0 || rank >= width) throw ParameterError("adapter rank must satisfy 0 < r < d");
    if (estimator_hidden == 0) throw ParameterError("estimator hidden width must be positive");
    for (std::size_t b : expandable_blocks) {
        if (b >= blocks) throw ParameterError("expandable block " + std::to_string(b) + " does not exist");
    }
}

namespace {

Parameter gaussian(const std::string& name, Shape shape, double sd, Rng& rng) {
    return Parameter(name, rng.normal_tensor(std::move(shape), sd));
}

Parameter filled(const std::string& name, Shape shape, double v) { return Parameter(name, Tensor(std::move(shape), v)); }

AdapterSite make_site(std::size_t block, Sublayer s, const BackboneConfig& c, std::size_t concept_dim,
                      std::size_t concept_count, Rng& rng) {
    AdapterSite site;
    site.id = SiteId{block, s};
    for (std::size_t b : c.expandable_blocks) site.expandable = site.expandable || b == block;
    site.concept_count = concept_count;
    site.projection.site = site.id.str();
    site.projection.weight = gaussian(site.id.str() + ".phi", {concept_dim, c.width},
                                      1.0 / std::sqrt(static_cast<double>(concept_dim)), rng);
    return site;
}

}  // namespace

ToyBackbone ToyBackbone::create(const BackboneConfig& c, std::size_t concept_dim, std::size_t concept_count,
                                Rng& rng) {
    c.validate();
    const std::size_t d = c.width, h = c.width * c.mlp_ratio;
    const double sd_d = 1.0 / std::sqrt(static_cast<double>(d));
    ToyBackbone bb;
    bb.config = c;
    bb.patch_weight = gaussian("embed.w", {c.patch_features(), d}, 1.0 / std::sqrt(static_cast<double>(c.patch_features())), rng);
    bb.patch_bias = filled("embed.b", {1, d}, 0.0);
    bb.position = gaussian("embed.pos", {c.tokens(), d}, 0.02, rng);
    for (std::size_t b = 0; b < c.blocks; ++b) {
        const std::string p = "b" + std::to_string(b) + ".";
        Block blk;
        blk.ln1_gain = filled(p + "ln1.g", {1, d}, 1.0);
        blk.ln1_bias = filled(p + "ln1.b", {1, d}, 0.0);
        blk.wq = gaussian(p + "wq", {d, d}, sd_d, rng);
        blk.wk = gaussian(p + "wk", {d, d}, sd_d, rng);
        blk.wv = gaussian(p + "wv", {d, d}, sd_d, rng);
        blk.wo = gaussian(p + "wo", {d, d}, sd_d, rng);
        blk.bo = filled(p + "bo", {1, d}, 0.0);
        blk.ln2_gain = filled(p + "ln2.g", {1, d}, 1.0);
        blk.ln2_bias = filled(p + "ln2.b", {1, d}, 0.0);
        blk.w1 = gaussian(p + "w1", {d, h}, sd_d, rng);
        blk.b1 = filled(p + "b1", {1, h}, 0.0);
        blk.w2 = gaussian(p + "w2", {h, d}, 1.0 / std::sqrt(static_cast<double>(h)), rng);
        blk.b2 = filled(p + "b2", {1, d}, 0.0);
        blk.attn = make_site(b, Sublayer::Attn, c, concept_dim, concept_count, rng);
        blk.ffn = make_site(b, Sublayer::Ffn, c, concept_dim, concept_count, rng);
        bb.blocks.push_back(std::move(blk));
    }
    bb.final_gain = filled("final.g", {1, d}, 1.0);
    bb.final_bias = filled("final.b", {1, d}, 0.0);
    if (!c.positional) bb.position.freeze();
    if (!c.positional) bb.position.value().fill(0.0);
    return bb;
}

std::vector<AdapterSite*> ToyBackbone::sites() {
    std::vector<AdapterSite*> out;
    for (auto& b : blocks) {
        out.push_back(&b.attn);
        out.push_back(&b.ffn);
    }
    return out;
}

std::vector<const AdapterSite*> ToyBackbone::sites() const {
    std::vector<const AdapterSite*> out;
    for (const auto& b : blocks) {
        out.push_back(&b.attn);
        out.push_back(&b.ffn);
    }
    return out;
}

std::vector<Parameter*> ToyBackbone::base_parameters() {
    std::vector<Parameter*> out{&patch_weight, &patch_bias, &position};
    for (auto& b : blocks) {
        for (Parameter* p : {&b.ln1_gain, &b.ln1_bias, &b.wq, &b.wk, &b.wv, &b.wo, &b.bo, &b.ln2_gain, &b.ln2_bias,
                             &b.w1, &b.b1, &b.w2, &b.b2}) {
            out.push_back(p);
        }
    }
    out.push_back(&final_gain);
    out.push_back(&final_bias);
    return out;
}

void ToyBackbone::freeze_base() {
    for (Parameter* p : base_parameters()) p->freeze();
}

Tensor ToyBackbone::channel_embedding(std::size_t channel) const {
    if (channel >= config.channels) throw ParameterError("channel " + std::to_string(channel) + " does not exist");
    const std::size_t pp = config.patch_pixels(), d = config.width;
    Tensor out({pp, d});
    for (std::size_t i = 0; i < pp; ++i)
        for (std::size_t j = 0; j < d; ++j) out(i, j) = patch_weight.value()(i * config.channels + channel, j);
    return out;
}

SegmentationHead SegmentationHead::create(const BackboneConfig& c) {
    SegmentationHead head;
    head.rows.push_back(ClassRow{"background", 0, Parameter("head.background.w", Tensor({c.width, c.patch_pixels()})),
                                 Parameter("head.background.b", Tensor({1, c.patch_pixels()}))});
    return head;
}

std::size_t SegmentationHead::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i].name == name) return i;
    throw RegistryError("unknown class '" + name + "'");
}

std::vector<std::size_t> register_task_classes(SegmentationHead& head, const std::vector<std::string>& classes,
                                               std::size_t task) {
    for (std::size_t i = 0; i < classes.size(); ++i) {
        for (const auto& r : head.rows)
            if (r.name == classes[i]) throw RegistryError("class '" + classes[i] + "' is already registered");
        for (std::size_t j = 0; j < i; ++j)
            if (classes[j] == classes[i]) throw RegistryError("class '" + classes[i] + "' listed twice");
    }
    if (head.rows.empty()) throw RegistryError("head has no background row");
    for (std::size_t i = 1; i < head.rows.size(); ++i) {
        if (head.rows[i].task < task) {
            head.rows[i].weight.freeze();
            head.rows[i].bias.freeze();
        }
    }
    const Shape ws = head.rows.front().weight.value().shape();
    const Shape bs = head.rows.front().bias.value().shape();
    std::vector<std::size_t> ids;
    for (const auto& name : classes) {
        ids.push_back(head.rows.size());
        head.rows.push_back(ClassRow{name, task, Parameter("head." + name + ".w", Tensor(ws)),
                                     Parameter("head." + name + ".b", Tensor(bs))});
    }
    return ids;
}

Tensor patchify(const std::vector<const SegSample*>& batch, const BackboneConfig& c) {
    const std::size_t p = c.patch, g = c.image / p, n = c.tokens(), f = c.patch_features();
    Tensor out({batch.size() * n, f});
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const Tensor& img = batch[s]->image;
        if (img.shape() != Shape{c.image, c.image, c.channels}) {
            throw ShapeError("image " + shape_str(img.shape()) + " does not match the backbone (" +
                             std::to_string(c.image) + "x" + std::to_string(c.image) + "x" +
                             std::to_string(c.channels) + ")");
        }
        for (std::size_t ty = 0; ty < g; ++ty)
            for (std::size_t tx = 0; tx < g; ++tx) {
                double* row = &out(s * n + ty * g + tx, 0);
                std::size_t k = 0;
                for (std::size_t py = 0; py < p; ++py)
                    for (std::size_t px = 0; px < p; ++px)
                        for (std::size_t ch = 0; ch < c.channels; ++ch)
                            row[k++] = img[((ty * p + py) * c.image + tx * p + px) * c.channels + ch];
            }
    }
    return out;
}

Tensor patch_mask(const std::vector<const SegSample*>& batch, int cls, const BackboneConfig& c) {
    const std::size_t p = c.patch, g = c.image / p, n = c.tokens();
    Tensor out({batch.size() * n, c.patch_pixels()});
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const auto& m = batch[s]->mask;
        if (m.size() != c.image * c.image) throw ShapeError("mask size does not match the image");
        for (std::size_t ty = 0; ty < g; ++ty)
            for (std::size_t tx = 0; tx < g; ++tx)
                for (std::size_t py = 0; py < p; ++py)
                    for (std::size_t px = 0; px < p; ++px)
                        out(s * n + ty * g + tx, py * p + px) =
                            m[(ty * p + py) * c.image + tx * p + px] == cls ? 1.0 : 0.0;
    }
    return out;
}

std::vector<double> unpatchify(const Tensor& rows, std::size_t sample, const BackboneConfig& c) {
    const std::size_t p = c.patch, g = c.image / p, n = c.tokens();
    if (rows.cols() != c.patch_pixels() || rows.rows() < (sample + 1) * n) throw ShapeError("unpatchify: bad layout");
    std::vector<double> out(c.image * c.image);
    for (std::size_t ty = 0; ty < g; ++ty)
        for (std::size_t tx = 0; tx < g; ++tx)
            for (std::size_t py = 0; py < p; ++py)
                for (std::size_t px = 0; px < p; ++px)
                    out[(ty * p + py) * c.image + tx * p + px] = rows(sample * n + ty * g + tx, py * p + px);
    return out;
}

namespace {

Var embed(Tape& tape, ToyBackbone& bb, const Tensor& patches) {
    Var h = ops::add_row(ops::matmul(tape.constant(patches), tape.param(bb.patch_weight)), tape.param(bb.patch_bias));
    if (bb.config.positional) h = ops::add_tiled(h, tape.param(bb.position));
    return h;
}

Var attention_sublayer(Tape& tape, Block& b, Var u, std::size_t batch, const BackboneConfig& c) {
    const Var q = ops::matmul(u, tape.param(b.wq));
    const Var k = ops::matmul(u, tape.param(b.wk));
    const Var v = ops::matmul(u, tape.param(b.wv));
    const Var a = ops::attention(q, k, v, batch, c.tokens(), c.heads);
    return ops::add_row(ops::matmul(a, tape.param(b.wo)), tape.param(b.bo));
}

Var mlp_sublayer(Tape& tape, Block& b, Var u) {
    const Var hid = ops::relu(ops::add_row(ops::matmul(u, tape.param(b.w1)), tape.param(b.b1)));
    return ops::add_row(ops::matmul(hid, tape.param(b.w2)), tape.param(b.b2));
}

}  // namespace

ForwardResult forward(Tape& tape, ToyBackbone& bb, SegmentationHead& head, const ConceptMatrix& concepts,
                      const Tensor& patches, std::size_t batch, const ForwardOptions& opts) {
    const BackboneConfig& c = bb.config;
    const std::size_t n = c.tokens();
    ForwardResult res;
    res.decisions.resize(2 * c.blocks);
    if (opts.keep_site_inputs) res.site_inputs.resize(2 * c.blocks);

    Var h;
    if (opts.start_block > 0) {
        if (!opts.cached_hidden || opts.cached_hidden->shape() != Shape{batch * n, c.width}) {
            throw ShapeError("forward: cached hidden state missing or of the wrong shape");
        }
        if (opts.start_block >= c.blocks) throw ParameterError("forward: start block out of range");
        h = tape.constant(*opts.cached_hidden);
    } else {
        if (patches.shape() != Shape{batch * n, c.patch_features()}) {
            throw ShapeError("forward: patches " + shape_str(patches.shape()) + " for batch " + std::to_string(batch));
        }
        h = embed(tape, bb, patches);
    }

    for (std::size_t bi = opts.start_block; bi < c.blocks; ++bi) {
        Block& b = bb.blocks[bi];
        const Var u1 = ops::layer_norm(h, tape.param(b.ln1_gain), tape.param(b.ln1_bias));
        const Var base1 = attention_sublayer(tape, b, u1, batch, c);
        SiteOutput s1 = site_forward(tape, b.attn, concepts, u1, base1, batch, n, opts.lambda);
        h = ops::add(h, s1.out);
        res.decisions[2 * bi] = std::move(s1.decision);

        const Var u2 = ops::layer_norm(h, tape.param(b.ln2_gain), tape.param(b.ln2_bias));
        const Var base2 = mlp_sublayer(tape, b, u2);
        SiteOutput s2 = site_forward(tape, b.ffn, concepts, u2, base2, batch, n, opts.lambda);
        h = ops::add(h, s2.out);
        res.decisions[2 * bi + 1] = std::move(s2.decision);

        if (opts.keep_site_inputs) {
            res.site_inputs[2 * bi] = u1.value();
            res.site_inputs[2 * bi + 1] = u2.value();
        }
    }
    const Var z = ops::layer_norm(h, tape.param(bb.final_gain), tape.param(bb.final_bias));
    for (auto& row : head.rows) {
        res.class_logits.push_back(ops::add_row(ops::matmul(z, tape.param(row.weight)), tape.param(row.bias)));
    }
    return res;
}

Tensor hidden_before(const ToyBackbone& bb_const, const Tensor& patches, std::size_t batch, std::size_t upto) {
    // Parameters only enter the tape by value here; nothing is trained.
    ToyBackbone& bb = const_cast<ToyBackbone&>(bb_const);
    const BackboneConfig& c = bb.config;
    if (upto > c.blocks) throw ParameterError("hidden_before: block out of range");
    for (std::size_t bi = 0; bi < upto; ++bi) {
        if (bb.blocks[bi].attn.size() > 0 || bb.blocks[bi].ffn.size() > 0) {
            throw ContractViolation("hidden_before: block " + std::to_string(bi) + " holds experts");
        }
    }
    std::vector<bool> was;
    for (Parameter* p : bb.base_parameters()) {
        was.push_back(p->active());
        p->set_active(false);
    }
    Tape tape;
    Var h = embed(tape, bb, patches);
    for (std::size_t bi = 0; bi < upto; ++bi) {
        Block& b = bb.blocks[bi];
        const Var u1 = ops::layer_norm(h, tape.param(b.ln1_gain), tape.param(b.ln1_bias));
        h = ops::add(h, attention_sublayer(tape, b, u1, batch, c));
        const Var u2 = ops::layer_norm(h, tape.param(b.ln2_gain), tape.param(b.ln2_bias));
        h = ops::add(h, mlp_sublayer(tape, b, u2));
    }
    std::size_t i = 0;
    for (Parameter* p : bb.base_parameters()) p->set_active(was[i++]);
    return h.value();
}

std::vector<int> predict_mask(const ForwardResult& out, std::size_t sample, const BackboneConfig& c) {
    const std::size_t classes = out.class_logits.size();
    std::vector<std::vector<double>> maps;
    for (std::size_t k = 0; k < classes; ++k) maps.push_back(unpatchify(out.class_logits[k].value(), sample, c));
    std::vector<int> mask(c.image * c.image, 0);
    for (std::size_t px = 0; px < mask.size(); ++px) {
        double best = 0.0;  // logit 0 <=> probability 0.5
        for (std::size_t k = 1; k < classes; ++k) {
            if (maps[k][px] > best) {
                best = maps[k][px];
                mask[px] = static_cast<int>(k);
            }
        }
    }
    return mask;
}

}  // namespace lcl
