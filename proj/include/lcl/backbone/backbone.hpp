#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lcl/concepts/concept_library.hpp"
#include "lcl/numerics/rng.hpp"
#include "lcl/numerics/tape.hpp"
#include "lcl/routing/site.hpp"

namespace lcl {

struct BackboneConfig {
    std::size_t image = 32;     // square images, image x image pixels
    std::size_t channels = 2;   // c_in
    std::size_t patch = 4;      // p
    std::size_t width = 32;     // d
    std::size_t blocks = 4;     // B
    std::size_t heads = 2;
    std::size_t mlp_ratio = 4;
    bool positional = true;
    std::size_t rank = 8;             // adapter bottleneck r
    std::size_t estimator_hidden = 8; // r_e
    std::vector<std::size_t> expandable_blocks{2, 3};

    std::size_t tokens() const { return (image / patch) * (image / patch); }
    std::size_t patch_pixels() const { return patch * patch; }
    std::size_t patch_features() const { return patch * patch * channels; }
    void validate() const;
};

/// One labelled image. `image` has shape {H, W, C}; `mask` holds one class id
/// per pixel in row-major order (0 = background).
struct SegSample {
    Tensor image;
    std::vector<int> mask;
    std::size_t task = 0;
};

struct Block {
    Parameter ln1_gain, ln1_bias;
    Parameter wq, wk, wv, wo, bo;
    Parameter ln2_gain, ln2_bias;
    Parameter w1, b1, w2, b2;
    AdapterSite attn;
    AdapterSite ffn;
};

/// Patchwise transformer encoder with an adapter site beside each attention
/// and MLP sublayer.
struct ToyBackbone {
    BackboneConfig config;
    Parameter patch_weight;  // p^2 c_in x d, rows ordered (py, px, channel)
    Parameter patch_bias;    // 1 x d
    Parameter position;      // N x d
    std::vector<Block> blocks;
    Parameter final_gain, final_bias;

    static ToyBackbone create(const BackboneConfig& config, std::size_t concept_dim, std::size_t concept_count,
                              Rng& rng);

    /// Sites in block-major order: (b0.attn, b0.ffn, b1.attn, ...).
    std::vector<AdapterSite*> sites();
    std::vector<const AdapterSite*> sites() const;
    /// Every non-site weight (embedding, blocks, final norm).
    std::vector<Parameter*> base_parameters();
    void freeze_base();

    /// Rows of the patch embedding that read channel `channel`, as a p^2 x d matrix.
    Tensor channel_embedding(std::size_t channel) const;
};

struct ClassRow {
    std::string name;
    std::size_t task = 0;
    Parameter weight;  // d x p^2
    Parameter bias;    // 1 x p^2
};

/// Per-class linear decoder from token features to per-pixel logits. Row 0 is
/// the shared background class.
struct SegmentationHead {
    std::vector<ClassRow> rows;

    static SegmentationHead create(const BackboneConfig& config);
    std::size_t size() const { return rows.size(); }
    std::size_t index_of(const std::string& name) const;
};

/// Appends zero-initialised rows for `classes` owned by `task` and freezes
/// every lesion row of earlier tasks. Returns the new class ids. Duplicate
/// names throw RegistryError.
std::vector<std::size_t> register_task_classes(SegmentationHead& head, const std::vector<std::string>& classes,
                                               std::size_t task);

/// Batch of images -> (B*N) x (p^2 c_in) patch rows.
Tensor patchify(const std::vector<const SegSample*>& batch, const BackboneConfig& config);
/// Binary target for class `cls` in patch layout: (B*N) x p^2.
Tensor patch_mask(const std::vector<const SegSample*>& batch, int cls, const BackboneConfig& config);
/// Inverse of the patch layout for one sample: N x p^2 -> H*W row-major.
std::vector<double> unpatchify(const Tensor& rows, std::size_t sample, const BackboneConfig& config);

struct ForwardOptions {
    double lambda = 0.7;
    bool keep_site_inputs = false;
    /// When set, blocks before `start_block` are skipped and `cached_hidden`
    /// is used as the residual stream entering `start_block`.
    std::size_t start_block = 0;
    const Tensor* cached_hidden = nullptr;
};

struct ForwardResult {
    std::vector<Var> class_logits;              // per head row, (B*N) x p^2
    std::vector<RoutingDecision> decisions;     // per site, rows are samples
    std::vector<Tensor> site_inputs;            // per site (only if requested)
};

ForwardResult forward(Tape& tape, ToyBackbone& bb, SegmentationHead& head, const ConceptMatrix& concepts,
                      const Tensor& patches, std::size_t batch, const ForwardOptions& opts);

/// Residual stream entering block `upto`, computed without adapters (valid
/// while all earlier blocks hold no experts).
Tensor hidden_before(const ToyBackbone& bb, const Tensor& patches, std::size_t batch, std::size_t upto);

/// Task-agnostic prediction: a lesion class wins a pixel when its probability
/// exceeds 0.5 and is the highest among lesion classes; otherwise background.
std::vector<int> predict_mask(const ForwardResult& out, std::size_t sample, const BackboneConfig& config);

}  // namespace lcl
