#include "lcl/harness/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "lcl/errors.hpp"
#include "lcl/numerics/ops.hpp"

namespace lcl {

using VKind = ValidationError::Kind;

void SyntheticTaskSpec::validate(std::size_t image, std::size_t patch) const {
    const std::string who = "task '" + name + "'";
    if (name.empty()) throw ValidationError(VKind::MissingField, "task without a name");
    if (lesion_class.empty()) throw ValidationError(VKind::MissingField, who + ": no lesion class");
    if (profile.empty()) throw ValidationError(VKind::Empty, who + ": empty concept profile");
    const double split = train_fraction + val_fraction + test_fraction;
    if (std::abs(split - 1.0) > 1e-9 || train_fraction <= 0 || val_fraction < 0 || test_fraction <= 0) {
        throw ValidationError(VKind::InvalidValue, who + ": split fractions must be positive and sum to 1");
    }
    if (samples < 3) throw ValidationError(VKind::InvalidValue, who + ": needs at least 3 samples");
    if (shape.min_blobs < 1 || shape.max_blobs < shape.min_blobs) {
        throw ValidationError(VKind::InvalidValue, who + ": blob count range must satisfy 1 <= min <= max");
    }
    if (!(shape.min_radius >= 1.0) || shape.max_radius < shape.min_radius || shape.max_aspect < 1.0) {
        throw ValidationError(VKind::InvalidValue, who + ": radius range must satisfy 1 <= min <= max, aspect >= 1");
    }
    if (2.0 * shape.max_radius >= static_cast<double>(image)) {
        throw ValidationError(VKind::InvalidValue, who + ": lesions do not fit the image");
    }
    for (double v : {modality.background, modality.lesion, modality.texture, modality.noise, concept_amplitude,
                     concept_jitter}) {
        if (!std::isfinite(v)) throw ValidationError(VKind::NonFinite, who + ": non-finite generator parameter");
    }
    if (distractors.max_count < distractors.min_count || !(distractors.min_radius >= 1.0) ||
        distractors.max_radius < distractors.min_radius || 2.0 * distractors.max_radius * std::sqrt(2.0) >= static_cast<double>(image) ||
        !(distractors.min_contrast >= 0.0) || distractors.max_contrast < distractors.min_contrast ||
        !(distractors.concept_strength >= 0.0)) {
        throw ValidationError(VKind::InvalidValue, who + ": invalid distractor ranges");
    }
    if (!(concept_diffuse >= 0.0 && concept_diffuse <= 1.0)) {
        throw ValidationError(VKind::InvalidValue, who + ": concept_diffuse must lie in [0, 1]");
    }
    if (modality.noise < 0 || modality.texture < 0 || concept_jitter < 0) {
        throw ValidationError(VKind::InvalidValue, who + ": noise, texture and jitter must be nonnegative");
    }
    if (patch == 0 || image % patch != 0) throw ValidationError(VKind::InvalidValue, who + ": bad image/patch size");
}

std::size_t SyntheticTaskSpec::train_count() const {
    return static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(samples)));
}
std::size_t SyntheticTaskSpec::val_count() const {
    return static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(samples)));
}
std::size_t SyntheticTaskSpec::test_count() const { return samples - train_count() - val_count(); }

TaskStream::TaskStream(std::vector<TaskData> tasks) : tasks_(std::move(tasks)), released_(tasks_.size(), false) {}

const TaskData& TaskStream::at(std::size_t j) const {
    if (j >= tasks_.size()) throw ParameterError("task " + std::to_string(j) + " is not in the stream");
    return tasks_[j];
}

const SyntheticTaskSpec& TaskStream::spec(std::size_t j) const { return at(j).spec; }
const Tensor& TaskStream::concept_activation(std::size_t j) const { return at(j).concept_activation; }

const std::vector<SegSample>& TaskStream::train(std::size_t j) const {
    const TaskData& t = at(j);
    if (released_[j]) throw ContractViolation("training data of task " + std::to_string(j + 1) + " was released");
    return t.train;
}

const std::vector<SegSample>& TaskStream::val(std::size_t j) const {
    const TaskData& t = at(j);
    if (released_[j]) throw ContractViolation("validation data of task " + std::to_string(j + 1) + " was released");
    return t.val;
}

const std::vector<SegSample>& TaskStream::test(std::size_t j) const { return at(j).test; }

void TaskStream::release(std::size_t j) {
    at(j);
    std::vector<SegSample>().swap(tasks_[j].train);
    std::vector<SegSample>().swap(tasks_[j].val);
    released_[j] = true;
}

bool TaskStream::released(std::size_t j) const {
    at(j);
    return released_[j];
}

Tensor concept_render_matrix(std::size_t patch) {
    const std::size_t n = patch * patch;
    Tensor g({n, n});
    for (std::size_t i = 0; i < n; ++i) g(i, i) = 1.0;
    return g;
}

SegSample generate_sample(const SyntheticTaskSpec& spec, const ConceptMatrix& concepts, int lesion_label,
                          std::size_t task, const BackboneConfig& config, Rng& rng) {
    const std::size_t n = config.image, p = config.patch, pp = p * p;
    if (config.channels != 2) throw ParameterError("the generator produces two-channel images");
    if (concepts.dim() != pp) {
        throw ParameterError("concept width " + std::to_string(concepts.dim()) + " must equal patch pixels " +
                             std::to_string(pp));
    }
    SegSample s;
    s.task = task;
    s.image = Tensor({n, n, 2});
    s.mask.assign(n * n, 0);

    // Random ellipse; calls `mark` on every covered pixel and always on the centre.
    auto ellipse = [&](double rmin, double rmax, double max_aspect, auto&& mark) {
        const double r = rng.uniform(rmin, rmax);
        const double aspect = rng.uniform(1.0, max_aspect);
        const double ra = r * std::sqrt(aspect), rb = r / std::sqrt(aspect);
        const double angle = rng.uniform(0.0, std::numbers::pi);
        const double margin = ra + 1.0;
        const double cy = rng.uniform(margin, static_cast<double>(n) - margin);
        const double cx = rng.uniform(margin, static_cast<double>(n) - margin);
        const double ca = std::cos(angle), sa = std::sin(angle);
        mark(static_cast<std::size_t>(cy) * n + static_cast<std::size_t>(cx));
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
                const double u = (dx * ca + dy * sa) / ra, v = (-dx * sa + dy * ca) / rb;
                if (u * u + v * v <= 1.0) mark(y * n + x);
            }
    };
    const std::size_t blobs = spec.shape.min_blobs + rng.below(spec.shape.max_blobs - spec.shape.min_blobs + 1);
    for (std::size_t b = 0; b < blobs; ++b) {
        ellipse(spec.shape.min_radius, spec.shape.max_radius, spec.shape.max_aspect,
                [&](std::size_t i) { s.mask[i] = lesion_label; });
    }
    const Distractors& dz = spec.distractors;
    std::vector<double> offset(n * n, 0.0);
    std::vector<std::size_t> owner(n * n, 0);  // 1-based distractor index per pixel
    std::vector<std::vector<double>> patterns;  // random unit concept pattern per distractor
    const std::size_t extra = dz.max_count == 0 ? 0 : dz.min_count + rng.below(dz.max_count - dz.min_count + 1);
    for (std::size_t b = 0; b < extra; ++b) {
        const double c = rng.uniform(dz.min_contrast, dz.max_contrast) * (rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0);
        ellipse(dz.min_radius, dz.max_radius, 2.0, [&](std::size_t i) {
            offset[i] = c;
            owner[i] = b + 1;
        });
        std::vector<double> u(pp);
        double norm = 0.0;
        for (double& x : u) {
            x = rng.normal();
            norm += x * x;
        }
        for (double& x : u) x /= std::sqrt(norm);
        patterns.push_back(std::move(u));
    }

    // Smooth background field: three random low-frequency waves.
    double fy[3], fx[3], ph[3];
    for (int k = 0; k < 3; ++k) {
        fy[k] = rng.uniform(-3.0, 3.0) * 2.0 * std::numbers::pi / static_cast<double>(n);
        fx[k] = rng.uniform(-3.0, 3.0) * 2.0 * std::numbers::pi / static_cast<double>(n);
        ph[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    const Modality& m = spec.modality;
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            double field = 0.0;
            for (int k = 0; k < 3; ++k) field += std::sin(fy[k] * static_cast<double>(y) + fx[k] * static_cast<double>(x) + ph[k]);
            const double base = s.mask[y * n + x] ? m.lesion : m.background + offset[y * n + x];
            s.image[(y * n + x) * 2] = base + m.texture * field / 3.0 + m.noise * rng.normal();
        }
    if (spec.normalize_intensity) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < n * n; ++i) mean += s.image[i * 2];
        mean /= static_cast<double>(n * n);
        for (std::size_t i = 0; i < n * n; ++i) sq += (s.image[i * 2] - mean) * (s.image[i * 2] - mean);
        const double sd = std::sqrt(sq / static_cast<double>(n * n) + 1e-12);
        for (std::size_t i = 0; i < n * n; ++i) s.image[i * 2] = (s.image[i * 2] - mean) / sd;
    }

    // Concept channel: jittered profile rendered on every patch, full strength
    // on lesion pixels and `concept_diffuse` of it elsewhere; distractors add
    // their own random pattern.
    Tensor a({1, concepts.size()});
    for (const auto& [name, w] : spec.profile) a[concepts.index_of(name)] += w * (1.0 + spec.concept_jitter * rng.normal());
    const Tensor v = matmul(matmul(a, concepts.embeddings()), concept_render_matrix(p));
    double v_norm = 0.0;
    for (double x : v.values()) v_norm += x * x;
    v_norm = std::sqrt(v_norm);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const std::size_t i = y * n + x, q = (y % p) * p + (x % p);
            double c = v[q] * (s.mask[i] ? 1.0 : spec.concept_diffuse);
            if (!s.mask[i] && owner[i]) c += dz.concept_strength * v_norm * patterns[owner[i] - 1][q];
            s.image[i * 2 + 1] = spec.concept_amplitude * c;
        }
    return s;
}

TaskStream generate_stream(const std::vector<SyntheticTaskSpec>& specs, const ConceptMatrix& concepts,
                           std::uint64_t seed, const BackboneConfig& config) {
    if (specs.empty()) throw ValidationError(VKind::Empty, "stream without tasks");
    std::set<std::string> names, classes;
    for (const auto& s : specs) {
        s.validate(config.image, config.patch);
        if (!names.insert(s.name).second) throw ValidationError(VKind::DuplicateName, "duplicate task name '" + s.name + "'");
        if (!classes.insert(s.lesion_class).second) {
            throw ValidationError(VKind::DuplicateName, "duplicate lesion class '" + s.lesion_class + "'");
        }
        for (const auto& [c, w] : s.profile) concepts.index_of(c);
    }
    std::vector<TaskData> tasks;
    for (std::size_t t = 0; t < specs.size(); ++t) {
        const SyntheticTaskSpec& s = specs[t];
        Rng rng = Rng::derive(seed, 1000 + t);
        TaskData d;
        d.spec = s;
        d.concept_activation = Tensor({1, concepts.size()});
        for (const auto& [c, w] : s.profile) d.concept_activation[concepts.index_of(c)] += w;
        const int label = static_cast<int>(t + 1);
        for (std::size_t i = 0; i < s.train_count(); ++i) d.train.push_back(generate_sample(s, concepts, label, t, config, rng));
        for (std::size_t i = 0; i < s.val_count(); ++i) d.val.push_back(generate_sample(s, concepts, label, t, config, rng));
        for (std::size_t i = 0; i < s.test_count(); ++i) d.test.push_back(generate_sample(s, concepts, label, t, config, rng));
        tasks.push_back(std::move(d));
    }
    return TaskStream(std::move(tasks));
}

namespace {

struct Family {
    std::string disease_concept;
    LesionShape shape;
};

const std::map<std::string, Family>& families() {
    static const std::map<std::string, Family> f{
        {"tumor", {"mass_lesion", {1, 1, 4.5, 7.0, 1.4}}},
        {"ms", {"periventricular_plaque", {3, 5, 1.5, 2.8, 1.8}}},
        {"stroke", {"vascular_infarct", {1, 2, 3.0, 5.5, 2.2}}},
    };
    return f;
}

const std::map<std::string, Modality>& modalities() {
    static const std::map<std::string, Modality> m{
        {"t1w", {"t1w", 0.55, 0.15, 0.05, 0.03}},
        {"t2w", {"t2w", 0.35, 0.85, 0.10, 0.04}},
        {"t1ce", {"t1ce", 0.45, 0.95, 0.03, 0.08}},
        {"flair", {"flair", 0.20, 0.90, 0.15, 0.03}},
        {"dwi", {"dwi", 0.10, 0.60, 0.02, 0.10}},
    };
    return m;
}

// Distinct concept profiles: the family's disease concept plus one specific finding.
const std::map<std::string, std::pair<std::string, std::string>>& profile_table() {
    static const std::map<std::string, std::pair<std::string, std::string>> p{
        {"tumor_t1", {"tumor", "hypointense_necrotic_core"}},
        {"tumor_t2", {"tumor", "peritumoral_edema"}},
        {"ms_t1", {"ms", "black_hole_lesion"}},
        {"ms_t2", {"ms", "ovoid_white_matter_hyperintensity"}},
        {"stroke_t1", {"stroke", "cortical_hypointensity"}},
        {"stroke_dwi", {"stroke", "restricted_diffusion"}},
        {"stroke_t2", {"stroke", "gyral_swelling"}},
    };
    return p;
}

ConceptProfile profile_of(const std::string& name) {
    const auto& [fam, specific] = profile_table().at(name);
    return ConceptProfile{name, {{families().at(fam).disease_concept, 0.5}, {specific, 1.0}}};
}

SyntheticTaskSpec make_task(const std::string& name, const std::string& family, const std::string& modality,
                            const std::string& profile, std::size_t samples) {
    SyntheticTaskSpec s;
    s.name = name;
    s.lesion_class = name;
    s.profile_name = profile;
    s.profile = profile_of(profile).activations;
    s.shape = families().at(family).shape;
    s.modality = modalities().at(modality);
    s.samples = samples;
    return s;
}

StreamRecipe recipe(const std::vector<SyntheticTaskSpec>& specs) {
    StreamRecipe r;
    r.specs = specs;
    std::set<std::string> seen;
    for (const auto& s : specs)
        if (seen.insert(s.profile_name).second) r.profiles.push_back(profile_of(s.profile_name));
    return r;
}

}  // namespace

StreamRecipe default_stream(std::size_t n) {
    return recipe({
        make_task("tumor_t1w", "tumor", "t1w", "tumor_t1", n),
        make_task("tumor_t2w", "tumor", "t2w", "tumor_t2", n),
        make_task("tumor_t1ce", "tumor", "t1ce", "tumor_t1", n),
        make_task("tumor_flair", "tumor", "flair", "tumor_t2", n),
        make_task("stroke_t1w", "stroke", "t1w", "stroke_t1", n),
        make_task("ms_t1w", "ms", "t1w", "ms_t1", n),
        make_task("ms_t2w", "ms", "t2w", "ms_t2", n),
        make_task("ms_t1ce", "ms", "t1ce", "ms_t1", n),
        make_task("ms_flair", "ms", "flair", "ms_t2", n),
        make_task("stroke_dwi", "stroke", "dwi", "stroke_dwi", n),
        make_task("stroke_flair", "stroke", "flair", "stroke_t1", n),
        make_task("stroke_t2w", "stroke", "t2w", "stroke_t2", n),
    });
}

StreamRecipe standard_stream(std::size_t n) {
    return recipe({
        make_task("tumor_t1w", "tumor", "t1w", "tumor_t1", n),
        make_task("ms_t2w", "ms", "t2w", "ms_t2", n),
        make_task("stroke_dwi", "stroke", "dwi", "stroke_dwi", n),
        make_task("tumor_flair", "tumor", "flair", "tumor_t2", n),
    });
}

StreamRecipe dual_signal_stream(const std::string& kind, std::size_t n) {
    const SyntheticTaskSpec first = make_task("tumor_t1w", "tumor", "t1w", "tumor_t1", n);
    if (kind == "repeat") return recipe({first, make_task("tumor_t1w_again", "tumor", "t1w", "tumor_t1", n)});
    if (kind == "image_shift") return recipe({first, make_task("tumor_t2w_same_concepts", "tumor", "t2w", "tumor_t1", n)});
    if (kind == "full_shift") return recipe({first, make_task("ms_t2w", "ms", "t2w", "ms_t2", n)});
    throw ValidationError(VKind::InvalidValue, "unknown dual-signal stream '" + kind + "'");
}

StreamRecipe stream_by_name(const std::string& name, std::size_t n) {
    if (name == "default") return default_stream(n);
    if (name == "standard") return standard_stream(n);
    if (name == "repeat" || name == "image_shift" || name == "full_shift") return dual_signal_stream(name, n);
    throw ValidationError(VKind::InvalidValue, "unknown stream '" + name + "'");
}

ConceptMatrix recipe_concepts(const StreamRecipe& recipe, std::size_t dim, std::uint64_t seed) {
    return synth_concepts(recipe.profiles, dim, seed).matrix;
}

}  // namespace lcl
