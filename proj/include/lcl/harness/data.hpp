#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lcl/backbone/backbone.hpp"
#include "lcl/concepts/concept_library.hpp"

namespace lcl {

/// Lesion morphology: a union of `min_blobs..max_blobs` ellipses.
struct LesionShape {
    std::size_t min_blobs = 1;
    std::size_t max_blobs = 1;
    double min_radius = 4.0;
    double max_radius = 7.0;
    double max_aspect = 1.5;  // longest / shortest ellipse axis
};

/// Lesion-free structures of either contrast, labelled background.
struct Distractors {
    std::size_t min_count = 2;
    std::size_t max_count = 4;
    double min_radius = 1.5;
    double max_radius = 4.0;
    double min_contrast = 0.25;  // absolute intensity offset from the background
    double max_contrast = 0.6;
    double concept_strength = 0.0;  // random concept pattern carried, relative to the lesion profile norm
};

/// Intensity model emulating an imaging modality.
struct Modality {
    std::string name;
    double background = 0.5;
    double lesion = 0.9;
    double texture = 0.05;  // amplitude of a smooth background field
    double noise = 0.05;    // per-pixel Gaussian noise sd
};

struct SyntheticTaskSpec {
    std::string name;
    std::string lesion_class;
    std::string profile_name;
    std::vector<std::pair<std::string, double>> profile;  // concept name -> activation
    LesionShape shape;
    Modality modality;
    std::size_t samples = 300;
    double train_fraction = 0.7;
    double val_fraction = 0.1;
    double test_fraction = 0.2;
    double concept_amplitude = 4.0;  // scale of the rendered concept channel
    double concept_jitter = 0.1;     // relative per-sample jitter of activations
    Distractors distractors;
    double concept_diffuse = 0.5;    // share of the concept rendering outside lesions
    bool normalize_intensity = true; // per-image z-scoring of the intensity channel

    void validate(std::size_t image, std::size_t patch) const;
    std::size_t train_count() const;
    std::size_t val_count() const;
    std::size_t test_count() const;
};

struct TaskData {
    SyntheticTaskSpec spec;
    Tensor concept_activation;  // 1 x M ground-truth profile
    std::vector<SegSample> train, val, test;
};

/// Ordered tasks handed out one at a time. After `release(j)` the training
/// and validation samples of task j are gone; asking for them again is a
/// contract violation. Test samples stay for evaluation.
class TaskStream {
public:
    TaskStream() = default;
    explicit TaskStream(std::vector<TaskData> tasks);

    std::size_t size() const noexcept { return tasks_.size(); }
    const SyntheticTaskSpec& spec(std::size_t j) const;
    const Tensor& concept_activation(std::size_t j) const;
    const std::vector<SegSample>& train(std::size_t j) const;
    const std::vector<SegSample>& val(std::size_t j) const;
    const std::vector<SegSample>& test(std::size_t j) const;
    void release(std::size_t j);
    bool released(std::size_t j) const;

private:
    const TaskData& at(std::size_t j) const;
    std::vector<TaskData> tasks_;
    std::vector<bool> released_;
};

/// Renders a concept vector of length p^2 onto one p x p patch (identity
/// layout: entry py * p + px goes to pixel (py, px)). Returns the p^2 x p^2
/// rendering matrix G so that a pixel block equals v * G.
Tensor concept_render_matrix(std::size_t patch);

/// One sample of `spec`. The image has channel 0 = intensity and channel 1 =
/// the concept channel: every patch carries amplitude * (a C^) with per-sample
/// jittered activations a.
SegSample generate_sample(const SyntheticTaskSpec& spec, const ConceptMatrix& concepts, int lesion_label,
                          std::size_t task, const BackboneConfig& config, Rng& rng);

/// Deterministic datasets for all specs. Lesion labels are 1 + task index.
TaskStream generate_stream(const std::vector<SyntheticTaskSpec>& specs, const ConceptMatrix& concepts,
                           std::uint64_t seed, const BackboneConfig& config);

/// Named stream recipes.
struct StreamRecipe {
    std::vector<SyntheticTaskSpec> specs;
    std::vector<ConceptProfile> profiles;  // distinct profiles, in order of first use
};

/// 12 tasks over three lesion families and five modalities; 7 distinct
/// concept profiles, 5 tasks repeat an earlier profile under a new modality.
StreamRecipe default_stream(std::size_t samples_per_task = 300);
/// 4 tasks, each with its own profile and modality.
StreamRecipe standard_stream(std::size_t samples_per_task = 300);
/// Two-task streams: "repeat" (same profile and modality), "image_shift"
/// (same profile, new modality), "full_shift" (new profile and modality).
StreamRecipe dual_signal_stream(const std::string& kind, std::size_t samples_per_task = 300);
StreamRecipe stream_by_name(const std::string& name, std::size_t samples_per_task = 300);

/// Concept matrix with one row per concept used by the recipe's profiles.
ConceptMatrix recipe_concepts(const StreamRecipe& recipe, std::size_t dim, std::uint64_t seed);

}  // namespace lcl
