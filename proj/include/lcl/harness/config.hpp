#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lcl/backbone/backbone.hpp"
#include "lcl/metrics/metrics.hpp"

namespace lcl {

enum class Mode { Core, Finetune, Individual, Joint, ImageOnlyExpansion, NoCgc, NoCde, RandConcepts };

std::string mode_name(Mode m);
Mode parse_mode(const std::string& s);
const std::vector<std::string>& mode_names();

struct RunConfig {
    std::uint64_t seed = 1;
    Mode mode = Mode::Core;
    double lambda = 0.7;
    double tau_c = 0.7;
    double tau_i = 1.3;
    BackboneConfig backbone;

    std::size_t epochs = 40;
    double warmup_fraction = 20.0 / 300.0;
    std::size_t batch_size = 8;
    double lr = 3e-3;
    double weight_decay = 1e-4;

    std::string stream = "default";
    std::size_t samples_per_task = 300;
    std::size_t max_tasks = 0;  // 0 = every task of the stream
    std::string concepts_path;  // empty = synthesize from the stream's profiles
    std::size_t concept_dim = 16;
    double concept_anchor_gain = 6.0;
    bool phi_warm_start = true;
    bool tune_backbone = false;  // train the base network on task 1 (finetune always trains it)

    BwtForm bwt_form = BwtForm::Additive;
    bool release_data = true;
    bool log_steps = true;
    bool log_routing = true;
    std::string output_dir;  // empty = keep results in memory only

    /// lambda actually used for routing (no_cgc forces 0).
    double effective_lambda() const;
    void validate() const;
};

/// Sets one `key = value` entry. Unknown keys and malformed values throw
/// ValidationError naming the key.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Applies a config text: one `key = value` per line, `#` starts a comment,
/// blank lines are ignored.
void apply_config_text(RunConfig& cfg, const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Every key with its current value, in the file grammar; parsing the result
/// reproduces the config.
std::string config_to_text(const RunConfig& cfg);
const std::vector<std::string>& config_keys();

}  // namespace lcl
