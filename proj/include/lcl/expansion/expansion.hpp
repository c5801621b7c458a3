#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "lcl/numerics/rng.hpp"
#include "lcl/routing/site.hpp"

namespace lcl {

/// Concept-side familiarity of each sample with each expert:
/// softmax over [s_bar W_AC, 0] restricted to the K expert entries. The extra
/// zero logit is a fixed "no expert" option; without it a single-expert site
/// would always report full familiarity. Rows of s_bar are samples (B x M).
Tensor concept_familiarity(const AdapterSite& site, const Tensor& s_bar);

/// Accumulators for one site over the evaluation-only pass at the start of a task.
struct ExpansionScan {
    SiteId site;
    std::size_t samples = 0;
    Tensor familiarity_sum;                   // 1 x K
    Tensor s_bar_sum;                         // 1 x M
    std::vector<std::vector<double>> errors;  // [expert][sample] reconstruction errors
    Tensor reference;                         // 1 x M activation of a blank input; empty if unknown

    static ExpansionScan begin(const AdapterSite& site);

    /// Adds a batch: familiarity rows (B x K), pooled activations (B x M) and,
    /// per expert, one reconstruction error per sample.
    void add(const Tensor& familiarity, const Tensor& s_bar, const std::vector<std::vector<double>>& batch_errors);

    Tensor mean_familiarity() const;
    Tensor mean_s_bar() const;
};

/// max(mean familiarity) < tau_c. An empty site counts as triggered.
/// Throws EmptyInputError when nothing was scanned.
bool concept_signal(const ExpansionScan& scan, double tau_c, double* max_familiarity = nullptr);

/// Mean z-score of the scanned samples under each estimator with statistics;
/// NaN for estimators without (fewer than two recorded errors).
std::vector<double> mean_zscores(const AdapterSite& site, const ExpansionScan& scan);

/// True iff every estimator with statistics has mean z > tau_i. With no such
/// estimator (cold start) the signal is triggered.
bool image_signal(const AdapterSite& site, const ExpansionScan& scan, double tau_i, double* min_z = nullptr);

enum class GrowthRule {
    DualSignal,   // concept AND image
    ImageOnly,    // concept signal bypassed
    Always,       // expand on every task
    FirstOnly,    // only an empty site grows (single shared expert)
};

struct GrowthOptions {
    double tau_c = 0.7;
    double tau_i = 1.3;
    GrowthRule rule = GrowthRule::DualSignal;
    std::size_t rank = 8;
    std::size_t estimator_hidden = 8;
    /// Newborn W_AC column = gain * s / |s|^2 with s the scanned mean s_bar
    /// after removing its component along the scan's blank-input reference,
    /// so the new expert's concept logit is `gain` on its own task mean and 0
    /// on a blank input. Zero gives the all-zero column.
    double concept_anchor_gain = 0.0;
};

struct ExpansionDecision {
    SiteId site;
    std::size_t task = 0;
    bool concept_triggered = false;
    bool image_triggered = false;
    bool expanded = false;
    bool cold_start = false;
    GrowthRule rule = GrowthRule::DualSignal;
    double max_familiarity = 0.0;
    double min_z = 0.0;
    std::vector<double> mean_z;
    std::size_t experts_before = 0;
    std::size_t experts_after = 0;
};

/// Anchor column for a newborn expert from the scan (see GrowthOptions).
std::optional<Tensor> concept_anchor(const ExpansionScan& scan, double gain);
/// The same anchor for an explicit mean activation and reference (1 x M each;
/// an empty reference is ignored).
std::optional<Tensor> anchor_column(const Tensor& mean_s_bar, const Tensor& reference, double gain);

/// Evaluates both signals, applies the growth rule and, on expansion, grows
/// the site by one expert. Only expandable sites ever grow.
ExpansionDecision decide_and_grow(AdapterSite& site, const ExpansionScan& scan, const GrowthOptions& opts,
                                  std::size_t task, Rng& rng);

std::string growth_rule_name(GrowthRule r);

struct GrowthCurve {
    std::vector<std::string> sites;
    std::vector<std::size_t> tasks;
    std::vector<std::vector<std::size_t>> counts;  // [task row][site]
};

/// Cumulative expert counts per site after each task, from a task-ordered log.
/// The CSV numbers tasks from 1.
GrowthCurve growth_curve(const std::vector<ExpansionDecision>& log);
std::string growth_curve_csv(const GrowthCurve& curve);

}  // namespace lcl
