#include "lcl/expansion/expansion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "lcl/errors.hpp"
#include "lcl/numerics/ops.hpp"

namespace lcl {

Tensor concept_familiarity(const AdapterSite& site, const Tensor& s_bar) {
    const std::size_t k = site.size();
    const std::size_t b = s_bar.rows();
    if (k == 0) return Tensor({b, 0});
    const Tensor logits = matmul(s_bar, site.concept_matrix());
    Tensor out({b, k});
    for (std::size_t i = 0; i < b; ++i) {
        double mx = 0.0;
        for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, logits(i, j));
        double z = std::exp(-mx);
        for (std::size_t j = 0; j < k; ++j) z += std::exp(logits(i, j) - mx);
        for (std::size_t j = 0; j < k; ++j) out(i, j) = std::exp(logits(i, j) - mx) / z;
    }
    return out;
}

ExpansionScan ExpansionScan::begin(const AdapterSite& site) {
    ExpansionScan s;
    s.site = site.id;
    s.familiarity_sum = Tensor({1, site.size()});
    s.s_bar_sum = Tensor({1, site.concept_count});
    s.errors.assign(site.size(), {});
    return s;
}

void ExpansionScan::add(const Tensor& familiarity, const Tensor& s_bar,
                        const std::vector<std::vector<double>>& batch_errors) {
    const std::size_t b = s_bar.rows();
    if (familiarity.cols() != familiarity_sum.cols() || (familiarity_sum.cols() > 0 && familiarity.rows() != b) ||
        s_bar.cols() != s_bar_sum.cols() || batch_errors.size() != errors.size()) {
        throw ShapeError("expansion scan for " + site.str() + ": batch does not match the site");
    }
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t k = 0; k < familiarity.cols(); ++k) familiarity_sum[k] += familiarity(i, k);
        for (std::size_t m = 0; m < s_bar.cols(); ++m) s_bar_sum[m] += s_bar(i, m);
    }
    for (std::size_t k = 0; k < errors.size(); ++k) {
        if (batch_errors[k].size() != b) throw ShapeError("expansion scan: error count does not match batch");
        errors[k].insert(errors[k].end(), batch_errors[k].begin(), batch_errors[k].end());
    }
    samples += b;
}

namespace {

void require_samples(const ExpansionScan& s) {
    if (s.samples == 0) throw EmptyInputError("expansion scan for " + s.site.str() + " saw no samples");
}

Tensor divided(const Tensor& t, std::size_t n) {
    Tensor out = t;
    for (double& x : out.data()) x /= static_cast<double>(n);
    return out;
}

}  // namespace

Tensor ExpansionScan::mean_familiarity() const {
    require_samples(*this);
    return divided(familiarity_sum, samples);
}

Tensor ExpansionScan::mean_s_bar() const {
    require_samples(*this);
    return divided(s_bar_sum, samples);
}

bool concept_signal(const ExpansionScan& scan, double tau_c, double* max_familiarity) {
    const Tensor mean = scan.mean_familiarity();
    double mx = 0.0;
    for (double x : mean.values()) mx = std::max(mx, x);
    if (max_familiarity) *max_familiarity = mx;
    return mean.size() == 0 || mx < tau_c;
}

std::vector<double> mean_zscores(const AdapterSite& site, const ExpansionScan& scan) {
    require_samples(scan);
    if (scan.errors.size() != site.size()) throw ShapeError("expansion scan does not match site " + site.id.str());
    std::vector<double> z(site.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t k = 0; k < site.size(); ++k) {
        const EstimatorState& e = site.experts[k].estimator;
        if (e.stats.n >= 2) z[k] = reconstruction_zscore(e, scan.errors[k]);
    }
    return z;
}

bool image_signal(const AdapterSite& site, const ExpansionScan& scan, double tau_i, double* min_z) {
    const std::vector<double> z = mean_zscores(site, scan);
    bool any = false, all_above = true;
    double mn = std::numeric_limits<double>::infinity();
    for (double v : z) {
        if (std::isnan(v)) continue;
        any = true;
        mn = std::min(mn, v);
        all_above = all_above && v > tau_i;
    }
    if (min_z) *min_z = any ? mn : std::numeric_limits<double>::quiet_NaN();
    return !any || all_above;
}

std::optional<Tensor> concept_anchor(const ExpansionScan& scan, double gain) {
    if (gain == 0.0) return std::nullopt;
    return anchor_column(scan.mean_s_bar(), scan.reference, gain);
}

std::optional<Tensor> anchor_column(const Tensor& mean_s_bar, const Tensor& reference, double gain) {
    if (gain == 0.0) return std::nullopt;
    Tensor s = mean_s_bar;
    if (!reference.empty()) {
        if (reference.size() != s.size()) throw ShapeError("anchor reference " + shape_str(reference.shape()) + " vs " + shape_str(s.shape()));
        double rr = 0.0, sr = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            rr += reference[i] * reference[i];
            sr += s[i] * reference[i];
        }
        if (rr > 0.0)
            for (std::size_t i = 0; i < s.size(); ++i) s[i] -= sr / rr * reference[i];
    }
    double n2 = 0.0;
    for (double x : s.values()) n2 += x * x;
    if (n2 <= 0.0) return std::nullopt;
    for (double& x : s.data()) x *= gain / n2;
    return s;
}

ExpansionDecision decide_and_grow(AdapterSite& site, const ExpansionScan& scan, const GrowthOptions& opts,
                                  std::size_t task, Rng& rng) {
    if (!(opts.tau_c > 0.0 && opts.tau_c < 1.0)) throw ParameterError("tau_c must lie in (0, 1)");
    if (!(opts.tau_i > 0.0)) throw ParameterError("tau_i must be positive");
    ExpansionDecision d;
    d.site = site.id;
    d.task = task;
    d.rule = opts.rule;
    d.experts_before = site.size();
    d.cold_start = true;
    for (const auto& e : site.experts) d.cold_start = d.cold_start && e.estimator.stats.n < 2;
    d.mean_z = mean_zscores(site, scan);

    const bool by_concept = concept_signal(scan, opts.tau_c, &d.max_familiarity);
    const bool image = image_signal(site, scan, opts.tau_i, &d.min_z);
    switch (opts.rule) {
        case GrowthRule::DualSignal:
            d.concept_triggered = by_concept;
            d.image_triggered = image;
            break;
        case GrowthRule::ImageOnly:
            d.concept_triggered = true;
            d.image_triggered = image;
            break;
        case GrowthRule::Always:
            d.concept_triggered = true;
            d.image_triggered = true;
            break;
        case GrowthRule::FirstOnly:
            d.concept_triggered = site.size() == 0;
            d.image_triggered = site.size() == 0;
            break;
    }
    d.expanded = d.concept_triggered && d.image_triggered && site.expandable;
    if (d.expanded) {
        site.grow(task, opts.rank, opts.estimator_hidden, rng, concept_anchor(scan, opts.concept_anchor_gain));
    }
    d.experts_after = site.size();
    return d;
}

std::string growth_rule_name(GrowthRule r) {
    switch (r) {
        case GrowthRule::DualSignal: return "dual";
        case GrowthRule::ImageOnly: return "image_only";
        case GrowthRule::Always: return "always";
        case GrowthRule::FirstOnly: return "first_only";
    }
    return "?";
}

GrowthCurve growth_curve(const std::vector<ExpansionDecision>& log) {
    GrowthCurve c;
    std::map<std::size_t, std::map<std::string, std::size_t>> by_task;
    for (const auto& d : log) {
        const std::string s = d.site.str();
        if (std::find(c.sites.begin(), c.sites.end(), s) == c.sites.end()) c.sites.push_back(s);
        by_task[d.task][s] = d.experts_after;
    }
    std::vector<std::size_t> last(c.sites.size(), 0);
    for (const auto& [task, counts] : by_task) {
        for (std::size_t i = 0; i < c.sites.size(); ++i) {
            const auto it = counts.find(c.sites[i]);
            if (it != counts.end()) last[i] = it->second;
        }
        c.tasks.push_back(task);
        c.counts.push_back(last);
    }
    return c;
}

std::string growth_curve_csv(const GrowthCurve& curve) {
    std::ostringstream out;
    out << "task";
    for (const auto& s : curve.sites) out << ',' << s;
    out << '\n';
    for (std::size_t r = 0; r < curve.tasks.size(); ++r) {
        out << curve.tasks[r] + 1;  // 1-based, as in the run log
        for (std::size_t v : curve.counts[r]) out << ',' << v;
        out << '\n';
    }
    return out.str();
}

}  // namespace lcl
