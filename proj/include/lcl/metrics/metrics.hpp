#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lcl {

/// Dice similarity in percent between two binary masks (nonzero = inside).
/// Two empty masks agree perfectly (100).
double dsc(std::span<const int> pred, std::span<const int> target);

enum class BwtForm {
    Additive,  // 100 + mean(R[T][j] - R[j][j])
    Ratio,     // 100 * mean(R[T][j] / R[j][j])
};

/// T x T lower-triangular accuracy matrix: R[t][j] is the DSC on task j after
/// training task t (zero-based indices, j <= t).
class MetricsLedger {
public:
    MetricsLedger() = default;
    explicit MetricsLedger(std::vector<std::string> task_names);

    std::size_t size() const noexcept { return names_.size(); }
    const std::vector<std::string>& task_names() const noexcept { return names_; }

    void set(std::size_t t, std::size_t j, double value);
    double at(std::size_t t, std::size_t j) const;
    bool has(std::size_t t, std::size_t j) const;

    /// Final-row entries (after the last task).
    std::vector<double> final_row() const;
    double average_final() const;

    bool operator==(const MetricsLedger& o) const;

private:
    std::vector<std::string> names_;
    std::vector<std::vector<std::optional<double>>> r_;
};

/// Backward transfer in percent; UndefinedMetric for fewer than two tasks.
double bwt(const MetricsLedger& ledger, BwtForm form = BwtForm::Additive);

/// One header line (task names, Average, BWT) and one line of final values.
std::string report_csv(const MetricsLedger& ledger, BwtForm form = BwtForm::Additive);
std::string ledger_json(const MetricsLedger& ledger);
MetricsLedger parse_ledger_json(const std::string& text);

std::string bwt_form_name(BwtForm f);
BwtForm parse_bwt_form(const std::string& s);

}  // namespace lcl
