#include "lcl/metrics/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "lcl/errors.hpp"

namespace lcl {

double dsc(std::span<const int> pred, std::span<const int> target) {
    if (pred.size() != target.size()) {
        throw ShapeError("dsc: prediction has " + std::to_string(pred.size()) + " pixels, target " +
                         std::to_string(target.size()));
    }
    std::size_t inter = 0, p = 0, t = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = pred[i] != 0, b = target[i] != 0;
        p += a;
        t += b;
        inter += a && b;
    }
    if (p + t == 0) return 100.0;
    return 100.0 * 2.0 * static_cast<double>(inter) / static_cast<double>(p + t);
}

MetricsLedger::MetricsLedger(std::vector<std::string> task_names) : names_(std::move(task_names)) {
    r_.assign(names_.size(), std::vector<std::optional<double>>(names_.size()));
}

void MetricsLedger::set(std::size_t t, std::size_t j, double value) {
    if (t >= size() || j > t) {
        throw ParameterError("ledger entry (" + std::to_string(t) + ", " + std::to_string(j) + ") is outside the lower triangle");
    }
    if (!(value >= 0.0 && value <= 100.0)) throw ParameterError("ledger entries must lie in [0, 100]");
    r_[t][j] = value;
}

bool MetricsLedger::has(std::size_t t, std::size_t j) const { return t < size() && j < size() && r_[t][j].has_value(); }

double MetricsLedger::at(std::size_t t, std::size_t j) const {
    if (!has(t, j)) throw UndefinedMetric("ledger entry (" + std::to_string(t) + ", " + std::to_string(j) + ") is empty");
    return *r_[t][j];
}

std::vector<double> MetricsLedger::final_row() const {
    if (size() == 0) throw UndefinedMetric("empty ledger");
    std::vector<double> out;
    for (std::size_t j = 0; j < size(); ++j) out.push_back(at(size() - 1, j));
    return out;
}

double MetricsLedger::average_final() const {
    const auto row = final_row();
    double s = 0.0;
    for (double v : row) s += v;
    return s / static_cast<double>(row.size());
}

bool MetricsLedger::operator==(const MetricsLedger& o) const { return names_ == o.names_ && r_ == o.r_; }

double bwt(const MetricsLedger& ledger, BwtForm form) {
    const std::size_t t = ledger.size();
    if (t < 2) throw UndefinedMetric("backward transfer needs at least two tasks");
    double acc = 0.0;
    for (std::size_t j = 0; j + 1 < t; ++j) {
        const double fin = ledger.at(t - 1, j), diag = ledger.at(j, j);
        if (form == BwtForm::Additive) {
            acc += fin - diag;
        } else {
            if (diag == 0.0) throw UndefinedMetric("ratio backward transfer with a zero diagonal entry");
            acc += fin / diag;
        }
    }
    const double mean = acc / static_cast<double>(t - 1);
    return form == BwtForm::Additive ? 100.0 + mean : 100.0 * mean;
}

std::string report_csv(const MetricsLedger& ledger, BwtForm form) {
    std::ostringstream out;
    for (const auto& n : ledger.task_names()) out << n << ',';
    out << "Average,BWT\n" << std::setprecision(17);
    for (double v : ledger.final_row()) out << v << ',';
    out << ledger.average_final() << ',';
    if (ledger.size() >= 2) out << bwt(ledger, form);
    out << '\n';
    return out.str();
}

std::string ledger_json(const MetricsLedger& ledger) {
    nlohmann::json doc;
    doc["tasks"] = ledger.task_names();
    nlohmann::json r = nlohmann::json::array();
    for (std::size_t t = 0; t < ledger.size(); ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t j = 0; j < ledger.size(); ++j) {
            if (ledger.has(t, j)) row.push_back(ledger.at(t, j));
            else row.push_back(nullptr);
        }
        r.push_back(std::move(row));
    }
    doc["R"] = std::move(r);
    return doc.dump(1);
}

MetricsLedger parse_ledger_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(ValidationError::Kind::Parse, std::string("ledger: ") + e.what());
    }
    if (!doc.contains("tasks") || !doc.contains("R")) {
        throw ValidationError(ValidationError::Kind::MissingField, "ledger: needs 'tasks' and 'R'");
    }
    MetricsLedger l(doc["tasks"].get<std::vector<std::string>>());
    const auto& r = doc["R"];
    if (!r.is_array() || r.size() != l.size()) throw ValidationError(ValidationError::Kind::DimensionMismatch, "ledger: R has wrong size");
    for (std::size_t t = 0; t < l.size(); ++t) {
        if (!r[t].is_array() || r[t].size() != l.size()) {
            throw ValidationError(ValidationError::Kind::DimensionMismatch, "ledger: row " + std::to_string(t) + " has wrong size");
        }
        for (std::size_t j = 0; j < l.size(); ++j)
            if (!r[t][j].is_null()) l.set(t, j, r[t][j].get<double>());
    }
    return l;
}

std::string bwt_form_name(BwtForm f) { return f == BwtForm::Additive ? "additive" : "ratio"; }

BwtForm parse_bwt_form(const std::string& s) {
    if (s == "additive") return BwtForm::Additive;
    if (s == "ratio") return BwtForm::Ratio;
    throw ValidationError(ValidationError::Kind::InvalidValue, "unknown BWT form '" + s + "'");
}

}  // namespace lcl
