#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "lcl/backbone/backbone.hpp"
#include "lcl/expansion/expansion.hpp"
#include "lcl/harness/config.hpp"
#include "lcl/harness/data.hpp"
#include "lcl/metrics/metrics.hpp"

namespace lcl {

struct Model {
    ToyBackbone backbone;
    SegmentationHead head;
    ConceptMatrix concepts;  // the matrix routing reads (randomised in rand_concepts mode)

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    /// Marks every parameter active (training) or inactive (evaluation).
    void set_training(bool on);
};

Model create_model(const RunConfig& cfg, const ConceptMatrix& concepts, std::uint64_t init_seed);

/// Sets every site's projection to G * E, with G the concept render matrix
/// and E the patch-embedding rows that read the concept channel.
void warm_start_projections(Model& model);

/// JSON-lines run log kept in memory and optionally mirrored to a stream.
class RunLog {
public:
    explicit RunLog(std::ostream* sink = nullptr) : sink_(sink) {}
    void write(std::string line);
    const std::vector<std::string>& lines() const noexcept { return lines_; }

private:
    std::ostream* sink_;
    std::vector<std::string> lines_;
};

/// Mean routing weight per (site, evaluated task, expert) over a task's test set.
struct RoutingHeatmap {
    std::vector<std::string> sites;
    std::vector<std::string> tasks;
    std::vector<std::vector<std::vector<double>>> weights;  // [site][task][expert]
};
std::string routing_heatmap_csv(const RoutingHeatmap& h);

struct RunResult {
    MetricsLedger ledger;
    std::vector<ExpansionDecision> decisions;
    RoutingHeatmap heatmap;
    std::vector<std::string> log;
    Model model;  // final model (the last task's model in individual mode)
    double seconds = 0.0;
};

/// Builds the configured stream and the concept matrix used to render it.
TaskStream build_stream(const RunConfig& cfg, ConceptMatrix& concepts);

/// Called with the task index and the model once a task is trained and evaluated.
using TaskObserver = std::function<void(std::size_t task, const Model& model)>;

/// Runs the whole stream. `stream` is consumed: training data of each task is
/// released after that task when cfg.release_data is set.
RunResult run_continual(const RunConfig& cfg, TaskStream& stream, const ConceptMatrix& concepts,
                        std::ostream* log_sink = nullptr, const TaskObserver& after_task = {});
/// Builds the stream from the config, runs it and, when cfg.output_dir is
/// set, writes the report files there.
RunResult run_continual(const RunConfig& cfg);

/// Ledger, expansion decisions and final-row routing heatmap rebuilt from a
/// JSON-lines run log (the model is left empty).
RunResult report_from_log(const std::vector<std::string>& lines);

/// Report files: ledger.json, report.csv, growth.csv, routing_heatmap.csv.
void write_reports(const RunResult& r, const RunConfig& cfg, const std::filesystem::path& dir);

/// Mean per-sample DSC (percent) of head row `row` against lesion label
/// `label` over `samples`.
double evaluate_samples(Model& model, const std::vector<SegSample>& samples, std::size_t row, int label,
                        double lambda, std::size_t batch_size = 16);

std::string decision_json(const ExpansionDecision& d);
ExpansionDecision parse_decision_json(const std::string& line);

}  // namespace lcl
