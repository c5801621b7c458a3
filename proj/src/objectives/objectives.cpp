#include "lcl/objectives/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "lcl/errors.hpp"
#include "lcl/numerics/ops.hpp"

namespace lcl {

LossReport compose_losses(double dice, double bce, std::vector<std::pair<std::string, double>> est) {
    LossReport r;
    r.dice = dice;
    r.bce = bce;
    r.seg = kDiceWeight * dice + kBceWeight * bce;
    r.total = r.seg;
    for (const auto& [name, v] : est) r.total += v;
    r.est = std::move(est);
    return r;
}

double dice_loss(const Tensor& probs, const Tensor& target, double eps) {
    Tape tape;
    return ops::dice_loss(tape.constant(probs), target, 1, eps).value()[0];
}

double bce_loss(const Tensor& probs, const Tensor& target, double clamp) {
    Tape tape;
    return ops::bce_loss(tape.constant(probs), target, clamp).value()[0];
}

Objective total_objective(Tape& tape, const ForwardResult& out, const std::vector<const SegSample*>& batch,
                          const SegmentationHead& head, const std::vector<std::size_t>& rows, ToyBackbone& bb) {
    if (batch.empty()) throw EmptyInputError("objective over an empty batch");
    for (const SegSample* s : batch) {
        if (s->task != batch.front()->task) throw ContractViolation("batch mixes samples of different tasks");
    }
    if (rows.empty()) throw ParameterError("objective needs at least one head row");
    const BackboneConfig& c = bb.config;
    const std::size_t b = batch.size();

    Var dice, bce;
    bool first = true;
    for (std::size_t r : rows) {
        if (r >= out.class_logits.size() || r >= head.size()) throw ParameterError("objective: head row out of range");
        const Tensor target = patch_mask(batch, static_cast<int>(r), c);
        const Var probs = ops::sigmoid(out.class_logits[r]);
        const Var d = ops::dice_loss(probs, target, b);
        const Var e = ops::bce_loss(probs, target);
        dice = first ? d : ops::add(dice, d);
        bce = first ? e : ops::add(bce, e);
        first = false;
    }
    Var total = ops::add(ops::scale(dice, kDiceWeight), ops::scale(bce, kBceWeight));

    std::vector<std::pair<std::string, double>> est;
    const auto sites = bb.sites();
    for (std::size_t si = 0; si < sites.size(); ++si) {
        for (auto& ex : sites[si]->experts) {
            EstimatorState& e = ex.estimator;
            if (!e.encoder.requires_grad() && !e.decoder.requires_grad()) continue;
            if (si >= out.site_inputs.size() || out.site_inputs[si].empty()) {
                throw ContractViolation("objective: site inputs of " + sites[si]->id.str() + " were not kept");
            }
            const Var l = ops::scale(estimator_loss(tape, e, out.site_inputs[si]), 1.0 / static_cast<double>(b));
            est.emplace_back(e.encoder.name(), l.value()[0]);
            total = ops::add(total, l);
        }
    }
    Objective obj{total, compose_losses(dice.value()[0], bce.value()[0], std::move(est))};
    return obj;
}

}  // namespace lcl
