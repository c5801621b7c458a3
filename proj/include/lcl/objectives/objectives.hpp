#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lcl/backbone/backbone.hpp"

namespace lcl {

struct LossReport {
    double dice = 0.0;
    double bce = 0.0;
    double seg = 0.0;  // 0.8 dice + 0.2 bce
    std::vector<std::pair<std::string, double>> est;  // per trained estimator
    double total = 0.0;
};

constexpr double kDiceWeight = 0.8;
constexpr double kBceWeight = 0.2;

/// Weighted composition of already-computed loss terms.
LossReport compose_losses(double dice, double bce, std::vector<std::pair<std::string, double>> est);

/// Plain (tape-free) soft Dice and BCE on equally shaped tensors.
double dice_loss(const Tensor& probs, const Tensor& target, double eps = 1e-5);
double bce_loss(const Tensor& probs, const Tensor& target, double clamp = 1e-7);

struct Objective {
    Var total;
    LossReport report;
};

/// Segmentation loss over the head rows in `rows` (background plus the
/// current task's classes; Dice and BCE each summed over rows, Dice averaged
/// per sample) plus the mean per-sample reconstruction loss of every
/// trainable estimator. All samples must come from the same task.
Objective total_objective(Tape& tape, const ForwardResult& out, const std::vector<const SegSample*>& batch,
                          const SegmentationHead& head, const std::vector<std::size_t>& rows, ToyBackbone& bb);

}  // namespace lcl
