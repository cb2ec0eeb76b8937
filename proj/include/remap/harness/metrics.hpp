#pragma once

#include <map>
#include <string>

#include "remap/engine/agent.hpp"

namespace remap::harness {

using engine::LearningCurve;

/// Trapezoidal area under the curve. Throws InputError for fewer than two
/// points or steps that do not increase.
double auc(const LearningCurve& curve);

/// The curve cut at `horizon` (linear interpolation at the cut).
LearningCurve truncate(const LearningCurve& curve, long horizon);

/// aucs[module][task]. Per task, each module's AUC over the task's best;
/// then the mean over tasks. Throws InputError when a module misses a task
/// or a task's best AUC is not positive.
std::map<std::string, double> ta_n_auc(const std::map<std::string, std::map<std::string, double>>& aucs);

/// (AUC(switch) - AUC(scratch)) / AUC(scratch) over matched steps.
double rgain(const LearningCurve& switched, const LearningCurve& scratch);

/// Δ_max / T for Δ = switch - scratch, T the step of the maximum (earliest
/// on ties). Points at step 0 carry no elapsed time and are skipped; 0 when
/// Δ_max is exactly 0.
double tgain(const LearningCurve& switched, const LearningCurve& scratch);

}  // namespace remap::harness
