#include "remap/harness/metrics.hpp"

#include <set>

#include "remap/common/errors.hpp"

namespace remap::harness {

double auc(const LearningCurve& curve) {
    if (curve.size() < 2) throw InputError("AUC needs at least two curve points");
    double a = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        const double dt = static_cast<double>(curve[i].step - curve[i - 1].step);
        if (!(dt > 0)) throw InputError("curve steps must increase");
        a += 0.5 * dt * (curve[i].value + curve[i - 1].value);
    }
    return a;
}

LearningCurve truncate(const LearningCurve& curve, long horizon) {
    LearningCurve out;
    for (std::size_t i = 0; i < curve.size(); ++i) {
        if (curve[i].step <= horizon) {
            out.push_back(curve[i]);
            continue;
        }
        if (i > 0 && curve[i - 1].step < horizon) {
            const auto& a = curve[i - 1];
            const auto& b = curve[i];
            const double f = static_cast<double>(horizon - a.step) / static_cast<double>(b.step - a.step);
            out.push_back({horizon, a.value + f * (b.value - a.value)});
        }
        break;
    }
    return out;
}

std::map<std::string, double> ta_n_auc(const std::map<std::string, std::map<std::string, double>>& aucs) {
    if (aucs.empty()) throw InputError("TA-N-AUC needs at least one module");
    std::set<std::string> tasks;
    for (const auto& [m, per_task] : aucs)
        for (const auto& [t, a] : per_task) tasks.insert(t);
    std::map<std::string, double> best;
    for (const auto& t : tasks) {
        double b = 0.0;
        for (const auto& [m, per_task] : aucs) {
            const auto it = per_task.find(t);
            if (it == per_task.end()) throw InputError("module '" + m + "' has no curve for task '" + t + "'");
            b = std::max(b, it->second);
        }
        if (!(b > 0.0)) throw InputError("task '" + t + "' has no positive AUC");
        best[t] = b;
    }
    std::map<std::string, double> out;
    for (const auto& [m, per_task] : aucs) {
        double s = 0.0;
        for (const auto& t : tasks) s += per_task.at(t) / best[t];
        out[m] = s / static_cast<double>(tasks.size());
    }
    return out;
}

namespace {

void check_matched(const LearningCurve& a, const LearningCurve& b) {
    if (a.size() != b.size()) throw InputError("switch and scratch curves cover different step ranges");
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].step != b[i].step) throw InputError("switch and scratch curves are sampled at different steps");
}

}  // namespace

double rgain(const LearningCurve& switched, const LearningCurve& scratch) {
    check_matched(switched, scratch);
    const double base = auc(scratch);
    if (!(base > 0.0)) throw InputError("scratch AUC is zero");
    return (auc(switched) - base) / base;
}

double tgain(const LearningCurve& switched, const LearningCurve& scratch) {
    check_matched(switched, scratch);
    bool any = false;
    double best = 0.0;
    long at = 0;
    for (std::size_t i = 0; i < switched.size(); ++i) {
        if (switched[i].step <= 0) continue;
        const double d = switched[i].value - scratch[i].value;
        if (!any || d > best) {
            best = d;
            at = switched[i].step;
            any = true;
        }
    }
    if (!any || best == 0.0) return 0.0;
    return best / static_cast<double>(at);
}

}  // namespace remap::harness
