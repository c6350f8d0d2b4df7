#include "dmoe/balance.hpp"

#include <stdexcept>

namespace dmoe {

AssignmentTracker::AssignmentTracker(std::size_t experts1, std::size_t experts2, double m)
    : margin(m) {
    totals[0].assign(experts1, 0.0);
    totals[1].assign(experts2, 0.0);
    comp[0].assign(experts1, 0.0);
    comp[1].assign(experts2, 0.0);
}

std::vector<double> AssignmentTracker::layer_totals(int layer) const {
    return totals[static_cast<std::size_t>(layer)];
}

std::vector<std::uint8_t> constraint_mask(const AssignmentTracker& t, int layer) {
    const std::vector<double> totals = t.layer_totals(layer);
    std::vector<std::uint8_t> keep(totals.size(), 1);
    if (!t.active || totals.empty()) return keep;
    double mean = 0.0;
    for (double v : totals) mean += v;
    mean /= static_cast<double>(totals.size());
    for (std::size_t i = 0; i < totals.size(); ++i)
        if (totals[i] - mean > t.margin) keep[i] = 0;
    return keep;
}

void mask_renormalize(std::span<double> g, std::span<const std::uint8_t> keep) {
    if (g.size() != keep.size())
        throw std::invalid_argument("mask_renormalize: mask size mismatch");
    double surviving = 0.0;
    bool any_masked = false;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (keep[i])
            surviving += g[i];
        else
            any_masked = true;
    }
    if (!any_masked) return;
    if (surviving < 1e-12) return;  // fallback: leave g untouched
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = keep[i] ? g[i] / surviving : 0.0;
}

std::vector<double> apply_constraint(std::span<const double> g, const AssignmentTracker& t,
                                     int layer) {
    std::vector<double> out(g.begin(), g.end());
    if (!t.active) return out;
    const auto keep = constraint_mask(t, layer);
    mask_renormalize(out, keep);
    return out;
}

void update_totals(AssignmentTracker& t, int layer, std::span<const double> g_used) {
    auto& totals = t.totals[static_cast<std::size_t>(layer)];
    auto& comp = t.comp[static_cast<std::size_t>(layer)];
    if (g_used.size() != totals.size())
        throw std::invalid_argument("update_totals: distribution size mismatch");
    for (std::size_t i = 0; i < totals.size(); ++i) {
        // Kahan step; comp carries the low-order bits lost by the last add
        const double y = g_used[i] - comp[i];
        const double s = totals[i] + y;
        comp[i] = (s - totals[i]) - y;
        totals[i] = s;
    }
    if (layer == 0) ++t.steps;
}

void lift(AssignmentTracker& t) { t.active = false; }

}  // namespace dmoe
