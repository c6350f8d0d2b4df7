#pragma once

// Running gating totals and the margin constraint that keeps early training
// from funneling every example through the same experts. An expert whose
// total assignment exceeds the mean by more than the margin gets its gate
// entry zeroed and the rest of the distribution renormalized; once training
// has balanced out, the constraint is lifted for fine-tuning.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace dmoe {

struct AssignmentTracker {
    // Kahan-compensated per-expert totals, one pair of arrays per gated layer.
    std::array<std::vector<double>, 2> totals;
    std::array<std::vector<double>, 2> comp;
    std::uint64_t steps = 0;  // examples seen (advanced by layer-0 updates)
    double margin = 1.0;
    bool active = true;

    AssignmentTracker() = default;
    AssignmentTracker(std::size_t experts1, std::size_t experts2, double m);

    std::vector<double> layer_totals(int layer) const;
};

// Keep flags: expert i is masked when totals[i] - mean(totals) > margin
// (strict). All-keep when the tracker is inactive or the layer has no gate.
std::vector<std::uint8_t> constraint_mask(const AssignmentTracker& t, int layer);

// Zero the masked entries of g and renormalize the rest to sum 1, in place.
// If every entry is masked or the surviving mass is below 1e-12, g is left
// unchanged.
void mask_renormalize(std::span<double> g, std::span<const std::uint8_t> keep);

// constraint_mask + mask_renormalize on a copy.
std::vector<double> apply_constraint(std::span<const double> g, const AssignmentTracker& t,
                                     int layer);

// Accumulate the post-constraint distribution actually used in the forward
// pass. Layer 0 advances the step count; layer counters move together, one
// update per example per layer.
void update_totals(AssignmentTracker& t, int layer, std::span<const double> g_used);

// Deactivate the constraint; subsequent apply_constraint calls are the
// identity. Totals keep accumulating for analysis. Idempotent.
void lift(AssignmentTracker& t);

}  // namespace dmoe
