#pragma once

// Post-training gating analyses: mean assignment by class and by translation,
// joint layer-1/layer-2 assignment products, top-k example grids per expert
// combination, and the scalar selectivity scores used to test the
// where/what factorization.

#include <cstdint>
#include <string>
#include <vector>

#include "dmoe/dataset.hpp"
#include "dmoe/matrix.hpp"
#include "dmoe/model.hpp"

namespace dmoe {

struct GatingLayerStats {
    Matrix by_class;                          // experts x classes, mean used gate value
    std::vector<std::size_t> class_counts;    // examples per class
    Matrix by_translation;                    // experts x cells, cell = (dy+m)*(2m+1)+(dx+m)
    std::vector<std::size_t> translation_counts;
    int grid_side = 0;                        // 2m+1; 0 when no translation meta
    bool has_translation = false;
};

struct GatingStats {
    std::vector<GatingLayerStats> layers;  // one per gated layer
};

// Means over all examples sharing a class / a translation cell. Cells with
// count 0 keep mean 0 and are flagged by their count.
GatingStats gating_stats(const Model& m, const LabeledDataset& ds);

struct JointAssignment {
    Matrix raw;          // N x M, mean over examples of g1_i * g2_j; sums to 1
    Matrix conditional;  // rows renormalized; zero-mass rows left at 0 and flagged
    std::vector<std::uint8_t> zero_rows;
};

JointAssignment joint_assignment(const Model& m, const LabeledDataset& ds);

struct TopkCell {
    std::vector<std::uint32_t> examples;  // descending score, ties to lower index
    std::vector<double> scores;
};

// For each (layer-1 expert i, layer-2 expert j): the k examples maximizing
// g1_i(x) * g2_j(z1(x)). Result indexed [i][j].
std::vector<std::vector<TopkCell>> topk_per_combination(const Model& m, const LabeledDataset& ds,
                                                        std::size_t k);

struct SelectivityScore {
    double translation = 0.0;  // mean over experts of the variance across cells
    double by_class = 0.0;     // mean over experts of the variance across classes
};

// One score pair per gated layer.
std::vector<SelectivityScore> factorization_score(const GatingStats& stats);

// --- file artifacts (CSV / PGM as described in docs/formats.md) ---

void export_gating_stats(const GatingStats& stats, const std::string& dir);
void export_joint_assignment(const JointAssignment& ja, const std::string& dir);
void export_factorization(const std::vector<SelectivityScore>& scores, const std::string& dir);
// Tiled image grid (rows = layer-1 expert, columns = layer-2 expert; each
// cell tiles its top-k examples). Examples are rendered img_rows x img_cols;
// 0,0 means square, inferred from the input dimension.
void export_topk_grid(const Model& m, const LabeledDataset& ds, std::size_t k,
                      const std::string& dir, std::size_t img_rows = 0, std::size_t img_cols = 0);

}  // namespace dmoe
