#pragma once

// Two-phase SGD training (balancing constraint on, then lifted for
// fine-tuning), evaluation, and the experiment grid that produces the
// per-architecture comparison tables.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmoe/balance.hpp"
#include "dmoe/dataset.hpp"
#include "dmoe/model.hpp"

namespace dmoe {

struct TrainConfig {
    ModelKind model = ModelKind::dmoe;
    Arch arch;
    double lr = 0.1;
    double lr_decay = 0.5;
    int lr_decay_every = 10;
    int batch_size = 64;
    int phase1_epochs = 30;
    int phase2_epochs = 20;
    double margin = 1.0;
    std::uint64_t seed_init = 1;
    std::uint64_t seed_data = 2;
    std::uint64_t seed_shuffle = 3;
    int eval_every = 1;
};

// Strict parse: unknown keys are rejected and every invalid field is listed.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& c);

struct EpochMetrics {
    int epoch = 0;
    int phase = 1;
    double train_loss = 0.0;
    double train_err = 0.0;  // percent
    double test_err = 0.0;   // percent
    std::vector<double> mean_gate1;  // mean gate value used, per expert
    std::vector<double> mean_gate2;
};

struct StepInfo {
    std::uint64_t step;
    int epoch;
    int phase;
    int batch_size;
    const AssignmentTracker& tracker;
};

struct TrainHooks {
    std::function<void(const StepInfo&)> after_step;
    std::function<void(const EpochMetrics&)> after_epoch;
};

struct TrainResult {
    Model model;
    std::vector<EpochMetrics> history;
    AssignmentTracker tracker;
    bool diverged = false;
    std::string divergence;
};

// Continue a run from a checkpoint (epoch granularity; all random streams are
// keyed by epoch, so resumed training is bit-identical to an uninterrupted run).
struct ResumeState {
    Model model;
    AssignmentTracker tracker;
    int start_epoch = 0;
};

TrainResult train(const TrainConfig& config, const LabeledDataset& train_ds,
                  const LabeledDataset& test_ds, const TrainHooks* hooks = nullptr,
                  const ResumeState* resume = nullptr);

// Error percentage (argmax vs label, ties to the lowest class index). `epoch`
// selects the materialization for augmented datasets.
double evaluate(const Model& m, const LabeledDataset& ds, std::uint64_t epoch = 0);

void append_metrics_csv(std::vector<std::vector<std::string>>& rows, const EpochMetrics& em);
void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& history,
                       std::size_t gates1, std::size_t gates2);

// --- experiment grid ---

struct GridRow {
    std::string name;        // e.g. "4x100-4x100"
    std::string gate_label;  // e.g. "50-50"
    Arch arch;
    bool one_layer = false;
};

struct GridSpec {
    std::vector<GridRow> rows;
    TrainConfig base;  // hyperparameters + seeds shared by every cell
};

GridSpec grid_spec_from_json(const nlohmann::json& j);

struct GridCell {
    std::string row_name;
    std::string gate_label;
    ModelKind kind = ModelKind::dmoe;
    std::string column;  // table column this cell belongs to
    double train_err = 0.0;
    double test_err = 0.0;
    bool ok = false;
    std::string error;
};

// Trains every (row, column) cell; a diverged cell is recorded and the grid
// continues. `jobs` caps concurrently trained cells.
std::vector<GridCell> run_experiment_grid(const GridSpec& spec, const LabeledDataset& train_ds,
                                          const LabeledDataset& test_ds, int jobs = 1,
                                          std::function<void(const std::string&)> log = {});

// Table-shaped CSVs (one row per architecture, one column per model kind)
// for test and train error, plus a long-format per-cell CSV.
void write_grid_csvs(const std::vector<GridCell>& cells, const std::vector<GridRow>& rows,
                     const std::string& out_dir);

}  // namespace dmoe
