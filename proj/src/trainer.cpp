#include "dmoe/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include "dmoe/errors.hpp"
#include "dmoe/io.hpp"
#include "dmoe/numeric.hpp"

namespace dmoe {

namespace {

constexpr double kDivergenceLoss = 1e3;

void collect_error(std::vector<std::string>& errors, bool ok, const std::string& field,
                   const std::string& why) {
    if (!ok) errors.push_back(field + " (" + why + ")");
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::json& j) {
    static const char* known[] = {
        "model",        "input_dim",     "classes",        "experts1",     "hidden1",
        "experts2",     "hidden2",       "gate_hidden1",   "gate_hidden2", "lr",
        "lr_decay",     "lr_decay_every", "batch_size",    "phase1_epochs", "phase2_epochs",
        "margin",       "seed_init",     "seed_data",      "seed_shuffle", "eval_every"};
    std::vector<std::string> errors;
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool found = false;
        for (const char* k : known)
            if (it.key() == k) found = true;
        if (!found) errors.push_back(it.key() + " (unknown key)");
    }
    TrainConfig c;
    try {
        if (j.contains("model")) c.model = model_kind_from_string(j.at("model").get<std::string>());
    } catch (const std::exception& e) {
        errors.push_back(std::string("model (") + e.what() + ")");
    }
    auto get_size = [&](const char* key, std::size_t& dst) {
        if (!j.contains(key)) return;
        const auto& v = j.at(key);
        if ((!v.is_number_integer() && !v.is_number_unsigned()) ||
            (v.is_number_integer() && v.get<std::int64_t>() < 0))
            errors.push_back(std::string(key) + " (must be a nonnegative integer)");
        else
            dst = v.get<std::size_t>();
    };
    get_size("input_dim", c.arch.input_dim);
    get_size("classes", c.arch.classes);
    get_size("experts1", c.arch.experts1);
    get_size("hidden1", c.arch.hidden1);
    get_size("experts2", c.arch.experts2);
    get_size("hidden2", c.arch.hidden2);
    get_size("gate_hidden1", c.arch.gate_hidden1);
    get_size("gate_hidden2", c.arch.gate_hidden2);
    auto get_num = [&](const char* key, auto& dst) {
        if (!j.contains(key)) return;
        if (!j.at(key).is_number())
            errors.push_back(std::string(key) + " (must be a number)");
        else
            dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    };
    get_num("lr", c.lr);
    get_num("lr_decay", c.lr_decay);
    get_num("lr_decay_every", c.lr_decay_every);
    get_num("batch_size", c.batch_size);
    get_num("phase1_epochs", c.phase1_epochs);
    get_num("phase2_epochs", c.phase2_epochs);
    get_num("margin", c.margin);
    get_num("seed_init", c.seed_init);
    get_num("seed_data", c.seed_data);
    get_num("seed_shuffle", c.seed_shuffle);
    get_num("eval_every", c.eval_every);

    collect_error(errors, c.arch.input_dim >= 1, "input_dim", "must be >= 1");
    collect_error(errors, c.arch.classes >= 1, "classes", "must be >= 1");
    collect_error(errors, c.arch.experts1 >= 1, "experts1", "must be >= 1");
    collect_error(errors, c.arch.hidden1 >= 1, "hidden1", "must be >= 1");
    collect_error(errors, c.arch.experts2 >= 1, "experts2", "must be >= 1");
    collect_error(errors, c.arch.hidden2 >= 1, "hidden2", "must be >= 1");
    collect_error(errors, c.arch.gate_hidden1 >= 1, "gate_hidden1", "must be >= 1");
    collect_error(errors, c.arch.gate_hidden2 >= 1, "gate_hidden2", "must be >= 1");
    collect_error(errors, c.lr > 0.0, "lr", "must be > 0");
    collect_error(errors, c.lr_decay > 0.0, "lr_decay", "must be > 0");
    collect_error(errors, c.lr_decay_every >= 1, "lr_decay_every", "must be >= 1");
    collect_error(errors, c.batch_size >= 1, "batch_size", "must be >= 1");
    collect_error(errors, c.phase1_epochs >= 0, "phase1_epochs", "must be >= 0");
    collect_error(errors, c.phase2_epochs >= 0, "phase2_epochs", "must be >= 0");
    collect_error(errors, c.margin >= 0.0, "margin", "must be >= 0");
    collect_error(errors, c.eval_every >= 1, "eval_every", "must be >= 1");
    if (!errors.empty()) {
        std::string msg = "invalid config fields:";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw ConfigError(msg);
    }
    return c;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"model", to_string(c.model)},
            {"input_dim", c.arch.input_dim},
            {"classes", c.arch.classes},
            {"experts1", c.arch.experts1},
            {"hidden1", c.arch.hidden1},
            {"experts2", c.arch.experts2},
            {"hidden2", c.arch.hidden2},
            {"gate_hidden1", c.arch.gate_hidden1},
            {"gate_hidden2", c.arch.gate_hidden2},
            {"lr", c.lr},
            {"lr_decay", c.lr_decay},
            {"lr_decay_every", c.lr_decay_every},
            {"batch_size", c.batch_size},
            {"phase1_epochs", c.phase1_epochs},
            {"phase2_epochs", c.phase2_epochs},
            {"margin", c.margin},
            {"seed_init", c.seed_init},
            {"seed_data", c.seed_data},
            {"seed_shuffle", c.seed_shuffle},
            {"eval_every", c.eval_every}};
}

double evaluate(const Model& m, const LabeledDataset& ds, std::uint64_t epoch) {
    if (ds.dim != m.arch.input_dim)
        throw ConfigError("evaluate: dataset dim " + std::to_string(ds.dim) +
                          " does not match model input " + std::to_string(m.arch.input_dim));
    const std::size_t n = ds.size();
    std::size_t wrong = 0;
    constexpr std::size_t kChunk = 512;
    Matrix X;
    ForwardTrace trace;
    std::vector<std::uint32_t> idx(kChunk);
    for (std::size_t start = 0; start < n; start += kChunk) {
        const std::size_t b = std::min(kChunk, n - start);
        idx.resize(b);
        for (std::size_t i = 0; i < b; ++i) idx[i] = static_cast<std::uint32_t>(start + i);
        materialize_batch(ds, idx, epoch, X);
        forward_into(trace, m, X, nullptr);
        const auto preds = predict(trace.Z3);
        for (std::size_t i = 0; i < b; ++i)
            if (preds[i] != ds.labels[start + i]) ++wrong;
    }
    return 100.0 * static_cast<double>(wrong) / static_cast<double>(n);
}

TrainResult train(const TrainConfig& config, const LabeledDataset& train_ds,
                  const LabeledDataset& test_ds, const TrainHooks* hooks,
                  const ResumeState* resume) {
    if (train_ds.dim != config.arch.input_dim)
        throw ConfigError("train: dataset dim " + std::to_string(train_ds.dim) +
                          " does not match config input_dim " +
                          std::to_string(config.arch.input_dim));
    if (train_ds.classes > config.arch.classes)
        throw ConfigError("train: dataset has more classes than the model outputs");

    TrainResult res;
    if (resume) {
        res.model = resume->model;
        res.tracker = resume->tracker;
    } else {
        Rng init_rng(config.seed_init);
        res.model = init_model(config.model, config.arch, init_rng);
        res.tracker = AssignmentTracker(res.model.num_gates1(), res.model.num_gates2(),
                                        config.margin);
    }
    Model& model = res.model;
    AssignmentTracker& tracker = res.tracker;

    // The per-epoch jitter stream is owned by the run, not the dataset file.
    LabeledDataset effective;
    const LabeledDataset* tds = &train_ds;
    if (train_ds.augmented()) {
        effective = train_ds;
        effective.jitter_info->seed = config.seed_data;
        tds = &effective;
    }

    const std::size_t n = tds->size();
    const auto batch = static_cast<std::size_t>(config.batch_size);
    const int total_epochs = config.phase1_epochs + config.phase2_epochs;
    const int start_epoch = resume ? resume->start_epoch : 0;

    Model grads = zeros_like(model);
    Matrix X;
    ForwardTrace trace;
    std::vector<std::int32_t> batch_labels;
    std::uint64_t step = static_cast<std::uint64_t>(start_epoch) *
                         ((n + batch - 1) / std::max<std::size_t>(batch, 1));
    double last_test_err = std::numeric_limits<double>::quiet_NaN();

    for (int epoch = start_epoch; epoch < total_epochs; ++epoch) {
        const int phase = epoch < config.phase1_epochs ? 1 : 2;
        if (phase == 2) lift(tracker);
        const double lr_e =
            config.lr * std::pow(config.lr_decay, epoch / config.lr_decay_every);

        Rng shuffle_rng = Rng::substream(config.seed_shuffle, static_cast<std::uint64_t>(epoch),
                                         0x5f3c9d2bULL);
        const auto order = shuffled_indices(n, shuffle_rng);

        double loss_sum = 0.0;
        std::size_t wrong = 0;
        std::vector<double> gate1_sum(model.num_gates1(), 0.0);
        std::vector<double> gate2_sum(model.num_gates2(), 0.0);

        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t b = std::min(batch, n - start);
            // masks frozen at batch start; totals advance after the update
            GateMasks masks;
            if (model.gate1) masks.layer1 = constraint_mask(tracker, 0);
            if (model.gate2) masks.layer2 = constraint_mask(tracker, 1);

            materialize_batch(*tds, {order.data() + start, b},
                              static_cast<std::uint64_t>(epoch), X);
            batch_labels.resize(b);
            for (std::size_t i = 0; i < b; ++i) batch_labels[i] = tds->labels[order[start + i]];

            forward_into(trace, model, X, &masks);
            const double loss = mean_loss(trace, batch_labels);
            if (!std::isfinite(loss) || loss > kDivergenceLoss) {
                res.diverged = true;
                res.divergence = "diverged at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step) + ": loss " + format_g12(loss);
                return res;
            }
            loss_sum += loss * static_cast<double>(b);
            const auto preds = predict(trace.Z3);
            for (std::size_t i = 0; i < b; ++i)
                if (preds[i] != batch_labels[i]) ++wrong;

            backward_into(grads, model, trace, batch_labels);
            auto mp = param_list(model);
            auto gp = param_list(grads);
            for (std::size_t k = 0; k < mp.size(); ++k)
                sgd_step(*mp[k].second, *gp[k].second, lr_e);

            for (std::size_t i = 0; i < b; ++i) {
                if (model.gate1)
                    update_totals(tracker, 0, {trace.G1.row(i), trace.G1.cols});
                if (model.gate2)
                    update_totals(tracker, 1, {trace.G2.row(i), trace.G2.cols});
            }
            for (std::size_t i = 0; i < b; ++i) {
                for (std::size_t g = 0; g < gate1_sum.size(); ++g) gate1_sum[g] += trace.G1(i, g);
                for (std::size_t g = 0; g < gate2_sum.size(); ++g) gate2_sum[g] += trace.G2(i, g);
            }
            ++step;
            if (hooks && hooks->after_step)
                hooks->after_step(StepInfo{step, epoch, phase, static_cast<int>(b), tracker});
        }

        // catch silent parameter blow-ups whose loss still reads finite
        for (auto& [name, mat] : param_list(model))
            if (!all_finite(*mat)) {
                res.diverged = true;
                res.divergence = "diverged at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step) + ": non-finite values in " + name;
                return res;
            }

        EpochMetrics em;
        em.epoch = epoch;
        em.phase = phase;
        em.train_loss = loss_sum / static_cast<double>(n);
        em.train_err = 100.0 * static_cast<double>(wrong) / static_cast<double>(n);
        if ((epoch + 1) % config.eval_every == 0 || epoch == total_epochs - 1)
            last_test_err = evaluate(model, test_ds);
        em.test_err = last_test_err;
        for (double v : gate1_sum) em.mean_gate1.push_back(v / static_cast<double>(n));
        for (double v : gate2_sum) em.mean_gate2.push_back(v / static_cast<double>(n));
        if (hooks && hooks->after_epoch) hooks->after_epoch(em);
        res.history.push_back(std::move(em));
    }
    return res;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& history,
                       std::size_t gates1, std::size_t gates2) {
    std::vector<std::string> header = {"epoch", "phase", "train_loss", "train_err", "test_err"};
    for (std::size_t g = 0; g < gates1; ++g) header.push_back("g1_mean_" + std::to_string(g));
    for (std::size_t g = 0; g < gates2; ++g) header.push_back("g2_mean_" + std::to_string(g));
    std::vector<std::vector<std::string>> rows;
    for (const auto& em : history) {
        std::vector<std::string> row = {std::to_string(em.epoch), std::to_string(em.phase),
                                        format_g12(em.train_loss), format_g12(em.train_err),
                                        format_g12(em.test_err)};
        for (double v : em.mean_gate1) row.push_back(format_g12(v));
        for (double v : em.mean_gate2) row.push_back(format_g12(v));
        rows.push_back(std::move(row));
    }
    write_csv_rows(path, header, rows);
}

// --- experiment grid ---

GridSpec grid_spec_from_json(const nlohmann::json& j) {
    GridSpec spec;
    if (!j.contains("config")) throw ConfigError("grid spec: missing 'config'");
    spec.base = train_config_from_json(j.at("config"));
    if (!j.contains("rows") || !j.at("rows").is_array() || j.at("rows").empty())
        throw ConfigError("grid spec: 'rows' must be a non-empty array");
    for (const auto& rj : j.at("rows")) {
        GridRow row;
        row.name = rj.at("name").get<std::string>();
        row.gate_label = rj.value("gate_hids", "");
        row.arch = spec.base.arch;
        auto grab = [&](const char* key, std::size_t& dst) {
            if (rj.contains(key)) dst = rj.at(key).get<std::size_t>();
        };
        grab("experts1", row.arch.experts1);
        grab("hidden1", row.arch.hidden1);
        grab("experts2", row.arch.experts2);
        grab("hidden2", row.arch.hidden2);
        grab("gate_hidden1", row.arch.gate_hidden1);
        grab("gate_hidden2", row.arch.gate_hidden2);
        row.one_layer = rj.value("one_layer", false);
        spec.rows.push_back(std::move(row));
    }
    return spec;
}

namespace {

std::vector<std::pair<std::string, ModelKind>> grid_columns(bool one_layer) {
    if (one_layer)
        return {{"single_expert", ModelKind::one_layer_single},
                {"dmoe", ModelKind::one_layer},
                {"concat_layer2", ModelKind::one_layer_concat}};
    return {{"single_expert", ModelKind::single_expert_l2},
            {"dmoe", ModelKind::dmoe},
            {"concat_layer2", ModelKind::concat_l2},
            {"dnn", ModelKind::matched_dnn}};
}

}  // namespace

std::vector<GridCell> run_experiment_grid(const GridSpec& spec, const LabeledDataset& train_ds,
                                          const LabeledDataset& test_ds, int jobs,
                                          std::function<void(const std::string&)> log) {
    std::vector<GridCell> cells;
    for (const auto& row : spec.rows)
        for (const auto& [column, kind] : grid_columns(row.one_layer)) {
            GridCell cell;
            cell.row_name = row.name;
            cell.gate_label = row.gate_label;
            cell.column = column;
            cell.kind = kind;
            cells.push_back(std::move(cell));
        }

    std::mutex log_mutex;
    auto run_cell = [&](std::size_t ci) {
        GridCell& cell = cells[ci];
        const GridRow* row = nullptr;
        for (const auto& r : spec.rows)
            if (r.name == cell.row_name && r.gate_label == cell.gate_label) row = &r;
        TrainConfig cfg = spec.base;
        cfg.model = cell.kind;
        cfg.arch = row->arch;
        if (log) {
            std::lock_guard lk(log_mutex);
            log("grid: training " + cell.row_name + " / " + cell.column);
        }
        try {
            TrainResult r = train(cfg, train_ds, test_ds);
            if (r.diverged) {
                cell.ok = false;
                cell.error = r.divergence;
            } else {
                cell.ok = true;
                cell.train_err = r.history.empty() ? 100.0 : r.history.back().train_err;
                cell.test_err = r.history.empty() ? 100.0 : r.history.back().test_err;
            }
        } catch (const std::exception& e) {
            cell.ok = false;
            cell.error = e.what();
        }
        if (log) {
            std::lock_guard lk(log_mutex);
            log("grid: finished " + cell.row_name + " / " + cell.column +
                (cell.ok ? " test_err=" + format_g12(cell.test_err) : " FAILED: " + cell.error));
        }
    };

    if (jobs <= 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
        return cells;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const int workers = std::min<int>(jobs, static_cast<int>(cells.size()));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= cells.size()) return;
                run_cell(i);
            }
        });
    for (auto& t : pool) t.join();
    return cells;
}

void write_grid_csvs(const std::vector<GridCell>& cells, const std::vector<GridRow>& rows,
                     const std::string& out_dir) {
    const std::vector<std::string> header = {"model",         "gate_hids", "single_expert",
                                             "dmoe",          "concat_layer2", "dnn"};
    auto cell_text = [&](const GridRow& row, const std::string& column, bool train) {
        for (const auto& c : cells)
            if (c.row_name == row.name && c.gate_label == row.gate_label && c.column == column) {
                if (!c.ok) return std::string("diverged");
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.2f", train ? c.train_err : c.test_err);
                return std::string(buf);
            }
        return std::string("--");
    };
    for (bool train : {false, true}) {
        std::vector<std::vector<std::string>> out_rows;
        for (const auto& row : rows)
            out_rows.push_back({row.name, row.gate_label, cell_text(row, "single_expert", train),
                                cell_text(row, "dmoe", train), cell_text(row, "concat_layer2", train),
                                cell_text(row, "dnn", train)});
        write_csv_rows(out_dir + (train ? "/grid_train_error.csv" : "/grid_test_error.csv"),
                       header, out_rows);
    }
    std::vector<std::vector<std::string>> detail;
    for (const auto& c : cells)
        detail.push_back({c.row_name, c.gate_label, c.column, to_string(c.kind),
                          c.ok ? format_g12(c.train_err) : "nan",
                          c.ok ? format_g12(c.test_err) : "nan", c.ok ? "ok" : c.error});
    write_csv_rows(out_dir + "/grid_cells.csv",
                   {"model", "gate_hids", "column", "kind", "train_err", "test_err", "status"},
                   detail);
}

}  // namespace dmoe
