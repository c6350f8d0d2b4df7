// Offline experiment driver: data preparation, training, evaluation, grid
// runs, and gating analyses. Every run writes a run-manifest.json with the
// fully resolved configuration; feeding that manifest back to `train`
// reproduces the run byte for byte.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dmoe/analysis.hpp"
#include "dmoe/container.hpp"
#include "dmoe/dataset.hpp"
#include "dmoe/errors.hpp"
#include "dmoe/io.hpp"
#include "dmoe/model.hpp"
#include "dmoe/trainer.hpp"

namespace {

using nlohmann::json;

constexpr const char* kToolVersion = "dmoe 1.0.0";

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void report_file(const std::string& path) {
    std::cout << "wrote " << path << " fnv1a64=" << hex64(dmoe::fnv1a64_file(path)) << "\n";
}

void write_manifest(const std::string& out_dir, const json& manifest) {
    dmoe::ensure_dir(out_dir);
    dmoe::write_text_file(out_dir + "/run-manifest.json", manifest.dump(2) + "\n");
    report_file(out_dir + "/run-manifest.json");
}

json load_json_file(const std::string& path) {
    const std::string text = dmoe::read_text_file(path);
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw dmoe::ConfigError(path + ": not valid JSON");
    return j;
}

// --- prepare-data ---

struct PrepareArgs {
    std::string mnist_dir;
    std::string out;
    std::uint64_t seed = 1;
    std::string mode = "per-epoch";
};

int cmd_prepare_data(const PrepareArgs& a) {
    if (a.mode != "per-epoch" && a.mode != "fixed")
        throw dmoe::ConfigError("--mode must be per-epoch or fixed");
    const auto train28 = dmoe::load_idx(a.mnist_dir + "/train-images-idx3-ubyte",
                                        a.mnist_dir + "/train-labels-idx1-ubyte");
    const auto test28 = dmoe::load_idx(a.mnist_dir + "/t10k-images-idx3-ubyte",
                                       a.mnist_dir + "/t10k-labels-idx1-ubyte");
    dmoe::ensure_dir(a.out);
    dmoe::JitterSpec train_spec;
    train_spec.seed = a.seed;
    dmoe::JitterSpec test_spec;
    test_spec.seed = dmoe::mix64(a.seed);  // independent stream for the test set

    const auto mode = a.mode == "per-epoch" ? dmoe::JitterMode::per_epoch_random
                                            : dmoe::JitterMode::fixed_once;
    const auto train_out = dmoe::jitter_dataset(train28, train_spec, mode);
    // single random translation per test image, drawn once and frozen
    const auto test_out = dmoe::jitter_dataset(test28, test_spec, dmoe::JitterMode::fixed_once);
    dmoe::save_dataset(a.out + "/mnist_train.dmc", train_out);
    dmoe::save_dataset(a.out + "/mnist_test.dmc", test_out);
    report_file(a.out + "/mnist_train.dmc");
    report_file(a.out + "/mnist_test.dmc");
    write_manifest(a.out, json{{"tool", kToolVersion},
                               {"command", "prepare-data"},
                               {"mnist_dir", a.mnist_dir},
                               {"seed", a.seed},
                               {"test_seed", test_spec.seed},
                               {"mode", a.mode},
                               {"outputs", {"mnist_train.dmc", "mnist_test.dmc"}}});
    return kExitOk;
}

// --- gen-speech ---

struct GenSpeechArgs {
    std::string out;
    std::uint64_t seed = 1;
    std::size_t train_n = 20000;
    std::size_t test_n = 4000;
    double noise = 0.1;
};

int cmd_gen_speech(const GenSpeechArgs& a) {
    dmoe::ensure_dir(a.out);
    const auto train = dmoe::synth_monophone(a.train_n, a.seed, a.noise);
    const auto test = dmoe::synth_monophone(a.test_n, a.seed, a.noise, 11, 40, 40, a.train_n);
    dmoe::save_dataset(a.out + "/speech_train.dmc", train);
    dmoe::save_dataset(a.out + "/speech_test.dmc", test);
    report_file(a.out + "/speech_train.dmc");
    report_file(a.out + "/speech_test.dmc");
    write_manifest(a.out, json{{"tool", kToolVersion},
                               {"command", "gen-speech"},
                               {"seed", a.seed},
                               {"train_n", a.train_n},
                               {"test_n", a.test_n},
                               {"noise", a.noise},
                               {"outputs", {"speech_train.dmc", "speech_test.dmc"}}});
    return kExitOk;
}

// --- train ---

struct TrainArgs {
    std::string config_path;
    std::string train_data;
    std::string test_data;
    std::string out;
    std::string resume;
    // flag overrides; CLI11 marks presence
    std::string model;
    double lr = 0;
    int batch_size = 0;
    int phase1_epochs = -1;
    int phase2_epochs = -1;
    double margin = -1;
    std::uint64_t seed_init = 0, seed_data = 0, seed_shuffle = 0;
    int eval_every = 0;
    CLI::App* cmd = nullptr;
};

int cmd_train(TrainArgs& a) {
    json cfg_json = load_json_file(a.config_path);
    // a run-manifest may be replayed directly: it embeds config and inputs
    if (cfg_json.contains("config")) {
        if (a.train_data.empty() && cfg_json.contains("inputs")) {
            a.train_data = cfg_json.at("inputs").value("train", "");
            a.test_data = cfg_json.at("inputs").value("test", "");
        }
        cfg_json = cfg_json.at("config");
    }
    dmoe::TrainConfig cfg = dmoe::train_config_from_json(cfg_json);
    if (a.cmd->count("--model")) cfg.model = dmoe::model_kind_from_string(a.model);
    if (a.cmd->count("--lr")) cfg.lr = a.lr;
    if (a.cmd->count("--batch-size")) cfg.batch_size = a.batch_size;
    if (a.cmd->count("--phase1-epochs")) cfg.phase1_epochs = a.phase1_epochs;
    if (a.cmd->count("--phase2-epochs")) cfg.phase2_epochs = a.phase2_epochs;
    if (a.cmd->count("--margin")) cfg.margin = a.margin;
    if (a.cmd->count("--seed-init")) cfg.seed_init = a.seed_init;
    if (a.cmd->count("--seed-data")) cfg.seed_data = a.seed_data;
    if (a.cmd->count("--seed-shuffle")) cfg.seed_shuffle = a.seed_shuffle;
    if (a.cmd->count("--eval-every")) cfg.eval_every = a.eval_every;
    if (a.train_data.empty() || a.test_data.empty())
        throw dmoe::ConfigError("--train-data and --test-data are required (or replay a manifest)");

    const auto train_ds = dmoe::load_dataset(a.train_data);
    const auto test_ds = dmoe::load_dataset(a.test_data);

    dmoe::ensure_dir(a.out);
    const json manifest = {{"tool", kToolVersion},
                           {"command", "train"},
                           {"config", dmoe::train_config_to_json(cfg)},
                           {"inputs", {{"train", a.train_data}, {"test", a.test_data}}},
                           {"outputs", {"metrics.csv", "checkpoint.dmc"}}};

    dmoe::TrainHooks hooks;
    hooks.after_epoch = [](const dmoe::EpochMetrics& em) {
        std::cout << "epoch " << em.epoch << " phase " << em.phase << " train_loss "
                  << dmoe::format_g12(em.train_loss) << " train_err "
                  << dmoe::format_g12(em.train_err) << " test_err "
                  << dmoe::format_g12(em.test_err) << std::endl;
    };
    dmoe::TrainResult result;
    if (!a.resume.empty()) {
        const auto ck = dmoe::load_checkpoint(a.resume);
        dmoe::ResumeState rs{ck.model, ck.tracker, static_cast<int>(ck.epoch)};
        result = dmoe::train(cfg, train_ds, test_ds, &hooks, &rs);
    } else {
        result = dmoe::train(cfg, train_ds, test_ds, &hooks);
    }

    dmoe::write_metrics_csv(a.out + "/metrics.csv", result.history, result.model.num_gates1(),
                            result.model.num_gates2());
    const int total_epochs = cfg.phase1_epochs + cfg.phase2_epochs;
    dmoe::save_checkpoint(a.out + "/checkpoint.dmc", result.model, result.tracker,
                          static_cast<std::uint64_t>(total_epochs),
                          result.tracker.active ? 1 : 2, {{"config", dmoe::train_config_to_json(cfg)}});
    report_file(a.out + "/metrics.csv");
    report_file(a.out + "/checkpoint.dmc");
    write_manifest(a.out, manifest);
    if (result.diverged) {
        std::cerr << "error: " << result.divergence << "\n";
        return kExitDiverged;
    }
    if (!result.history.empty()) {
        const auto& last = result.history.back();
        std::cout << "final train_err=" << dmoe::format_g12(last.train_err)
                  << "% test_err=" << dmoe::format_g12(last.test_err) << "%\n";
    }
    return kExitOk;
}

// --- eval ---

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& out) {
    const auto ck = dmoe::load_checkpoint(checkpoint);
    const auto ds = dmoe::load_dataset(data);
    const double err = dmoe::evaluate(ck.model, ds);
    std::cout << "error " << dmoe::format_g12(err) << "%\n";
    if (!out.empty()) {
        dmoe::ensure_dir(out);
        dmoe::write_csv_rows(out + "/eval.csv", {"checkpoint", "data", "error"},
                             {{checkpoint, data, dmoe::format_g12(err)}});
        report_file(out + "/eval.csv");
        write_manifest(out, json{{"tool", kToolVersion},
                                 {"command", "eval"},
                                 {"inputs", {{"checkpoint", checkpoint}, {"data", data}}},
                                 {"error", err}});
    }
    return kExitOk;
}

// --- grid ---

int cmd_grid(const std::string& spec_path, const std::string& train_data,
             const std::string& test_data, const std::string& out, int jobs) {
    json spec_json = load_json_file(spec_path);
    if (spec_json.contains("config") && spec_json.contains("grid_spec"))
        spec_json = spec_json.at("grid_spec");  // manifest replay
    const dmoe::GridSpec spec = dmoe::grid_spec_from_json(spec_json);
    const auto train_ds = dmoe::load_dataset(train_data);
    const auto test_ds = dmoe::load_dataset(test_data);
    dmoe::ensure_dir(out);
    const auto cells = dmoe::run_experiment_grid(
        spec, train_ds, test_ds, jobs, [](const std::string& line) { std::cout << line << "\n"; });
    dmoe::write_grid_csvs(cells, spec.rows, out);
    report_file(out + "/grid_test_error.csv");
    report_file(out + "/grid_train_error.csv");
    report_file(out + "/grid_cells.csv");
    write_manifest(out, json{{"tool", kToolVersion},
                             {"command", "grid"},
                             {"grid_spec", spec_json},
                             {"config", dmoe::train_config_to_json(spec.base)},
                             {"inputs", {{"train", train_data}, {"test", test_data}}},
                             {"jobs", jobs}});
    bool any_failed = false;
    for (const auto& c : cells)
        if (!c.ok) any_failed = true;
    return any_failed ? kExitDiverged : kExitOk;
}

// --- analyze ---

int cmd_analyze(const std::string& checkpoint, const std::string& data, const std::string& out,
                std::size_t topk, std::size_t img_rows, std::size_t img_cols) {
    const auto ck = dmoe::load_checkpoint(checkpoint);
    const auto ds = dmoe::load_dataset(data);
    dmoe::ensure_dir(out);
    const auto stats = dmoe::gating_stats(ck.model, ds);
    dmoe::export_gating_stats(stats, out);
    dmoe::export_factorization(dmoe::factorization_score(stats), out);
    if (ck.model.num_gates1() > 0 && ck.model.num_gates2() > 0) {
        dmoe::export_joint_assignment(dmoe::joint_assignment(ck.model, ds), out);
        dmoe::export_topk_grid(ck.model, ds, topk, out, img_rows, img_cols);
    }
    for (const auto& name :
         {"gating_by_class_layer1.csv", "factorization_scores.csv"})
        report_file(out + std::string("/") + name);
    write_manifest(out, json{{"tool", kToolVersion},
                             {"command", "analyze"},
                             {"inputs", {{"checkpoint", checkpoint}, {"data", data}}},
                             {"topk", topk},
                             {"img_rows", img_rows},
                             {"img_cols", img_cols}});
    return kExitOk;
}

// --- inspect-checkpoint ---

int cmd_inspect(const std::string& path) {
    const auto c = dmoe::Container::load(path);
    std::cout << c.manifest.dump(2) << "\n";
    for (const auto& s : c.sections) {
        const char* dt = s.dtype == dmoe::SectionType::f64  ? "f64"
                         : s.dtype == dmoe::SectionType::u8 ? "u8"
                                                            : "i32";
        std::cout << "section " << s.name << " " << dt << " " << s.rows << "x" << s.cols << "\n";
    }
    std::cout << "fnv1a64=" << hex64(dmoe::fnv1a64_file(path)) << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deep mixture-of-experts experiment tool"};
    app.require_subcommand(1);

    PrepareArgs prep;
    auto* prep_cmd = app.add_subcommand("prepare-data", "jitter MNIST IDX files into containers");
    prep_cmd->add_option("--mnist-dir", prep.mnist_dir, "directory with the 4 IDX files")
        ->required();
    prep_cmd->add_option("--seed", prep.seed, "jitter seed");
    prep_cmd->add_option("--mode", prep.mode, "per-epoch | fixed (training set policy)");
    prep_cmd->add_option("--out", prep.out, "output directory")->required();

    GenSpeechArgs speech;
    auto* speech_cmd = app.add_subcommand("gen-speech", "generate the synthetic monophone stand-in");
    speech_cmd->add_option("--seed", speech.seed, "generator seed");
    speech_cmd->add_option("--train-n", speech.train_n, "training examples");
    speech_cmd->add_option("--test-n", speech.test_n, "test examples");
    speech_cmd->add_option("--noise", speech.noise, "noise sigma");
    speech_cmd->add_option("--out", speech.out, "output directory")->required();

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
    train_cmd->add_option("--config", tr.config_path, "config JSON (or a run-manifest to replay)")
        ->required();
    train_cmd->add_option("--train-data", tr.train_data, "training container");
    train_cmd->add_option("--test-data", tr.test_data, "test container");
    train_cmd->add_option("--out", tr.out, "output directory")->required();
    train_cmd->add_option("--resume", tr.resume, "checkpoint to continue from");
    train_cmd->add_option("--model", tr.model, "override: model kind");
    train_cmd->add_option("--lr", tr.lr, "override: learning rate");
    train_cmd->add_option("--batch-size", tr.batch_size, "override: batch size");
    train_cmd->add_option("--phase1-epochs", tr.phase1_epochs, "override: constrained epochs");
    train_cmd->add_option("--phase2-epochs", tr.phase2_epochs, "override: fine-tune epochs");
    train_cmd->add_option("--margin", tr.margin, "override: balancing margin");
    train_cmd->add_option("--seed-init", tr.seed_init, "override: init seed");
    train_cmd->add_option("--seed-data", tr.seed_data, "override: jitter seed");
    train_cmd->add_option("--seed-shuffle", tr.seed_shuffle, "override: shuffle seed");
    train_cmd->add_option("--eval-every", tr.eval_every, "override: eval cadence");
    tr.cmd = train_cmd;

    std::string eval_ckpt, eval_data, eval_out;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint container")->required();
    eval_cmd->add_option("--data", eval_data, "dataset container")->required();
    eval_cmd->add_option("--out", eval_out, "optional output directory");

    std::string grid_spec, grid_train, grid_test, grid_out;
    int grid_jobs = 1;
    auto* grid_cmd = app.add_subcommand("grid", "train the full comparison table");
    grid_cmd->add_option("--table-spec", grid_spec, "grid spec JSON")->required();
    grid_cmd->add_option("--train-data", grid_train, "training container")->required();
    grid_cmd->add_option("--test-data", grid_test, "test container")->required();
    grid_cmd->add_option("--out", grid_out, "output directory")->required();
    grid_cmd->add_option("--jobs", grid_jobs, "parallel cells");

    std::string an_ckpt, an_data, an_out;
    std::size_t an_topk = 9, an_rows = 0, an_cols = 0;
    auto* an_cmd = app.add_subcommand("analyze", "export gating analyses for a checkpoint");
    an_cmd->add_option("--checkpoint", an_ckpt, "checkpoint container")->required();
    an_cmd->add_option("--data", an_data, "dataset container")->required();
    an_cmd->add_option("--out", an_out, "output directory")->required();
    an_cmd->add_option("--topk", an_topk, "examples per expert combination");
    an_cmd->add_option("--img-rows", an_rows, "example image rows (0 = square)");
    an_cmd->add_option("--img-cols", an_cols, "example image cols (0 = square)");

    std::string inspect_path;
    auto* inspect_cmd = app.add_subcommand("inspect-checkpoint", "print a container's manifest");
    inspect_cmd->add_option("--checkpoint", inspect_path, "container file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (prep_cmd->parsed()) return cmd_prepare_data(prep);
        if (speech_cmd->parsed()) return cmd_gen_speech(speech);
        if (train_cmd->parsed()) return cmd_train(tr);
        if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_out);
        if (grid_cmd->parsed()) return cmd_grid(grid_spec, grid_train, grid_test, grid_out, grid_jobs);
        if (an_cmd->parsed()) return cmd_analyze(an_ckpt, an_data, an_out, an_topk, an_rows, an_cols);
        if (inspect_cmd->parsed()) return cmd_inspect(inspect_path);
    } catch (const dmoe::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const dmoe::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitOk;
}
