#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dmoe/container.hpp"
#include "dmoe/errors.hpp"
#include "dmoe/io.hpp"

using namespace dmoe;

namespace {

std::string temp_path(const std::string& name) {
    static int counter = 0;
    const auto dir = std::filesystem::temp_directory_path() /
                     ("dmoe_cont_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    return (dir / (std::to_string(counter++) + "_" + name)).string();
}

Arch small_arch() {
    Arch a;
    a.input_dim = 9;
    a.classes = 4;
    a.experts1 = 2;
    a.hidden1 = 5;
    a.experts2 = 3;
    a.hidden2 = 4;
    a.gate_hidden1 = 3;
    a.gate_hidden2 = 3;
    return a;
}

}  // namespace

TEST_CASE("sections round-trip bit exactly") {
    Container c;
    c.manifest = {{"kind", "dataset"}, {"note", 42}};
    Matrix m(3, 5);
    Rng rng(2);
    for (auto& v : m.data) v = rng.uniform(-1e6, 1e6);
    m.data[0] = 0.1;  // not exactly representable; must still round-trip by bits
    c.add_f64("m", m);
    std::vector<std::uint8_t> bytes = {0, 255, 7};
    c.add_u8("b", 3, 1, bytes);
    std::vector<std::int32_t> ints = {-5, 0, 1 << 30};
    c.add_i32("i", 1, 3, ints);

    const auto path = temp_path("round.dmc");
    c.save(path);
    const auto back = Container::load(path);
    CHECK(back.manifest == c.manifest);
    CHECK(back.get_f64("m").data == m.data);
    CHECK(back.require("b").bytes == bytes);
    CHECK(back.get_i32("i") == ints);
    CHECK(back.has("m"));
    CHECK(!back.has("nope"));
    CHECK_THROWS_AS(back.require("nope"), DataError);

    // identical content writes identical bytes
    const auto path2 = temp_path("round2.dmc");
    back.save(path2);
    CHECK(fnv1a64_file(path) == fnv1a64_file(path2));
}

TEST_CASE("load rejects a corrupted container") {
    const auto path = temp_path("bad.dmc");
    write_text_file(path, "not a container at all");
    CHECK_THROWS_AS(Container::load(path), DataError);

    Container c;
    c.manifest = {{"kind", "x"}};
    const auto path2 = temp_path("trunc.dmc");
    Matrix m(64, 64, 1.0);
    c.add_f64("m", m);
    c.save(path2);
    std::filesystem::resize_file(path2, 100);
    CHECK_THROWS_AS(Container::load(path2), DataError);
}

TEST_CASE("checkpoint round trip restores the exact model and tracker") {
    Rng rng(33);
    const Arch a = small_arch();
    Model m = init_model(ModelKind::dmoe, a, rng);
    AssignmentTracker tracker(m.num_gates1(), m.num_gates2(), 0.75);
    for (int k = 0; k < 100; ++k) {
        update_totals(tracker, 0, std::vector<double>{0.3, 0.7});
        update_totals(tracker, 1, std::vector<double>{0.2, 0.3, 0.5});
    }
    const auto path = temp_path("ckpt.dmc");
    save_checkpoint(path, m, tracker, 12, 2, {{"config", {{"lr", 0.1}}}});
    const auto ck = load_checkpoint(path);
    CHECK(ck.epoch == 12);
    CHECK(ck.phase == 2);
    CHECK(ck.model.kind == ModelKind::dmoe);
    auto orig = param_list(m);
    auto loaded = param_list(ck.model);
    REQUIRE(orig.size() == loaded.size());
    for (std::size_t i = 0; i < orig.size(); ++i) {
        CHECK(orig[i].first == loaded[i].first);
        CHECK(orig[i].second->data == loaded[i].second->data);
    }
    CHECK(ck.tracker.margin == tracker.margin);
    CHECK(ck.tracker.steps == tracker.steps);
    CHECK(ck.tracker.active == tracker.active);
    CHECK(ck.tracker.totals == tracker.totals);
    CHECK(ck.tracker.comp == tracker.comp);  // kahan state included
    CHECK(ck.manifest.at("extra").at("config").at("lr") == 0.1);
}

TEST_CASE("dataset containers round trip") {
    SUBCASE("image data with offsets") {
        LabeledDataset ds;
        ds.is_image = true;
        ds.dim = 4;
        ds.stored_dim = 4;
        ds.classes = 2;
        ds.pixels = {1, 2, 3, 4, 5, 6, 7, 8};
        ds.labels = {0, 1};
        ds.offsets = {{-1, 2}, {3, -4}};
        const auto path = temp_path("img.dmc");
        save_dataset(path, ds);
        const auto back = load_dataset(path);
        CHECK(back.pixels == ds.pixels);
        CHECK(back.labels == ds.labels);
        CHECK(back.offsets == ds.offsets);
        CHECK(back.classes == 2);
        CHECK(back.is_image);
    }
    SUBCASE("augmented image data keeps its jitter policy") {
        LabeledDataset ds;
        ds.is_image = true;
        ds.stored_dim = 4;
        ds.dim = 16;
        ds.classes = 2;
        ds.pixels = {9, 8, 7, 6};
        ds.labels = {1};
        JitterSpec spec;
        spec.max_offset = 1;
        spec.source = 2;
        spec.canvas = 4;
        spec.seed = 77;
        ds.jitter_info = spec;
        ds.per_epoch = true;
        const auto path = temp_path("aug.dmc");
        save_dataset(path, ds);
        const auto back = load_dataset(path);
        REQUIRE(back.augmented());
        CHECK(back.jitter_info->seed == 77);
        CHECK(back.dim == 16);
        CHECK(back.stored_dim == 4);
    }
    SUBCASE("dense data round-trips doubles exactly") {
        const auto ds = synth_monophone(13, 5, 0.2);
        const auto path = temp_path("dense.dmc");
        save_dataset(path, ds);
        const auto back = load_dataset(path);
        CHECK(back.values == ds.values);
        CHECK(back.labels == ds.labels);
        CHECK(back.dim == 440);
        CHECK(!back.is_image);
    }
}
