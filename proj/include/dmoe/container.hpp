#pragma once

// Single-file binary container used for checkpoints and exported datasets:
// a JSON manifest followed by named little-endian sections. The exact layout
// is documented in docs/formats.md and pinned by a round-trip test.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmoe/balance.hpp"
#include "dmoe/dataset.hpp"
#include "dmoe/matrix.hpp"
#include "dmoe/model.hpp"

namespace dmoe {

enum class SectionType : std::uint8_t { f64 = 0, u8 = 1, i32 = 2 };

struct Section {
    std::string name;
    SectionType dtype = SectionType::f64;
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    std::vector<std::uint8_t> bytes;  // little-endian payload
};

struct Container {
    nlohmann::json manifest;
    std::vector<Section> sections;

    const Section& require(const std::string& name) const;
    bool has(const std::string& name) const;

    void add_f64(const std::string& name, const Matrix& m);
    Matrix get_f64(const std::string& name) const;
    void add_u8(const std::string& name, std::uint64_t rows, std::uint64_t cols,
                std::span<const std::uint8_t> data);
    void add_i32(const std::string& name, std::uint64_t rows, std::uint64_t cols,
                 std::span<const std::int32_t> data);
    std::vector<std::int32_t> get_i32(const std::string& name) const;

    void save(const std::string& path) const;
    static Container load(const std::string& path);
};

nlohmann::json arch_to_json(const Arch& a);
Arch arch_from_json(const nlohmann::json& j);

// Checkpoints carry the model, the assignment tracker (including its Kahan
// compensation terms so resumed runs are bit-exact), and the training phase.
struct Checkpoint {
    Model model;
    AssignmentTracker tracker;
    std::uint64_t epoch = 0;  // epochs completed
    int phase = 1;
    nlohmann::json manifest;
};

void save_checkpoint(const std::string& path, const Model& m, const AssignmentTracker& tracker,
                     std::uint64_t epoch, int phase, const nlohmann::json& extra = {});
Checkpoint load_checkpoint(const std::string& path);

void save_dataset(const std::string& path, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::string& path);

}  // namespace dmoe
