#pragma once

// Labeled dense datasets: IDX (MNIST) parsing, the +/-4 pixel jitter onto a
// 36x36 canvas, and a synthetic spectrogram-style generator standing in for
// proprietary speech data.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmoe/matrix.hpp"
#include "dmoe/rng.hpp"

namespace dmoe {

struct JitterSpec {
    int max_offset = 4;
    int canvas = 36;
    int source = 28;
    std::uint64_t seed = 0;
};

enum class JitterMode { per_epoch_random, fixed_once };

// Image data is stored as raw bytes and scaled to [0,1] on access; dense data
// stores doubles directly. Jittered datasets carry their JitterSpec; in
// per-epoch mode the stored examples stay source-sized and placement happens
// in copy_input with offsets drawn per (example, epoch), so epochs see fresh
// translations and parallel materialization cannot change any draw.
struct LabeledDataset {
    std::size_t dim = 0;  // presented input dimension
    std::size_t stored_dim = 0;
    std::size_t classes = 0;
    bool is_image = false;
    std::vector<std::uint8_t> pixels;  // n * stored_dim when is_image
    std::vector<double> values;        // n * stored_dim otherwise
    std::vector<std::int32_t> labels;
    std::vector<std::array<std::int32_t, 2>> offsets;  // per-example (dx, dy) meta
    std::optional<JitterSpec> jitter_info;
    bool per_epoch = false;  // true: jitter lazily at copy_input time

    std::size_t size() const { return labels.size(); }
    bool has_offsets() const { return offsets.size() == labels.size(); }
    bool augmented() const { return per_epoch && jitter_info.has_value(); }

    // Writes example i scaled to [0,1] into out[0..dim). `epoch` only matters
    // for per-epoch jittered datasets.
    void copy_input(std::size_t i, std::uint64_t epoch, double* out) const;
};

// Big-endian IDX pair (expects image magic 2051 and label magic 2049).
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

// IDX writer for round trips and test fixtures.
void write_idx(const std::string& images_path, const std::string& labels_path,
               const LabeledDataset& ds, std::size_t rows, std::size_t cols);

// Place a source-sized image on a zero canvas with its top-left corner at
// row max_offset + dy, column max_offset + dx. Requires |dx|,|dy| <= max_offset
// and canvas = source + 2 * max_offset.
std::vector<double> jitter(std::span<const double> image, int dx, int dy,
                           const JitterSpec& spec = {});

// Inverse of jitter: cut the source window back out of the canvas.
std::vector<double> extract_source(std::span<const double> canvas_image, int dx, int dy,
                                   const JitterSpec& spec = {});

// The deterministic offset stream: uniform over the (2m+1)^2 grid, keyed by
// (seed, example, epoch). fixed_once datasets use epoch 0.
std::array<std::int32_t, 2> jitter_offset(const JitterSpec& spec, std::uint64_t example,
                                          std::uint64_t epoch);

// fixed_once materializes canvas-sized examples with offset meta; per-epoch
// keeps the bases and defers placement to copy_input.
LabeledDataset jitter_dataset(const LabeledDataset& base, const JitterSpec& spec, JitterMode mode);

// Class-templated spectrogram-like samples: `frames` x `bins` per example,
// one template per class plus gaussian noise, clipped to [0,1]. Labels are
// assigned round-robin so classes stay balanced within one example. The
// templates depend only on `seed`; `first_index` offsets the per-sample noise
// streams so train/test splits share templates but never samples.
LabeledDataset synth_monophone(std::size_t n, std::uint64_t seed, double noise_sigma = 0.1,
                               std::size_t frames = 11, std::size_t bins = 40,
                               std::size_t classes = 40, std::uint64_t first_index = 0);

// Gather rows `idx` (at `epoch` for augmented data) into X, one example per row.
void materialize_batch(const LabeledDataset& ds, std::span<const std::uint32_t> idx,
                       std::uint64_t epoch, Matrix& X);

}  // namespace dmoe
