#pragma once

// Plain-file outputs: RFC-4180-style CSV with 12 significant digits, binary
// PGM (P5) heatmaps with a sidecar recording the linear scale, grid tiling,
// and an FNV-1a checksum for reproducibility reports.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dmoe/matrix.hpp"

namespace dmoe {

std::string format_g12(double v);

// Header row then one line per matrix row. `row_labels`, when nonempty, adds
// a leading label column (its header must already be in `header`).
void write_csv(const std::string& path, const std::vector<std::string>& header, const Matrix& m,
               const std::vector<std::string>& row_labels = {});
void write_csv_rows(const std::string& path, const std::vector<std::string>& header,
                    const std::vector<std::vector<std::string>>& rows);

// Numeric cells of a CSV written by write_csv (skips the header and an
// optional leading label column).
Matrix read_csv_matrix(const std::string& path, bool has_row_labels = false);

// P5, maxval 255, values scaled linearly from [min, max]; the scale lands in
// "<path>.scale.csv". A constant matrix maps to all zeros.
void write_pgm(const std::string& path, const Matrix& m);

// Tile equally-sized cells into one image with 1-pixel separators of the
// given value. Missing cells (fewer than rows*cols) stay at sep_value.
Matrix tile_grid(const std::vector<Matrix>& cells, std::size_t grid_rows, std::size_t grid_cols,
                 double sep_value);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t fnv1a64_file(const std::string& path);

void ensure_dir(const std::string& path);
void write_text_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);

}  // namespace dmoe
