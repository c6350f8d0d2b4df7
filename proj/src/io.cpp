#include "dmoe/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dmoe/errors.hpp"

namespace dmoe {

std::string format_g12(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

namespace {

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream f(path, mode);
    if (!f) throw DataError(path + ": cannot open for writing");
    return f;
}

std::string join_csv(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) line += ',';
        line += cells[i];
    }
    return line;
}

}  // namespace

void write_csv_rows(const std::string& path, const std::vector<std::string>& header,
                    const std::vector<std::vector<std::string>>& rows) {
    auto f = open_out(path);
    f << join_csv(header) << "\r\n";
    for (const auto& row : rows) f << join_csv(row) << "\r\n";
    if (!f) throw DataError(path + ": write failed");
}

void write_csv(const std::string& path, const std::vector<std::string>& header, const Matrix& m,
               const std::vector<std::string>& row_labels) {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) {
        std::vector<std::string> row;
        if (!row_labels.empty()) row.push_back(row_labels.at(r));
        for (std::size_t c = 0; c < m.cols; ++c) row.push_back(format_g12(m(r, c)));
        rows.push_back(std::move(row));
    }
    write_csv_rows(path, header, rows);
}

Matrix read_csv_matrix(const std::string& path, bool has_row_labels) {
    std::ifstream f(path);
    if (!f) throw DataError(path + ": cannot open");
    std::string line;
    std::vector<std::vector<double>> rows;
    bool first = true;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (first) {
            first = false;  // header
            continue;
        }
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        bool skip = has_row_labels;
        while (std::getline(ss, cell, ',')) {
            if (skip) {
                skip = false;
                continue;
            }
            row.push_back(std::stod(cell));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != m.cols) throw DataError(path + ": ragged CSV rows");
        for (std::size_t c = 0; c < m.cols; ++c) m(r, c) = rows[r][c];
    }
    return m;
}

void write_pgm(const std::string& path, const Matrix& m) {
    double lo = m.data.empty() ? 0.0 : m.data[0];
    double hi = lo;
    for (double v : m.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double range = hi - lo;
    auto f = open_out(path, std::ios::binary);
    f << "P5\n" << m.cols << " " << m.rows << "\n255\n";
    std::vector<std::uint8_t> bytes(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double scaled = range > 0.0 ? (m.data[i] - lo) / range * 255.0 : 0.0;
        bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(scaled, 0.0, 255.0)));
    }
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError(path + ": write failed");
    write_csv_rows(path + ".scale.csv", {"min", "max"}, {{format_g12(lo), format_g12(hi)}});
}

Matrix tile_grid(const std::vector<Matrix>& cells, std::size_t grid_rows, std::size_t grid_cols,
                 double sep_value) {
    if (cells.empty() || grid_rows == 0 || grid_cols == 0)
        throw ConfigError("tile_grid: empty grid");
    const std::size_t ch = cells[0].rows, cw = cells[0].cols;
    for (const auto& c : cells)
        if (c.rows != ch || c.cols != cw) throw ConfigError("tile_grid: unequal cell sizes");
    Matrix out(grid_rows * ch + grid_rows - 1, grid_cols * cw + grid_cols - 1, sep_value);
    for (std::size_t i = 0; i < cells.size() && i < grid_rows * grid_cols; ++i) {
        const std::size_t gr = i / grid_cols, gc = i % grid_cols;
        const std::size_t r0 = gr * (ch + 1), c0 = gc * (cw + 1);
        for (std::size_t r = 0; r < ch; ++r)
            for (std::size_t c = 0; c < cw; ++c) out(r0 + r, c0 + c) = cells[i](r, c);
    }
    return out;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(path + ": cannot open");
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
    return fnv1a64(buf);
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw DataError(path + ": cannot create directory: " + ec.message());
}

void write_text_file(const std::string& path, const std::string& contents) {
    auto f = open_out(path, std::ios::binary);
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) throw DataError(path + ": write failed");
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(path + ": cannot open");
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace dmoe
