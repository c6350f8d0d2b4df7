#include "dmoe/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "dmoe/errors.hpp"
#include "dmoe/io.hpp"

namespace dmoe {

namespace {

constexpr std::size_t kChunk = 512;

// Runs the model over the dataset in chunks and hands each chunk's trace plus
// the absolute example offset to the visitor.
template <typename F>
void scan_dataset(const Model& m, const LabeledDataset& ds, F&& visit) {
    if (ds.dim != m.arch.input_dim)
        throw ConfigError("analysis: dataset dim does not match model input");
    Matrix X;
    ForwardTrace trace;
    std::vector<std::uint32_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += kChunk) {
        const std::size_t b = std::min(kChunk, ds.size() - start);
        idx.resize(b);
        for (std::size_t i = 0; i < b; ++i) idx[i] = static_cast<std::uint32_t>(start + i);
        materialize_batch(ds, idx, 0, X);
        forward_into(trace, m, X, nullptr);
        visit(trace, start, b);
    }
}

}  // namespace

GatingStats gating_stats(const Model& m, const LabeledDataset& ds) {
    const std::size_t gates[2] = {m.num_gates1(), m.num_gates2()};
    if (gates[0] == 0) throw ConfigError("gating_stats: model has no gating network");
    const bool translated = ds.has_offsets();
    int max_off = 4;
    if (ds.jitter_info) max_off = ds.jitter_info->max_offset;
    const int side = 2 * max_off + 1;

    GatingStats stats;
    for (int layer = 0; layer < 2; ++layer) {
        if (gates[layer] == 0) continue;
        GatingLayerStats ls;
        ls.by_class.resize(gates[layer], ds.classes);
        ls.class_counts.assign(ds.classes, 0);
        if (translated) {
            ls.by_translation.resize(gates[layer], static_cast<std::size_t>(side) * side);
            ls.translation_counts.assign(static_cast<std::size_t>(side) * side, 0);
            ls.grid_side = side;
            ls.has_translation = true;
        }
        stats.layers.push_back(std::move(ls));
    }

    scan_dataset(m, ds, [&](const ForwardTrace& t, std::size_t start, std::size_t b) {
        for (std::size_t layer = 0; layer < stats.layers.size(); ++layer) {
            const Matrix& G = layer == 0 ? t.G1 : t.G2;
            GatingLayerStats& ls = stats.layers[layer];
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t ex = start + i;
                const auto cls = static_cast<std::size_t>(ds.labels[ex]);
                if (layer == 0) ++ls.class_counts[cls];
                for (std::size_t g = 0; g < G.cols; ++g) ls.by_class(g, cls) += G(i, g);
                if (ls.has_translation) {
                    const auto [dx, dy] = ds.offsets[ex];
                    const auto cell = static_cast<std::size_t>((dy + max_off) * side +
                                                               (dx + max_off));
                    if (layer == 0) ++ls.translation_counts[cell];
                    for (std::size_t g = 0; g < G.cols; ++g) ls.by_translation(g, cell) += G(i, g);
                }
            }
        }
    });

    // class/translation counts are identical across layers; normalize sums
    for (std::size_t layer = 0; layer < stats.layers.size(); ++layer) {
        GatingLayerStats& ls = stats.layers[layer];
        const auto& counts0 = stats.layers[0];
        if (layer > 0) {
            ls.class_counts = counts0.class_counts;
            ls.translation_counts = counts0.translation_counts;
        }
        for (std::size_t c = 0; c < ls.by_class.cols; ++c) {
            const std::size_t cnt = ls.class_counts[c];
            if (cnt == 0) continue;
            for (std::size_t g = 0; g < ls.by_class.rows; ++g)
                ls.by_class(g, c) /= static_cast<double>(cnt);
        }
        if (ls.has_translation)
            for (std::size_t c = 0; c < ls.by_translation.cols; ++c) {
                const std::size_t cnt = ls.translation_counts[c];
                if (cnt == 0) continue;
                for (std::size_t g = 0; g < ls.by_translation.rows; ++g)
                    ls.by_translation(g, c) /= static_cast<double>(cnt);
            }
    }
    return stats;
}

JointAssignment joint_assignment(const Model& m, const LabeledDataset& ds) {
    const std::size_t N = m.num_gates1(), M = m.num_gates2();
    if (N == 0 || M == 0)
        throw ConfigError("joint_assignment: model must have two gating layers");
    JointAssignment ja;
    ja.raw.resize(N, M);
    scan_dataset(m, ds, [&](const ForwardTrace& t, std::size_t, std::size_t b) {
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t a = 0; a < N; ++a) {
                const double g1 = t.G1(i, a);
                for (std::size_t c = 0; c < M; ++c) ja.raw(a, c) += g1 * t.G2(i, c);
            }
    });
    for (double& v : ja.raw.data) v /= static_cast<double>(ds.size());
    ja.conditional = ja.raw;
    ja.zero_rows.assign(N, 0);
    for (std::size_t a = 0; a < N; ++a) {
        double s = 0.0;
        for (std::size_t c = 0; c < M; ++c) s += ja.conditional(a, c);
        if (s <= 0.0) {
            ja.zero_rows[a] = 1;
            continue;
        }
        for (std::size_t c = 0; c < M; ++c) ja.conditional(a, c) /= s;
    }
    return ja;
}

std::vector<std::vector<TopkCell>> topk_per_combination(const Model& m, const LabeledDataset& ds,
                                                        std::size_t k) {
    if (k < 1) throw ConfigError("topk_per_combination: k must be >= 1");
    const std::size_t N = m.num_gates1(), M = m.num_gates2();
    if (N == 0 || M == 0)
        throw ConfigError("topk_per_combination: model must have two gating layers");
    // score(i,j,x) = g1_i(x) * g2_j(z1)
    std::vector<std::vector<std::pair<double, std::uint32_t>>> all(N * M);
    scan_dataset(m, ds, [&](const ForwardTrace& t, std::size_t start, std::size_t b) {
        for (std::size_t i = 0; i < b; ++i) {
            const auto ex = static_cast<std::uint32_t>(start + i);
            for (std::size_t a = 0; a < N; ++a)
                for (std::size_t c = 0; c < M; ++c)
                    all[a * M + c].emplace_back(t.G1(i, a) * t.G2(i, c), ex);
        }
    });
    std::vector<std::vector<TopkCell>> out(N, std::vector<TopkCell>(M));
    for (std::size_t a = 0; a < N; ++a)
        for (std::size_t c = 0; c < M; ++c) {
            auto& scores = all[a * M + c];
            const std::size_t take = std::min(k, scores.size());
            // descending score, ties broken by lower example index
            std::partial_sort(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(take),
                              scores.end(), [](const auto& x, const auto& y) {
                                  if (x.first != y.first) return x.first > y.first;
                                  return x.second < y.second;
                              });
            TopkCell& cell = out[a][c];
            for (std::size_t i = 0; i < take; ++i) {
                cell.scores.push_back(scores[i].first);
                cell.examples.push_back(scores[i].second);
            }
        }
    return out;
}

namespace {

double mean_row_variance(const Matrix& m, const std::vector<std::size_t>& counts) {
    // variance across populated columns of each row, averaged over rows
    double acc = 0.0;
    for (std::size_t r = 0; r < m.rows; ++r) {
        double sum = 0.0, sq = 0.0;
        std::size_t n = 0;
        for (std::size_t c = 0; c < m.cols; ++c) {
            if (!counts.empty() && counts[c] == 0) continue;
            sum += m(r, c);
            sq += m(r, c) * m(r, c);
            ++n;
        }
        if (n == 0) continue;
        const double mean = sum / static_cast<double>(n);
        acc += sq / static_cast<double>(n) - mean * mean;
    }
    return m.rows ? acc / static_cast<double>(m.rows) : 0.0;
}

}  // namespace

std::vector<SelectivityScore> factorization_score(const GatingStats& stats) {
    std::vector<SelectivityScore> out;
    for (const auto& ls : stats.layers) {
        SelectivityScore s;
        s.by_class = mean_row_variance(ls.by_class, ls.class_counts);
        if (ls.has_translation)
            s.translation = mean_row_variance(ls.by_translation, ls.translation_counts);
        out.push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// exports

namespace {

std::vector<std::string> numbered_header(const std::string& label, const std::string& stem,
                                         std::size_t n) {
    std::vector<std::string> h = {label};
    for (std::size_t i = 0; i < n; ++i) h.push_back(stem + std::to_string(i));
    return h;
}

std::vector<std::string> expert_labels(std::size_t n) {
    std::vector<std::string> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back("expert" + std::to_string(i));
    return v;
}

}  // namespace

void export_gating_stats(const GatingStats& stats, const std::string& dir) {
    ensure_dir(dir);
    for (std::size_t layer = 0; layer < stats.layers.size(); ++layer) {
        const auto& ls = stats.layers[layer];
        const std::string tag = std::to_string(layer + 1);
        write_csv(dir + "/gating_by_class_layer" + tag + ".csv",
                  numbered_header("expert", "class", ls.by_class.cols), ls.by_class,
                  expert_labels(ls.by_class.rows));
        {
            Matrix counts(1, ls.class_counts.size());
            for (std::size_t i = 0; i < ls.class_counts.size(); ++i)
                counts(0, i) = static_cast<double>(ls.class_counts[i]);
            write_csv(dir + "/gating_class_counts_layer" + tag + ".csv",
                      numbered_header("row", "class", counts.cols), counts, {"count"});
        }
        write_pgm(dir + "/gating_by_class_layer" + tag + ".pgm", ls.by_class);
        if (!ls.has_translation) continue;
        write_csv(dir + "/gating_by_translation_layer" + tag + ".csv",
                  numbered_header("expert", "cell", ls.by_translation.cols), ls.by_translation,
                  expert_labels(ls.by_translation.rows));
        // one square heatmap per expert, tiled side by side
        std::vector<Matrix> maps;
        const auto side = static_cast<std::size_t>(ls.grid_side);
        for (std::size_t g = 0; g < ls.by_translation.rows; ++g) {
            Matrix map(side, side);
            for (std::size_t c = 0; c < ls.by_translation.cols; ++c)
                map.data[c] = ls.by_translation(g, c);
            maps.push_back(std::move(map));
        }
        double hi = 0.0;
        for (const auto& mp : maps)
            for (double v : mp.data) hi = std::max(hi, v);
        write_pgm(dir + "/gating_by_translation_layer" + tag + ".pgm",
                  tile_grid(maps, 1, maps.size(), hi));
    }
}

void export_joint_assignment(const JointAssignment& ja, const std::string& dir) {
    ensure_dir(dir);
    write_csv(dir + "/joint_assignment_raw.csv",
              numbered_header("l1_expert", "l2_expert", ja.raw.cols), ja.raw,
              expert_labels(ja.raw.rows));
    write_csv(dir + "/joint_assignment_conditional.csv",
              numbered_header("l1_expert", "l2_expert", ja.conditional.cols), ja.conditional,
              expert_labels(ja.conditional.rows));
    write_pgm(dir + "/joint_assignment_conditional.pgm", ja.conditional);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < ja.zero_rows.size(); ++i)
        rows.push_back({"expert" + std::to_string(i), ja.zero_rows[i] ? "1" : "0"});
    write_csv_rows(dir + "/joint_assignment_zero_rows.csv", {"l1_expert", "zero_mass"}, rows);
}

void export_factorization(const std::vector<SelectivityScore>& scores, const std::string& dir) {
    ensure_dir(dir);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t layer = 0; layer < scores.size(); ++layer)
        rows.push_back({"layer" + std::to_string(layer + 1), format_g12(scores[layer].translation),
                        format_g12(scores[layer].by_class)});
    write_csv_rows(dir + "/factorization_scores.csv",
                   {"layer", "translation_selectivity", "class_selectivity"}, rows);
}

void export_topk_grid(const Model& m, const LabeledDataset& ds, std::size_t k,
                      const std::string& dir, std::size_t img_rows, std::size_t img_cols) {
    ensure_dir(dir);
    const auto cells = topk_per_combination(m, ds, k);
    const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(k))));
    if (img_rows == 0 || img_cols == 0) {
        const auto s = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(ds.dim))));
        if (s * s != ds.dim)
            throw ConfigError("export_topk_grid: dim " + std::to_string(ds.dim) +
                              " is not square; pass explicit image rows/cols");
        img_rows = img_cols = s;
    }
    if (img_rows * img_cols != ds.dim)
        throw ConfigError("export_topk_grid: image shape does not match input dimension");
    std::vector<Matrix> tiles;
    std::vector<std::vector<std::string>> index_rows;
    std::vector<double> buf(ds.dim);
    for (std::size_t a = 0; a < cells.size(); ++a)
        for (std::size_t c = 0; c < cells[a].size(); ++c) {
            std::vector<Matrix> imgs;
            for (std::size_t i = 0; i < cells[a][c].examples.size(); ++i) {
                const std::uint32_t ex = cells[a][c].examples[i];
                ds.copy_input(ex, 0, buf.data());
                Matrix img(img_rows, img_cols);
                img.data.assign(buf.begin(), buf.end());
                imgs.push_back(std::move(img));
                index_rows.push_back({std::to_string(a), std::to_string(c), std::to_string(i),
                                      std::to_string(ex), format_g12(cells[a][c].scores[i])});
            }
            tiles.push_back(tile_grid(imgs, side, side, 1.0));
        }
    write_pgm(dir + "/topk_grid.pgm",
              tile_grid(tiles, cells.size(), cells.empty() ? 0 : cells[0].size(), 1.0));
    write_csv_rows(dir + "/topk_examples.csv",
                   {"l1_expert", "l2_expert", "rank", "example", "score"}, index_rows);
}

}  // namespace dmoe
