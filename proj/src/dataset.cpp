#include "dmoe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dmoe/errors.hpp"

namespace dmoe {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::string hex32(std::uint32_t v) {
    char buf[11];
    std::snprintf(buf, sizeof(buf), "0x%08x", v);
    return buf;
}

std::uint32_t read_be32(std::ifstream& in, const std::string& path, std::size_t offset) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in)
        throw DataError(path + ": truncated while reading 4 bytes at offset " +
                        std::to_string(offset));
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
    const unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

void check_jitter_spec(const JitterSpec& s) {
    if (s.canvas != s.source + 2 * s.max_offset)
        throw ConfigError("jitter: canvas " + std::to_string(s.canvas) + " must equal source " +
                          std::to_string(s.source) + " + 2*max_offset");
}

void check_offset(const JitterSpec& s, int dx, int dy) {
    if (std::abs(dx) > s.max_offset || std::abs(dy) > s.max_offset)
        throw ConfigError("jitter: offset (" + std::to_string(dx) + "," + std::to_string(dy) +
                          ") exceeds max_offset " + std::to_string(s.max_offset));
}

}  // namespace

void LabeledDataset::copy_input(std::size_t i, std::uint64_t epoch, double* out) const {
    if (augmented()) {
        const auto [dx, dy] = jitter_offset(*jitter_info, i, epoch);
        const int src = jitter_info->source, canvas = jitter_info->canvas,
                  m = jitter_info->max_offset;
        std::fill(out, out + static_cast<std::size_t>(canvas) * canvas, 0.0);
        const std::uint8_t* base = pixels.data() + i * stored_dim;
        for (int r = 0; r < src; ++r) {
            const int cr = m + dy + r;
            double* dst = out + static_cast<std::size_t>(cr) * canvas + (m + dx);
            const std::uint8_t* srcrow = base + static_cast<std::size_t>(r) * src;
            for (int c = 0; c < src; ++c) dst[c] = srcrow[c] / 255.0;
        }
        return;
    }
    if (is_image) {
        const std::uint8_t* base = pixels.data() + i * stored_dim;
        for (std::size_t c = 0; c < stored_dim; ++c) out[c] = base[c] / 255.0;
    } else {
        const double* base = values.data() + i * stored_dim;
        std::copy(base, base + stored_dim, out);
    }
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw DataError(images_path + ": cannot open");
    const std::uint32_t magic = read_be32(img, images_path, 0);
    if (magic != kImageMagic)
        throw DataError(images_path + ": bad magic " + hex32(magic) + " at offset 0, expected 0x00000803");
    const std::uint32_t n = read_be32(img, images_path, 4);
    const std::uint32_t rows = read_be32(img, images_path, 8);
    const std::uint32_t cols = read_be32(img, images_path, 12);
    LabeledDataset ds;
    ds.is_image = true;
    ds.stored_dim = static_cast<std::size_t>(rows) * cols;
    ds.dim = ds.stored_dim;
    ds.pixels.resize(static_cast<std::size_t>(n) * ds.stored_dim);
    img.read(reinterpret_cast<char*>(ds.pixels.data()),
             static_cast<std::streamsize>(ds.pixels.size()));
    if (!img)
        throw DataError(images_path + ": truncated pixel payload at offset " +
                        std::to_string(16 + img.gcount()));

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw DataError(labels_path + ": cannot open");
    const std::uint32_t lmagic = read_be32(lab, labels_path, 0);
    if (lmagic != kLabelMagic)
        throw DataError(labels_path + ": bad magic " + hex32(lmagic) + " at offset 0, expected 0x00000801");
    const std::uint32_t ln = read_be32(lab, labels_path, 4);
    if (ln != n)
        throw DataError(labels_path + ": item count " + std::to_string(ln) +
                        " does not match image count " + std::to_string(n));
    std::vector<std::uint8_t> raw(ln);
    lab.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!lab)
        throw DataError(labels_path + ": truncated label payload at offset " +
                        std::to_string(8 + lab.gcount()));
    ds.labels.reserve(ln);
    std::int32_t max_label = 0;
    for (std::uint8_t v : raw) {
        ds.labels.push_back(v);
        max_label = std::max<std::int32_t>(max_label, v);
    }
    ds.classes = static_cast<std::size_t>(max_label) + 1;
    return ds;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               const LabeledDataset& ds, std::size_t rows, std::size_t cols) {
    if (!ds.is_image || rows * cols != ds.stored_dim)
        throw ConfigError("write_idx: dataset is not image data of the given shape");
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw DataError(images_path + ": cannot open for writing");
    write_be32(img, kImageMagic);
    write_be32(img, static_cast<std::uint32_t>(ds.size()));
    write_be32(img, static_cast<std::uint32_t>(rows));
    write_be32(img, static_cast<std::uint32_t>(cols));
    img.write(reinterpret_cast<const char*>(ds.pixels.data()),
              static_cast<std::streamsize>(ds.pixels.size()));
    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw DataError(labels_path + ": cannot open for writing");
    write_be32(lab, kLabelMagic);
    write_be32(lab, static_cast<std::uint32_t>(ds.size()));
    for (std::int32_t v : ds.labels) {
        const char b = static_cast<char>(v);
        lab.write(&b, 1);
    }
}

std::vector<double> jitter(std::span<const double> image, int dx, int dy, const JitterSpec& spec) {
    check_jitter_spec(spec);
    check_offset(spec, dx, dy);
    if (image.size() != static_cast<std::size_t>(spec.source) * spec.source)
        throw ConfigError("jitter: image size " + std::to_string(image.size()) +
                          " does not match source " + std::to_string(spec.source));
    std::vector<double> out(static_cast<std::size_t>(spec.canvas) * spec.canvas, 0.0);
    const int m = spec.max_offset;
    for (int r = 0; r < spec.source; ++r)
        for (int c = 0; c < spec.source; ++c)
            out[static_cast<std::size_t>(m + dy + r) * spec.canvas + (m + dx + c)] =
                image[static_cast<std::size_t>(r) * spec.source + c];
    return out;
}

std::vector<double> extract_source(std::span<const double> canvas_image, int dx, int dy,
                                   const JitterSpec& spec) {
    check_jitter_spec(spec);
    check_offset(spec, dx, dy);
    if (canvas_image.size() != static_cast<std::size_t>(spec.canvas) * spec.canvas)
        throw ConfigError("extract_source: canvas size mismatch");
    std::vector<double> out(static_cast<std::size_t>(spec.source) * spec.source, 0.0);
    const int m = spec.max_offset;
    for (int r = 0; r < spec.source; ++r)
        for (int c = 0; c < spec.source; ++c)
            out[static_cast<std::size_t>(r) * spec.source + c] =
                canvas_image[static_cast<std::size_t>(m + dy + r) * spec.canvas + (m + dx + c)];
    return out;
}

std::array<std::int32_t, 2> jitter_offset(const JitterSpec& spec, std::uint64_t example,
                                          std::uint64_t epoch) {
    Rng rng = Rng::substream(spec.seed, example, epoch);
    const std::uint64_t span = 2 * static_cast<std::uint64_t>(spec.max_offset) + 1;
    const auto dx = static_cast<std::int32_t>(rng.index(span)) - spec.max_offset;
    const auto dy = static_cast<std::int32_t>(rng.index(span)) - spec.max_offset;
    return {dx, dy};
}

LabeledDataset jitter_dataset(const LabeledDataset& base, const JitterSpec& spec,
                              JitterMode mode) {
    check_jitter_spec(spec);
    if (!base.is_image || base.stored_dim != static_cast<std::size_t>(spec.source) * spec.source)
        throw ConfigError("jitter_dataset: base is not " + std::to_string(spec.source) + "x" +
                          std::to_string(spec.source) + " image data");
    LabeledDataset out;
    out.classes = base.classes;
    out.labels = base.labels;
    out.is_image = true;
    out.dim = static_cast<std::size_t>(spec.canvas) * spec.canvas;
    out.jitter_info = spec;
    if (mode == JitterMode::per_epoch_random) {
        out.stored_dim = base.stored_dim;
        out.pixels = base.pixels;
        out.per_epoch = true;
        return out;
    }
    // fixed_once: draw each example's offset at epoch 0 and bake it in
    out.stored_dim = out.dim;
    out.pixels.assign(base.size() * out.dim, 0);
    out.offsets.resize(base.size());
    const int m = spec.max_offset;
    for (std::size_t i = 0; i < base.size(); ++i) {
        const auto off = jitter_offset(spec, i, 0);
        out.offsets[i] = off;
        const std::uint8_t* src = base.pixels.data() + i * base.stored_dim;
        std::uint8_t* dst = out.pixels.data() + i * out.dim;
        for (int r = 0; r < spec.source; ++r)
            for (int c = 0; c < spec.source; ++c)
                dst[static_cast<std::size_t>(m + off[1] + r) * spec.canvas + (m + off[0] + c)] =
                    src[static_cast<std::size_t>(r) * spec.source + c];
    }
    return out;
}

LabeledDataset synth_monophone(std::size_t n, std::uint64_t seed, double noise_sigma,
                               std::size_t frames, std::size_t bins, std::size_t classes,
                               std::uint64_t first_index) {
    if (n < 1) throw ConfigError("synth_monophone: n must be >= 1");
    const std::size_t d = frames * bins;
    // one smooth template per class: a few gaussian energy bumps over the
    // (frame, bin) plane on a low baseline
    std::vector<std::vector<double>> templates(classes, std::vector<double>(d, 0.05));
    for (std::size_t c = 0; c < classes; ++c) {
        Rng trng = Rng::substream(seed, 0x7e3a91b5u, c);
        const int bumps = 2 + static_cast<int>(trng.index(3));
        for (int b = 0; b < bumps; ++b) {
            const double cf = trng.uniform(0.0, static_cast<double>(frames - 1));
            const double cb = trng.uniform(0.0, static_cast<double>(bins - 1));
            // widths relative to the grid so small test grids stay structured
            const double sf = trng.uniform(0.06, 0.22) * static_cast<double>(frames);
            const double sb = trng.uniform(0.04, 0.15) * static_cast<double>(bins);
            const double amp = trng.uniform(0.45, 0.9);
            for (std::size_t f = 0; f < frames; ++f)
                for (std::size_t k = 0; k < bins; ++k) {
                    const double df = (static_cast<double>(f) - cf) / sf;
                    const double dk = (static_cast<double>(k) - cb) / sb;
                    templates[c][f * bins + k] += amp * std::exp(-0.5 * (df * df + dk * dk));
                }
        }
        for (double& v : templates[c]) v = std::clamp(v, 0.0, 1.0);
    }
    LabeledDataset ds;
    ds.dim = d;
    ds.stored_dim = d;
    ds.classes = classes;
    ds.is_image = false;
    ds.values.resize(n * d);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto label = static_cast<std::int32_t>((first_index + i) % classes);
        ds.labels[i] = label;
        Rng srng = Rng::substream(seed, first_index + i + 1, 0);
        double* out = ds.values.data() + i * d;
        const double* tpl = templates[static_cast<std::size_t>(label)].data();
        for (std::size_t j = 0; j < d; ++j)
            out[j] = std::clamp(tpl[j] + noise_sigma * srng.gaussian(), 0.0, 1.0);
    }
    return ds;
}

void materialize_batch(const LabeledDataset& ds, std::span<const std::uint32_t> idx,
                       std::uint64_t epoch, Matrix& X) {
    X.resize(idx.size(), ds.dim);
    for (std::size_t r = 0; r < idx.size(); ++r) ds.copy_input(idx[r], epoch, X.row(r));
}

}  // namespace dmoe
