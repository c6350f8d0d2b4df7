#include "dmoe/container.hpp"

#include <cstring>
#include <fstream>

#include "dmoe/errors.hpp"

namespace dmoe {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'C', '1'};
constexpr std::uint32_t kVersion = 1;

std::size_t dtype_size(SectionType t) {
    switch (t) {
        case SectionType::f64: return 8;
        case SectionType::u8: return 1;
        case SectionType::i32: return 4;
    }
    return 0;
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;
    std::string path;

    void need(std::size_t n) const {
        if (pos + n > buf.size())
            throw DataError(path + ": truncated container at offset " + std::to_string(pos));
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint16_t u16() {
        need(2);
        const std::uint16_t v =
            static_cast<std::uint16_t>(buf[pos] | (std::uint16_t(buf[pos + 1]) << 8));
        pos += 2;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return buf[pos++];
    }
    std::vector<std::uint8_t> bytes(std::size_t n) {
        need(n);
        std::vector<std::uint8_t> v(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                                    buf.begin() + static_cast<std::ptrdiff_t>(pos + n));
        pos += n;
        return v;
    }
};

}  // namespace

const Section& Container::require(const std::string& name) const {
    for (const auto& s : sections)
        if (s.name == name) return s;
    throw DataError("container: missing section '" + name + "'");
}

bool Container::has(const std::string& name) const {
    for (const auto& s : sections)
        if (s.name == name) return true;
    return false;
}

void Container::add_f64(const std::string& name, const Matrix& m) {
    Section s;
    s.name = name;
    s.dtype = SectionType::f64;
    s.rows = m.rows;
    s.cols = m.cols;
    s.bytes.reserve(m.size() * 8);
    for (double v : m.data) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_u64(s.bytes, bits);
    }
    sections.push_back(std::move(s));
}

Matrix Container::get_f64(const std::string& name) const {
    const Section& s = require(name);
    if (s.dtype != SectionType::f64)
        throw DataError("container: section '" + name + "' is not f64");
    Matrix m(s.rows, s.cols);
    for (std::size_t i = 0; i < m.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= std::uint64_t(s.bytes[i * 8 + b]) << (8 * b);
        std::memcpy(&m.data[i], &bits, 8);
    }
    return m;
}

void Container::add_u8(const std::string& name, std::uint64_t rows, std::uint64_t cols,
                       std::span<const std::uint8_t> data) {
    Section s;
    s.name = name;
    s.dtype = SectionType::u8;
    s.rows = rows;
    s.cols = cols;
    s.bytes.assign(data.begin(), data.end());
    sections.push_back(std::move(s));
}

void Container::add_i32(const std::string& name, std::uint64_t rows, std::uint64_t cols,
                        std::span<const std::int32_t> data) {
    Section s;
    s.name = name;
    s.dtype = SectionType::i32;
    s.rows = rows;
    s.cols = cols;
    s.bytes.reserve(data.size() * 4);
    for (std::int32_t v : data) put_u32(s.bytes, static_cast<std::uint32_t>(v));
    sections.push_back(std::move(s));
}

std::vector<std::int32_t> Container::get_i32(const std::string& name) const {
    const Section& s = require(name);
    if (s.dtype != SectionType::i32)
        throw DataError("container: section '" + name + "' is not i32");
    std::vector<std::int32_t> out(s.rows * s.cols);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= std::uint32_t(s.bytes[i * 4 + b]) << (8 * b);
        out[i] = static_cast<std::int32_t>(v);
    }
    return out;
}

void Container::save(const std::string& path) const {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    const std::string manifest_str = manifest.dump();
    put_u64(out, manifest_str.size());
    out.insert(out.end(), manifest_str.begin(), manifest_str.end());
    put_u32(out, static_cast<std::uint32_t>(sections.size()));
    for (const auto& s : sections) {
        put_u16(out, static_cast<std::uint16_t>(s.name.size()));
        out.insert(out.end(), s.name.begin(), s.name.end());
        out.push_back(static_cast<std::uint8_t>(s.dtype));
        put_u64(out, s.rows);
        put_u64(out, s.cols);
        if (s.bytes.size() != s.rows * s.cols * dtype_size(s.dtype))
            throw DataError("container: section '" + s.name + "' payload size mismatch");
        out.insert(out.end(), s.bytes.begin(), s.bytes.end());
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError(path + ": cannot open for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError(path + ": write failed");
}

Container Container::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(path + ": cannot open");
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
    Reader r{buf, 0, path};
    const auto magic = r.bytes(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0)
        throw DataError(path + ": bad container magic, expected 'DMC1'");
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw DataError(path + ": unsupported container version " + std::to_string(version));
    Container c;
    const std::uint64_t mlen = r.u64();
    const auto mbytes = r.bytes(mlen);
    c.manifest = nlohmann::json::parse(mbytes.begin(), mbytes.end(), nullptr, false);
    if (c.manifest.is_discarded()) throw DataError(path + ": manifest is not valid JSON");
    const std::uint32_t nsec = r.u32();
    for (std::uint32_t i = 0; i < nsec; ++i) {
        Section s;
        const std::uint16_t nlen = r.u16();
        const auto nbytes = r.bytes(nlen);
        s.name.assign(nbytes.begin(), nbytes.end());
        const std::uint8_t dt = r.u8();
        if (dt > 2) throw DataError(path + ": unknown section dtype " + std::to_string(dt));
        s.dtype = static_cast<SectionType>(dt);
        s.rows = r.u64();
        s.cols = r.u64();
        s.bytes = r.bytes(s.rows * s.cols * dtype_size(s.dtype));
        c.sections.push_back(std::move(s));
    }
    return c;
}

nlohmann::json arch_to_json(const Arch& a) {
    return {{"input_dim", a.input_dim},     {"classes", a.classes},
            {"experts1", a.experts1},       {"hidden1", a.hidden1},
            {"experts2", a.experts2},       {"hidden2", a.hidden2},
            {"gate_hidden1", a.gate_hidden1}, {"gate_hidden2", a.gate_hidden2}};
}

Arch arch_from_json(const nlohmann::json& j) {
    Arch a;
    a.input_dim = j.at("input_dim").get<std::size_t>();
    a.classes = j.at("classes").get<std::size_t>();
    a.experts1 = j.at("experts1").get<std::size_t>();
    a.hidden1 = j.at("hidden1").get<std::size_t>();
    a.experts2 = j.at("experts2").get<std::size_t>();
    a.hidden2 = j.at("hidden2").get<std::size_t>();
    a.gate_hidden1 = j.at("gate_hidden1").get<std::size_t>();
    a.gate_hidden2 = j.at("gate_hidden2").get<std::size_t>();
    return a;
}

namespace {

Matrix vec_to_matrix(const std::vector<double>& v) {
    Matrix m(1, v.size());
    m.data = v;
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& m, const AssignmentTracker& tracker,
                     std::uint64_t epoch, int phase, const nlohmann::json& extra) {
    Container c;
    c.manifest = {{"kind", "checkpoint"},
                  {"model_kind", to_string(m.kind)},
                  {"arch", arch_to_json(m.arch)},
                  {"epoch", epoch},
                  {"phase", phase},
                  {"tracker",
                   {{"margin", tracker.margin}, {"active", tracker.active}, {"steps", tracker.steps}}}};
    if (!extra.is_null() && !extra.empty()) c.manifest["extra"] = extra;
    for (auto& [name, mat] : param_list(m)) c.add_f64("param/" + name, *mat);
    for (int layer = 0; layer < 2; ++layer) {
        c.add_f64("tracker/totals" + std::to_string(layer),
                  vec_to_matrix(tracker.totals[static_cast<std::size_t>(layer)]));
        c.add_f64("tracker/comp" + std::to_string(layer),
                  vec_to_matrix(tracker.comp[static_cast<std::size_t>(layer)]));
    }
    c.save(path);
}

Checkpoint load_checkpoint(const std::string& path) {
    const Container c = Container::load(path);
    if (c.manifest.value("kind", "") != "checkpoint")
        throw DataError(path + ": not a checkpoint container");
    Checkpoint ck;
    ck.manifest = c.manifest;
    const ModelKind kind = model_kind_from_string(c.manifest.at("model_kind").get<std::string>());
    const Arch arch = arch_from_json(c.manifest.at("arch"));
    ck.model = shape_model(kind, arch);
    for (auto& [name, mat] : param_list(ck.model)) {
        Matrix loaded = c.get_f64("param/" + name);
        if (!loaded.same_shape(*mat))
            throw DataError(path + ": section param/" + name + " has shape " +
                            std::to_string(loaded.rows) + "x" + std::to_string(loaded.cols) +
                            ", expected " + std::to_string(mat->rows) + "x" +
                            std::to_string(mat->cols));
        *mat = std::move(loaded);
    }
    ck.epoch = c.manifest.at("epoch").get<std::uint64_t>();
    ck.phase = c.manifest.at("phase").get<int>();
    const auto& tj = c.manifest.at("tracker");
    ck.tracker = AssignmentTracker(0, 0, tj.at("margin").get<double>());
    ck.tracker.active = tj.at("active").get<bool>();
    ck.tracker.steps = tj.at("steps").get<std::uint64_t>();
    for (int layer = 0; layer < 2; ++layer) {
        ck.tracker.totals[static_cast<std::size_t>(layer)] =
            c.get_f64("tracker/totals" + std::to_string(layer)).data;
        ck.tracker.comp[static_cast<std::size_t>(layer)] =
            c.get_f64("tracker/comp" + std::to_string(layer)).data;
    }
    return ck;
}

void save_dataset(const std::string& path, const LabeledDataset& ds) {
    Container c;
    c.manifest = {{"kind", "dataset"},
                  {"dim", ds.dim},
                  {"stored_dim", ds.stored_dim},
                  {"classes", ds.classes},
                  {"n", ds.size()},
                  {"is_image", ds.is_image}};
    if (ds.jitter_info) {
        c.manifest["jitter"] = {{"max_offset", ds.jitter_info->max_offset},
                                {"canvas", ds.jitter_info->canvas},
                                {"source", ds.jitter_info->source},
                                {"seed", ds.jitter_info->seed},
                                {"per_epoch", ds.per_epoch}};
    }
    if (ds.is_image)
        c.add_u8("inputs", ds.size(), ds.stored_dim, ds.pixels);
    else {
        Matrix vals(ds.size(), ds.stored_dim);
        vals.data = ds.values;
        c.add_f64("inputs", vals);
    }
    c.add_i32("labels", ds.size(), 1, ds.labels);
    if (ds.has_offsets()) {
        std::vector<std::int32_t> flat;
        flat.reserve(ds.size() * 2);
        for (const auto& o : ds.offsets) {
            flat.push_back(o[0]);
            flat.push_back(o[1]);
        }
        c.add_i32("offsets", ds.size(), 2, flat);
    }
    c.save(path);
}

LabeledDataset load_dataset(const std::string& path) {
    const Container c = Container::load(path);
    if (c.manifest.value("kind", "") != "dataset")
        throw DataError(path + ": not a dataset container");
    LabeledDataset ds;
    ds.dim = c.manifest.at("dim").get<std::size_t>();
    ds.stored_dim = c.manifest.at("stored_dim").get<std::size_t>();
    ds.classes = c.manifest.at("classes").get<std::size_t>();
    ds.is_image = c.manifest.at("is_image").get<bool>();
    if (c.manifest.contains("jitter")) {
        const auto& aj = c.manifest.at("jitter");
        JitterSpec spec;
        spec.max_offset = aj.at("max_offset").get<int>();
        spec.canvas = aj.at("canvas").get<int>();
        spec.source = aj.at("source").get<int>();
        spec.seed = aj.at("seed").get<std::uint64_t>();
        ds.jitter_info = spec;
        ds.per_epoch = aj.value("per_epoch", false);
    }
    const Section& in = c.require("inputs");
    if (ds.is_image) {
        if (in.dtype != SectionType::u8) throw DataError(path + ": image inputs must be u8");
        ds.pixels = in.bytes;
    } else {
        ds.values = c.get_f64("inputs").data;
    }
    ds.labels = c.get_i32("labels");
    const std::size_t n = c.manifest.at("n").get<std::size_t>();
    if (ds.labels.size() != n)
        throw DataError(path + ": label count " + std::to_string(ds.labels.size()) +
                        " does not match manifest n " + std::to_string(n));
    if (c.has("offsets")) {
        const auto flat = c.get_i32("offsets");
        ds.offsets.resize(n);
        for (std::size_t i = 0; i < n; ++i) ds.offsets[i] = {flat[2 * i], flat[2 * i + 1]};
    }
    return ds;
}

}  // namespace dmoe
