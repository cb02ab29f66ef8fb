#include "plc2/checkpoint.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unistd.h>

namespace plc2 {

const char* dtype_name(Dtype d) {
    switch (d) {
        case Dtype::F32: return "f32";
        case Dtype::Int4g: return "int4g";
        case Dtype::Fp8e4m3: return "fp8e4m3";
        case Dtype::Fp8e5m2: return "fp8e5m2";
    }
    fail(ErrKind::Format, "bad dtype value");
}

Dtype dtype_from_name(const std::string& s) {
    if (s == "f32") return Dtype::F32;
    if (s == "int4g") return Dtype::Int4g;
    if (s == "fp8e4m3") return Dtype::Fp8e4m3;
    if (s == "fp8e5m2") return Dtype::Fp8e5m2;
    fail(ErrKind::Format, "unknown dtype '" + s + "'");
}

int64_t dtype_data_bytes(Dtype d, int64_t numel) {
    switch (d) {
        case Dtype::F32: return numel * 4;
        case Dtype::Int4g: return (numel + 1) / 2;  // two codes per byte
        case Dtype::Fp8e4m3:
        case Dtype::Fp8e5m2: return numel;
    }
    fail(ErrKind::Format, "bad dtype value");
}

Tensor TensorEntry::as_f32() const {
    check(dtype == Dtype::F32, ErrKind::Format, "as_f32 on non-f32 tensor");
    check(static_cast<int64_t>(data.size()) == numel() * 4, ErrKind::Integrity,
          "f32 tensor byte size mismatch");
    Tensor t(shape);
    std::memcpy(t.data.data(), data.data(), data.size());
    return t;
}

TensorEntry TensorEntry::from_f32(const Tensor& t) {
    TensorEntry e;
    e.dtype = Dtype::F32;
    e.shape = t.shape;
    e.data.resize(t.data.size() * 4);
    std::memcpy(e.data.data(), t.data.data(), e.data.size());
    return e;
}

uint32_t crc32(const void* data, size_t len, uint32_t crc) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; i++) {
            uint32_t c = i;
            for (int k = 0; k < 8; k++) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    const uint8_t* p = static_cast<const uint8_t*>(data);
    uint32_t c = crc ^ 0xffffffffu;
    for (size_t i = 0; i < len; i++) c = table[(c ^ p[i]) & 0xff] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

namespace {

constexpr int64_t kAlign = 64;

int64_t align_up(int64_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

struct Region {
    int64_t offset = 0;
    int64_t length = 0;
};

// expected sideband sizes in floats, by dtype and shape
void expected_sideband(const TensorEntry& e, int64_t* n_scales, int64_t* n_zeros) {
    *n_scales = 0;
    *n_zeros = 0;
    if (e.dtype == Dtype::Int4g) {
        check(e.shape.size() == 2, ErrKind::Format, "int4g tensors must be 2-D");
        check(e.group_size >= 1, ErrKind::Format, "int4g tensor missing group_size");
        int64_t rows = e.shape[0], cols = e.shape[1];
        int64_t groups = (cols + e.group_size - 1) / e.group_size;
        *n_scales = rows * groups;
        *n_zeros = rows * groups;
    } else if (e.dtype == Dtype::Fp8e4m3 || e.dtype == Dtype::Fp8e5m2) {
        *n_scales = 1;
    }
}

void validate_entry(const std::string& name, const TensorEntry& e) {
    int64_t numel = 1;
    for (int64_t d : e.shape) {
        check(d >= 0 && d <= (int64_t)1 << 32, ErrKind::Format,
              "tensor '" + name + "' has an out-of-range dimension");
        numel *= d;
        check(numel <= (int64_t)1 << 40, ErrKind::Format, "tensor '" + name + "' is too large");
    }
    check(static_cast<int64_t>(e.data.size()) == dtype_data_bytes(e.dtype, numel),
          ErrKind::Format, "tensor '" + name + "' data size does not match shape/dtype");
    int64_t n_scales = 0, n_zeros = 0;
    expected_sideband(e, &n_scales, &n_zeros);
    check(static_cast<int64_t>(e.scales.size()) == n_scales, ErrKind::Format,
          "tensor '" + name + "' scales size mismatch");
    check(static_cast<int64_t>(e.zeros.size()) == n_zeros, ErrKind::Format,
          "tensor '" + name + "' zeros size mismatch");
}

uint32_t entry_crc(const TensorEntry& e) {
    uint32_t c = crc32(e.data.data(), e.data.size());
    c = crc32(e.scales.data(), e.scales.size() * 4, c);
    c = crc32(e.zeros.data(), e.zeros.size() * 4, c);
    return c;
}

}  // namespace

void atomic_write_file(const std::string& path, const void* data, size_t len) {
    namespace fs = std::filesystem;
    fs::path target(path);
    fs::path dir = target.parent_path();
    if (dir.empty()) dir = ".";
    fs::path tmp = dir / (target.filename().string() + ".tmp." + std::to_string(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        check(out.good(), ErrKind::Io, "cannot open '" + tmp.string() + "' for writing");
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
        out.flush();
        check(out.good(), ErrKind::Io, "write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        fail(ErrKind::Io, "rename to '" + path + "' failed: " + ec.message());
    }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    validate(ckpt.config);

    // layout payload regions in name order (std::map is sorted)
    nlohmann::json meta;
    meta["config"] = nlohmann::json::parse(config_to_json(ckpt.config));
    nlohmann::json jt = nlohmann::json::object();
    int64_t cur = 0;
    std::vector<std::pair<const std::string*, const TensorEntry*>> order;
    for (const auto& [name, e] : ckpt.tensors) {
        validate_entry(name, e);
        order.emplace_back(&name, &e);
        nlohmann::json je;
        je["dtype"] = dtype_name(e.dtype);
        je["shape"] = e.shape;
        int64_t off = align_up(cur);
        je["offset"] = off;
        je["length"] = static_cast<int64_t>(e.data.size());
        cur = off + static_cast<int64_t>(e.data.size());
        if (!e.scales.empty()) {
            off = align_up(cur);
            je["scales_offset"] = off;
            je["scales_length"] = static_cast<int64_t>(e.scales.size() * 4);
            cur = off + static_cast<int64_t>(e.scales.size() * 4);
        }
        if (!e.zeros.empty()) {
            off = align_up(cur);
            je["zeros_offset"] = off;
            je["zeros_length"] = static_cast<int64_t>(e.zeros.size() * 4);
            cur = off + static_cast<int64_t>(e.zeros.size() * 4);
        }
        if (e.dtype == Dtype::Int4g) je["group_size"] = e.group_size;
        je["crc32"] = entry_crc(e);
        jt[name] = std::move(je);
    }
    meta["tensors"] = std::move(jt);
    std::string meta_text = meta.dump();

    int64_t payload_base = align_up(16 + static_cast<int64_t>(meta_text.size()));
    std::vector<uint8_t> file(static_cast<size_t>(payload_base + cur), 0);
    std::memcpy(file.data(), "PLC2", 4);
    uint32_t version = kCheckpointVersion;
    std::memcpy(file.data() + 4, &version, 4);
    uint64_t meta_len = meta_text.size();
    std::memcpy(file.data() + 8, &meta_len, 8);
    std::memcpy(file.data() + 16, meta_text.data(), meta_text.size());

    // second pass: copy regions at the offsets just assigned
    cur = 0;
    for (auto& [name, e] : order) {
        (void)name;
        int64_t off = align_up(cur);
        std::memcpy(file.data() + payload_base + off, e->data.data(), e->data.size());
        cur = off + static_cast<int64_t>(e->data.size());
        if (!e->scales.empty()) {
            off = align_up(cur);
            std::memcpy(file.data() + payload_base + off, e->scales.data(), e->scales.size() * 4);
            cur = off + static_cast<int64_t>(e->scales.size() * 4);
        }
        if (!e->zeros.empty()) {
            off = align_up(cur);
            std::memcpy(file.data() + payload_base + off, e->zeros.data(), e->zeros.size() * 4);
            cur = off + static_cast<int64_t>(e->zeros.size() * 4);
        }
    }
    atomic_write_file(path, file.data(), file.size());
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), ErrKind::Io, "cannot open '" + path + "'");
    in.seekg(0, std::ios::end);
    int64_t file_size = in.tellg();
    in.seekg(0);
    check(file_size >= 16, ErrKind::Format, "file too small for header: '" + path + "'");

    char header[16];
    in.read(header, 16);
    check(in.good(), ErrKind::Io, "header read failed: '" + path + "'");
    check(std::memcmp(header, "PLC2", 4) == 0, ErrKind::Format,
          "bad magic, not a checkpoint: '" + path + "'");
    uint32_t version;
    std::memcpy(&version, header + 4, 4);
    check(version == kCheckpointVersion, ErrKind::Format,
          "unsupported checkpoint version " + std::to_string(version));
    uint64_t meta_len;
    std::memcpy(&meta_len, header + 8, 8);
    check(meta_len > 0 && static_cast<int64_t>(meta_len) <= file_size - 16, ErrKind::Format,
          "metadata length out of range");

    std::string meta_text(meta_len, '\0');
    in.read(meta_text.data(), static_cast<std::streamsize>(meta_len));
    check(in.good(), ErrKind::Io, "metadata read failed");

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrKind::Format, std::string("bad checkpoint metadata: ") + e.what());
    }
    check(meta.contains("config") && meta.contains("tensors"), ErrKind::Format,
          "checkpoint metadata missing config or tensors");

    Checkpoint ckpt;
    ckpt.config = config_from_json(meta["config"].dump());

    int64_t payload_base = align_up(16 + static_cast<int64_t>(meta_len));
    int64_t payload_size = file_size - payload_base;
    check(payload_size >= 0, ErrKind::Integrity, "truncated payload: '" + path + "'");

    // validate the whole region table before reading any payload
    struct Pending {
        std::string name;
        Region data, scales, zeros;
        uint32_t crc = 0;
    };
    std::vector<Pending> pending;
    std::vector<Region> regions;
    try {
        for (const auto& [name, je] : meta["tensors"].items()) {
            Pending p;
            p.name = name;
            TensorEntry& e = ckpt.tensors[name];
            e.dtype = dtype_from_name(je.at("dtype").get<std::string>());
            je.at("shape").get_to(e.shape);
            if (je.contains("group_size")) je.at("group_size").get_to(e.group_size);
            p.data = {je.at("offset").get<int64_t>(), je.at("length").get<int64_t>()};
            if (je.contains("scales_offset"))
                p.scales = {je.at("scales_offset").get<int64_t>(),
                            je.at("scales_length").get<int64_t>()};
            if (je.contains("zeros_offset"))
                p.zeros = {je.at("zeros_offset").get<int64_t>(),
                           je.at("zeros_length").get<int64_t>()};
            p.crc = je.at("crc32").get<uint32_t>();
            for (const Region& r : {p.data, p.scales, p.zeros}) {
                check(r.offset >= 0 && r.length >= 0, ErrKind::Format,
                      "negative region bounds for tensor '" + name + "'");
                check(r.offset + r.length <= payload_size, ErrKind::Integrity,
                      "truncated payload for tensor '" + name + "'");
                if (r.length > 0) regions.push_back(r);
            }
            pending.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrKind::Format, std::string("bad tensor table: ") + e.what());
    }
    std::sort(regions.begin(), regions.end(),
              [](const Region& a, const Region& b) { return a.offset < b.offset; });
    for (size_t i = 1; i < regions.size(); i++)
        check(regions[i - 1].offset + regions[i - 1].length <= regions[i].offset,
              ErrKind::Format, "overlapping payload regions");

    for (Pending& p : pending) {
        TensorEntry& e = ckpt.tensors[p.name];
        // shape/dtype coherence, including sideband float counts
        TensorEntry probe = e;
        probe.data.resize(static_cast<size_t>(p.data.length));
        probe.scales.resize(static_cast<size_t>(p.scales.length / 4));
        probe.zeros.resize(static_cast<size_t>(p.zeros.length / 4));
        check(p.scales.length % 4 == 0 && p.zeros.length % 4 == 0, ErrKind::Format,
              "sideband region size not a float multiple for tensor '" + p.name + "'");
        validate_entry(p.name, probe);

        e.data.resize(static_cast<size_t>(p.data.length));
        in.seekg(payload_base + p.data.offset);
        in.read(reinterpret_cast<char*>(e.data.data()), p.data.length);
        e.scales.resize(static_cast<size_t>(p.scales.length / 4));
        if (p.scales.length > 0) {
            in.seekg(payload_base + p.scales.offset);
            in.read(reinterpret_cast<char*>(e.scales.data()), p.scales.length);
        }
        e.zeros.resize(static_cast<size_t>(p.zeros.length / 4));
        if (p.zeros.length > 0) {
            in.seekg(payload_base + p.zeros.offset);
            in.read(reinterpret_cast<char*>(e.zeros.data()), p.zeros.length);
        }
        check(in.good(), ErrKind::Io, "payload read failed for tensor '" + p.name + "'");
        check(entry_crc(e) == p.crc, ErrKind::Integrity,
              "checksum mismatch for tensor '" + p.name + "'");
    }
    return ckpt;
}

uint64_t checkpoint_payload_hash(const Checkpoint& ckpt) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, e] : ckpt.tensors) {
        h = hash64(name, h);
        h = hash64(e.data.data(), e.data.size(), h);
        h = hash64(e.scales.data(), e.scales.size() * 4, h);
        h = hash64(e.zeros.data(), e.zeros.size() * 4, h);
    }
    return h;
}

}  // namespace plc2
