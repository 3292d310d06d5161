#include "solargeco/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace solargeco {

namespace {

constexpr char kMagic[4] = {'S', 'G', 'C', 'P'};

void put_u32(std::ostream& os, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

void put_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
}

uint32_t get_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw ParseError("checkpoint truncated while reading " + what);
    }
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is, const std::string& what) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) {
        throw ParseError("checkpoint truncated while reading " + what);
    }
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is, const std::string& what) {
    uint64_t bits = get_u64(is, what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& config_json) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, 4);
    put_u32(os, kCheckpointVersion);
    put_u64(os, config_json.size());
    os.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
    put_u64(os, params.size());
    for (const auto& p : params.all()) {
        put_u64(os, p->name.size());
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        put_u32(os, static_cast<uint32_t>(p->shape.size()));
        for (size_t d : p->shape) put_u64(os, d);
        for (double v : p->value) put_f64(os, v);
    }
    os.flush();
    if (!os) throw DataError("failed writing checkpoint: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw ParseError("not a checkpoint file (bad magic): " + path);
    }
    const uint32_t version = get_u32(is, "version");
    if (version != kCheckpointVersion) {
        throw ParseError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    const uint64_t cfg_len = get_u64(is, "config length");
    ckpt.config_json.resize(cfg_len);
    if (cfg_len > 0 && !is.read(ckpt.config_json.data(), static_cast<std::streamsize>(cfg_len))) {
        throw ParseError("checkpoint truncated while reading config block");
    }
    const uint64_t count = get_u64(is, "parameter count");
    ckpt.params.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        LoadedParam p;
        const uint64_t name_len = get_u64(is, "parameter name length");
        p.name.resize(name_len);
        if (name_len > 0 && !is.read(p.name.data(), static_cast<std::streamsize>(name_len))) {
            throw ParseError("checkpoint truncated while reading parameter name");
        }
        const uint32_t ndim = get_u32(is, "parameter rank");
        p.shape.resize(ndim);
        for (uint32_t d = 0; d < ndim; ++d) {
            p.shape[d] = static_cast<size_t>(get_u64(is, "parameter dimension"));
        }
        const size_t numel = shape_numel(p.shape);
        p.value.resize(numel);
        for (size_t j = 0; j < numel; ++j) p.value[j] = get_f64(is, "parameter values");
        ckpt.params.push_back(std::move(p));
    }
    return ckpt;
}

void restore_params(const Checkpoint& ckpt, ParamStore& params) {
    if (ckpt.params.size() != params.size()) {
        throw DataError("checkpoint holds " + std::to_string(ckpt.params.size()) +
                        " parameters but the model has " + std::to_string(params.size()));
    }
    for (const LoadedParam& lp : ckpt.params) {
        Param* p = params.find(lp.name);
        if (!p) throw DataError("checkpoint parameter '" + lp.name + "' not found in model");
        if (p->shape != lp.shape) {
            throw DataError("checkpoint parameter '" + lp.name + "' has shape " +
                            shape_str(lp.shape) + " but the model expects " +
                            shape_str(p->shape));
        }
        p->value = lp.value;
    }
}

} // namespace solargeco
