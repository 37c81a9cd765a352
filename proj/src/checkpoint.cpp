#include "softmorph/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "softmorph/errors.hpp"

namespace softmorph {

namespace {

constexpr char kMagic[4] = {'S', 'M', 'C', 'P'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

class Reader {
public:
    Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError(path.string() + ": cannot open checkpoint");
    }

    uint32_t u32() {
        unsigned char b[4];
        read(b, 4);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }

    uint64_t u64() {
        uint64_t v = 0;
        unsigned char b[8];
        read(b, 8);
        for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string str(std::size_t n) {
        std::string s(n, '\0');
        read(reinterpret_cast<unsigned char*>(s.data()), n);
        return s;
    }

    uint8_t u8() {
        unsigned char b;
        read(&b, 1);
        return b;
    }

private:
    void read(unsigned char* dst, std::size_t n) {
        in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw IoError(path_.string() + ": truncated checkpoint");
        }
    }

    std::filesystem::path path_;
    std::ifstream in_;
};

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<uint32_t>(net.in_channels));
    for (const int w : net.widths) put_u32(buf, static_cast<uint32_t>(w));
    for (const double u : prior_u) put_f64(buf, u);
    for (const EmaNormalizer* n : {&norm_roughness, &norm_texture}) {
        put_f64(buf, n->running_min());
        put_f64(buf, n->running_max());
        put_f64(buf, n->momentum());
        buf.push_back(n->initialized() ? char(1) : char(0));
    }
    put_u64(buf, static_cast<uint64_t>(step));
    put_u64(buf, seed);
    put_u32(buf, static_cast<uint32_t>(net_params.size()));
    for (const NamedTensor& t : net_params) {
        put_u32(buf, static_cast<uint32_t>(t.name.size()));
        buf.append(t.name);
        put_u32(buf, static_cast<uint32_t>(t.shape.size()));
        for (const int d : t.shape) put_u32(buf, static_cast<uint32_t>(d));
        for (const double v : t.values) put_f64(buf, v);
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string() + ": cannot open checkpoint for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError(path.string() + ": checkpoint write failed");
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    Reader r(path);
    const std::string magic = r.str(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) throw IoError(path.string() + ": not a checkpoint file");
    const uint32_t version = r.u32();
    if (version != kVersion) throw IoError(path.string() + ": unsupported checkpoint version");

    Checkpoint ck;
    ck.net.in_channels = static_cast<int>(r.u32());
    for (int& w : ck.net.widths) w = static_cast<int>(r.u32());
    for (double& u : ck.prior_u) u = r.f64();
    for (EmaNormalizer* n : {&ck.norm_roughness, &ck.norm_texture}) {
        const double mn = r.f64();
        const double mx = r.f64();
        const double momentum = r.f64();
        const bool initialized = r.u8() != 0;
        *n = EmaNormalizer::restore(mn, mx, momentum, initialized);
    }
    ck.step = static_cast<int64_t>(r.u64());
    ck.seed = r.u64();
    const uint32_t n_blocks = r.u32();
    for (uint32_t b = 0; b < n_blocks; ++b) {
        NamedTensor t;
        t.name = r.str(r.u32());
        const uint32_t ndim = r.u32();
        std::size_t count = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            t.shape.push_back(static_cast<int>(r.u32()));
            count *= static_cast<std::size_t>(t.shape.back());
        }
        t.values.resize(count);
        for (double& v : t.values) v = r.f64();
        ck.net_params.push_back(std::move(t));
    }
    return ck;
}

}  // namespace softmorph
