#include "bevpred/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "bevpred/serialize.hpp"

namespace bevpred {

namespace io {

uint32_t crc32(const void* data, size_t n, uint32_t running) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; i++) {
            uint32_t c = i;
            for (int k = 0; k < 8; k++) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; i++) running = table[(running ^ p[i]) & 0xFFu] ^ (running >> 8);
    return running;
}

void Sink::put(const void* p, size_t n) {
    os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    crc_ = crc32(p, n, crc_);
}

void Sink::str(const std::string& s) {
    if (s.size() > 0xFFFF) throw FileFormatError("string too long to encode: " + s.substr(0, 40));
    u16(static_cast<uint16_t>(s.size()));
    put(s.data(), s.size());
}

void Sink::write_crc() {
    const uint32_t v = crc_value();
    os_.write(reinterpret_cast<const char*>(&v), 4);
}

void Source::get(void* p, size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is_.gcount()) != n)
        throw TruncatedError("unexpected end of file (wanted " + std::to_string(n) + " bytes, got "
                             + std::to_string(is_.gcount()) + ")");
    crc_ = crc32(p, n, crc_);
}

uint8_t Source::u8() {
    uint8_t v;
    get(&v, 1);
    return v;
}
uint16_t Source::u16() {
    uint16_t v;
    get(&v, 2);
    return v;
}
uint32_t Source::u32() {
    uint32_t v;
    get(&v, 4);
    return v;
}
float Source::f32() {
    float v;
    get(&v, 4);
    return v;
}
double Source::f64() {
    double v;
    get(&v, 8);
    return v;
}

std::string Source::str() {
    const uint16_t n = u16();
    std::string s(n, '\0');
    if (n) get(s.data(), n);
    return s;
}

void Source::check_crc(const std::string& what) {
    const uint32_t expect = crc_value();
    uint32_t stored;
    is_.read(reinterpret_cast<char*>(&stored), 4);
    if (is_.gcount() != 4) throw TruncatedError(what + ": missing checksum");
    if (stored != expect)
        throw ChecksumError(what + ": checksum mismatch (stored " + std::to_string(stored)
                            + ", computed " + std::to_string(expect) + ")");
}

bool Source::at_eof() {
    return is_.peek() == std::char_traits<char>::eof();
}

void write_named_tensor(Sink& s, const std::string& name, const Tensor& t) {
    s.str(name);
    s.u8(static_cast<uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); i++) s.u32(static_cast<uint32_t>(t.dim(i)));
    if constexpr (sizeof(scalar) == sizeof(float)) {
        s.put(t.data(), sizeof(float) * static_cast<size_t>(t.numel()));
    } else {
        for (int64_t i = 0; i < t.numel(); i++) s.f32(static_cast<float>(t.data()[i]));
    }
}

std::pair<std::string, Tensor> read_named_tensor(Source& s) {
    std::string name = s.str();
    const int rank = s.u8();
    std::vector<int64_t> shape(static_cast<size_t>(rank));
    for (int i = 0; i < rank; i++) shape[static_cast<size_t>(i)] = s.u32();
    Tensor t(shape);
    if constexpr (sizeof(scalar) == sizeof(float)) {
        if (t.numel()) s.get(t.data(), sizeof(float) * static_cast<size_t>(t.numel()));
    } else {
        for (int64_t i = 0; i < t.numel(); i++) t.data()[i] = static_cast<scalar>(s.f32());
    }
    return {std::move(name), std::move(t)};
}

}  // namespace io

// ---- ParamMap ----------------------------------------------------------------

Tensor& ParamMap::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ShapeError("param registered twice: " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
}

Tensor* ParamMap::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second].second;
}

const Tensor* ParamMap::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second].second;
}

int64_t ParamMap::total_elements() const {
    int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
}

void ParamMap::zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
}

void ParamMap::set_requires_grad(bool rg) {
    for (auto& [name, t] : items_) t.set_requires_grad(rg);
}

void ParamMap::set_requires_grad_prefix(const std::string& prefix, bool rg) {
    for (auto& [name, t] : items_)
        if (name.rfind(prefix, 0) == 0) t.set_requires_grad(rg);
}

// ---- checkpoint container ------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'B', 'P', 'F', 'T'};
constexpr uint32_t kVersion = 1;

void write_container(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FileFormatError("cannot open for writing: " + path);
    io::Sink sink(os);
    sink.put(kMagic, 4);
    sink.u32(kVersion);
    sink.u32(static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) io::write_named_tensor(sink, name, t);
    os.flush();
    if (!os) throw FileFormatError("write failed: " + path);
}

std::vector<std::pair<std::string, Tensor>> read_container(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FileFormatError("cannot open: " + path);
    io::Source src(is);
    char magic[4];
    src.get(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FileFormatError(path + ": not a tensor container (bad magic)");
    const uint32_t version = src.u32();
    if (version != kVersion)
        throw VersionError(path + ": container version " + std::to_string(version)
                           + ", expected " + std::to_string(kVersion));
    const uint32_t count = src.u32();
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; i++) out.push_back(io::read_named_tensor(src));
    return out;
}
}  // namespace

void save_checkpoint(const std::string& path, const ParamMap& params) {
    write_container(path, params.items());
}

size_t load_checkpoint(const std::string& path, ParamMap& params, bool strict) {
    auto loaded = read_container(path);
    size_t applied = 0;
    for (auto& [name, t] : loaded) {
        Tensor* dst = params.find(name);
        if (!dst) {
            if (strict) throw FileFormatError(path + ": unknown tensor '" + name + "'");
            continue;
        }
        if (dst->shape() != t.shape())
            throw ShapeError(path + ": '" + name + "' stored " + shape_str(t.shape())
                             + ", model expects " + shape_str(dst->shape()));
        dst->values() = t.values();
        applied++;
    }
    if (strict && applied != params.size()) {
        for (const auto& [name, t] : params.items()) {
            bool found = false;
            for (const auto& [lname, lt] : loaded) found |= (lname == name);
            if (!found) throw FileFormatError(path + ": missing tensor '" + name + "'");
        }
    }
    return applied;
}

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors) {
    write_container(path, tensors);
}

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path) {
    return read_container(path);
}

}  // namespace bevpred
