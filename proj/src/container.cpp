#include "mup/container.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace mup {

static_assert(std::endian::native == std::endian::little, "container codec assumes a little-endian host");
static_assert(sizeof(Real) == 8);

namespace {

constexpr char kMagic[4] = {'M', 'U', 'P', 'C'};

class Writer {
   public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    }
    void u32(std::size_t v) {
        if (v > std::numeric_limits<std::uint32_t>::max())
            throw ContainerError(ContainerErrc::malformed, "value does not fit a 32-bit length field");
        auto w = static_cast<std::uint32_t>(v);
        raw(&w, 4);
    }
    void str(std::string_view s) {
        u32(s.size());
        raw(s.data(), s.size());
    }

    std::vector<std::uint8_t> out;
};

class Reader {
   public:
    Reader(const std::uint8_t* data, std::size_t size) : p_(data), end_(data + size) {}

    void raw(void* dst, std::size_t n) {
        if (static_cast<std::size_t>(end_ - p_) < n)
            throw ContainerError(ContainerErrc::truncated, "container truncated");
        std::memcpy(dst, p_, n);
        p_ += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, 4);
        return v;
    }
    std::string str() {
        std::uint32_t n = u32();
        if (static_cast<std::size_t>(end_ - p_) < n)
            throw ContainerError(ContainerErrc::truncated, "container truncated");
        std::string s(reinterpret_cast<const char*>(p_), n);
        p_ += n;
        return s;
    }
    bool done() const { return p_ == end_; }

   private:
    const std::uint8_t* p_;
    const std::uint8_t* end_;
};

}  // namespace

std::string_view to_string(ContainerErrc code) noexcept {
    switch (code) {
        case ContainerErrc::bad_magic: return "bad_magic";
        case ContainerErrc::version_mismatch: return "version_mismatch";
        case ContainerErrc::truncated: return "truncated";
        case ContainerErrc::checksum_mismatch: return "checksum_mismatch";
        case ContainerErrc::malformed: return "malformed";
        case ContainerErrc::wrong_kind: return "wrong_kind";
    }
    return "unknown";
}

std::optional<std::string> Container::attribute(std::string_view key) const {
    for (const auto& [k, v] : attributes)
        if (k == key) return v;
    return std::nullopt;
}

const Tensor* Container::tensor(std::string_view name) const {
    for (const auto& [k, t] : tensors)
        if (k == name) return &t;
    return nullptr;
}

const std::string& Container::require_attribute(std::string_view key) const {
    for (const auto& [k, v] : attributes)
        if (k == key) return v;
    throw ContainerError(ContainerErrc::malformed, "container attribute '" + std::string(key) + "' missing");
}

const Tensor& Container::require_tensor(std::string_view name) const {
    if (const Tensor* t = tensor(name)) return *t;
    throw ContainerError(ContainerErrc::malformed, "container tensor '" + std::string(name) + "' missing");
}

std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    const Bytef* p = bytes.data();
    std::size_t left = bytes.size();
    while (left > 0) {
        auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
        crc = ::crc32(crc, p, chunk);
        p += chunk;
        left -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::string hex32(std::uint32_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(8, '0');
    for (int i = 7; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

std::vector<std::uint8_t> encode(const Container& c) {
    Writer w;
    w.raw(kMagic, 4);
    w.u32(kContainerVersion);
    w.str(c.kind);
    w.u32(c.attributes.size());
    for (const auto& [k, v] : c.attributes) {
        w.str(k);
        w.str(v);
    }
    w.u32(c.tensors.size());
    for (const auto& [name, t] : c.tensors) {
        w.str(name);
        w.u32(t.rank());
        for (std::size_t d : t.shape()) w.u32(d);
        w.raw(t.raw(), t.size() * sizeof(Real));
    }
    std::uint32_t crc = crc32_of(w.out);
    w.raw(&crc, 4);
    return std::move(w.out);
}

Container decode(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        if (bytes.size() < 4 && std::memcmp(bytes.data(), kMagic, bytes.size()) == 0)
            throw ContainerError(ContainerErrc::truncated, "container truncated");
        throw ContainerError(ContainerErrc::bad_magic, "not a model container (bad magic)");
    }
    Reader r(bytes.data() + 4, bytes.size() - 4);
    std::uint32_t version = r.u32();
    if (version != kContainerVersion)
        throw ContainerError(ContainerErrc::version_mismatch,
                             "container version " + std::to_string(version) + ", expected " +
                                 std::to_string(kContainerVersion));

    // Structure first: running out of bytes means truncation. Once the layout
    // is consistent, any flipped byte is caught by the checksum.
    Container c;
    c.kind = r.str();
    std::uint32_t n_attr = r.u32();
    for (std::uint32_t i = 0; i < n_attr; ++i) {
        std::string k = r.str();
        std::string v = r.str();
        c.attributes.emplace_back(std::move(k), std::move(v));
    }
    std::uint32_t n_tensors = r.u32();
    std::vector<std::string> errors;
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = r.str();
        std::uint32_t rank = r.u32();
        if (rank == 0 || rank > 8) {
            errors.push_back("tensor '" + name + "' has invalid rank " + std::to_string(rank));
            break;
        }
        Shape shape(rank);
        std::size_t count = 1;
        bool bad = false;
        for (auto& d : shape) {
            d = r.u32();
            if (d == 0) bad = true;
            count *= d;
            if (count > bytes.size()) throw ContainerError(ContainerErrc::truncated, "container truncated");
        }
        if (bad) {
            errors.push_back("tensor '" + name + "' has a zero dimension");
            break;
        }
        std::vector<Real> data(count);
        r.raw(data.data(), count * sizeof(Real));
        c.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    std::uint32_t stored = errors.empty() ? r.u32() : 0;
    if (errors.empty() && !r.done()) errors.push_back("trailing bytes after checksum");

    std::vector<std::uint8_t> prefix(bytes.begin(), bytes.end() - 4);
    if (crc32_of(prefix) != stored || !errors.empty()) {
        std::uint32_t tail;
        std::memcpy(&tail, bytes.data() + bytes.size() - 4, 4);
        if (crc32_of(prefix) != tail)
            throw ContainerError(ContainerErrc::checksum_mismatch, "container checksum mismatch");
        throw ContainerError(ContainerErrc::malformed, errors.empty() ? "container malformed" : errors.front());
    }
    return c;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error reading '" + path.string() + "'");
    return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("error writing '" + path.string() + "'");
}

}  // namespace mup
