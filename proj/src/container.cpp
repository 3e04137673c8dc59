#include "carleman/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace carleman {

namespace {

constexpr char kMagic[8] = {'C', 'W', 'F', 'D', 'A', 'T', 'A', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("container: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::size_t product(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto v : s) n *= v;
    return n;
}

}  // namespace

const ArrayBlock& Container::get(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return a;
    throw std::runtime_error("container: no array named " + name);
}

bool Container::has(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return true;
    return false;
}

void write_container(const std::string& path, const Container& c) {
    nlohmann::json h = c.header;
    h["format_version"] = kFormatVersion;
    h["arrays"] = nlohmann::json::array();
    for (const auto& a : c.arrays) {
        if (product(a.shape) != a.data.size())
            throw std::invalid_argument("container: shape mismatch for " + a.name);
        h["arrays"].push_back({{"name", a.name}, {"shape", a.shape}});
    }
    const std::string text = h.dump();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os.write(kMagic, 8);
    put_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : c.arrays) {
        if constexpr (std::endian::native == std::endian::little) {
            os.write(reinterpret_cast<const char*>(a.data.data()),
                     static_cast<std::streamsize>(a.data.size() * sizeof(double)));
        } else {
            for (double v : a.data) put_u64(os, std::bit_cast<std::uint64_t>(v));
        }
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

Container read_container(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("missing file: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("container: bad magic in " + path);
    const std::uint64_t len = get_u64(is);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is) throw std::runtime_error("container: truncated header in " + path);
    Container c;
    c.header = nlohmann::json::parse(text);
    for (const auto& a : c.header.at("arrays")) {
        ArrayBlock b;
        b.name = a.at("name").get<std::string>();
        b.shape = a.at("shape").get<std::vector<std::size_t>>();
        b.data.resize(product(b.shape));
        if constexpr (std::endian::native == std::endian::little) {
            is.read(reinterpret_cast<char*>(b.data.data()),
                    static_cast<std::streamsize>(b.data.size() * sizeof(double)));
        } else {
            for (auto& v : b.data) v = std::bit_cast<double>(get_u64(is));
        }
        if (!is) throw std::runtime_error("container: truncated array " + b.name + " in " + path);
        c.arrays.push_back(std::move(b));
    }
    return c;
}

}  // namespace carleman
