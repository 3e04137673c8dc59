#pragma once

#include "json.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace carleman {

inline constexpr int kFormatVersion = 1;

struct ArrayBlock {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;
};

// Binary container: 8-byte magic, little-endian u64 header length, JSON header,
// then every array as little-endian float64 in row-major order.
struct Container {
    nlohmann::json header = nlohmann::json::object();
    std::vector<ArrayBlock> arrays;

    const ArrayBlock& get(const std::string& name) const;
    bool has(const std::string& name) const;
};

void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path);

}  // namespace carleman
