#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "psgd/metrics.hpp"

namespace psgd {

// On-disk model: a JSON document whose weights are stored as base64 of the
// little-endian IEEE-754 float64 components, so a save/load round trip is
// bit-exact. Contains no timestamps; identical runs give identical files.
struct ModelFile {
    static constexpr const char* kFormat = "psgd-svm-model";
    static constexpr int kVersion = 1;

    std::size_t dimension = 0;
    std::vector<double> weights;
    RunEcho config;
    std::size_t epochs_completed = 0;

    std::string serialize() const;

    // Throws DataError on unknown format/version, bad base64 or a weight
    // count that differs from `dimension`.
    static ModelFile deserialize(const std::string& text);

    void save(const std::string& path) const;
    static ModelFile load(const std::string& path);
};

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace psgd
