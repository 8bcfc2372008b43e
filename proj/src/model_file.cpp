#include "psgd/model_file.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "psgd/error.hpp"

namespace psgd {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char ch) {
    if (ch >= 'A' && ch <= 'Z') return ch - 'A';
    if (ch >= 'a' && ch <= 'z') return ch - 'a' + 26;
    if (ch >= '0' && ch <= '9') return ch - '0' + 52;
    if (ch == '+') return 62;
    if (ch == '/') return 63;
    return -1;
}

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    if (const std::size_t rest = bytes.size() - i; rest > 0) {
        std::uint32_t v = bytes[i] << 16;
        if (rest == 2) v |= bytes[i + 1] << 8;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw DataError("cli", "base64 payload length is not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int v[4];
        int pad = 0;
        for (int j = 0; j < 4; ++j) {
            const char ch = text[i + j];
            if (ch == '=' && i + 4 == text.size() && j >= 2) {
                v[j] = 0;
                ++pad;
                continue;
            }
            if (pad > 0 || (v[j] = decode_char(ch)) < 0) throw DataError("cli", "invalid base64 payload");
        }
        const std::uint32_t word = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
        out.push_back(static_cast<std::uint8_t>(word >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>(word >> 8));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(word));
    }
    return out;
}

std::string ModelFile::serialize() const {
    std::vector<std::uint8_t> raw;
    raw.reserve(weights.size() * 8);
    for (double w : weights) {
        const auto bits = std::bit_cast<std::uint64_t>(w);
        for (int i = 0; i < 8; ++i) raw.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
    nlohmann::ordered_json j;
    j["format"] = kFormat;
    j["version"] = kVersion;
    j["dimension"] = dimension;
    j["epochs_completed"] = epochs_completed;
    j["config"] = {{"mode", config.mode},
                   {"backend", config.backend},
                   {"dataset", config.dataset},
                   {"c", config.c},
                   {"epochs", config.epochs},
                   {"block_size", config.block_size},
                   {"parallelism", config.parallelism},
                   {"seed", config.seed}};
    j["weights_f64le_base64"] = base64_encode(raw);
    return j.dump(2) + "\n";
}

ModelFile ModelFile::deserialize(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("cli", std::string("model file is not valid JSON: ") + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != kFormat) throw DataError("cli", "not a psgd-svm model file");
        if (j.at("version").get<int>() != kVersion) {
            throw DataError("cli", "unsupported model file version " + std::to_string(j.at("version").get<int>()));
        }
        ModelFile m;
        m.dimension = j.at("dimension").get<std::size_t>();
        m.epochs_completed = j.value("epochs_completed", std::size_t{0});
        const auto& cfg = j.at("config");
        m.config.mode = cfg.value("mode", "");
        m.config.backend = cfg.value("backend", "");
        m.config.dataset = cfg.value("dataset", "");
        m.config.c = cfg.value("c", 1.0);
        m.config.epochs = cfg.value("epochs", std::size_t{1});
        m.config.block_size = cfg.value("block_size", std::size_t{1});
        m.config.parallelism = cfg.value("parallelism", std::size_t{1});
        m.config.seed = cfg.value("seed", std::uint64_t{0});

        const auto raw = base64_decode(j.at("weights_f64le_base64").get<std::string>());
        if (raw.size() != m.dimension * 8) {
            throw DataError("cli", "model payload holds " + std::to_string(raw.size() / 8) + " weights, dimension is " +
                                       std::to_string(m.dimension));
        }
        m.weights.resize(m.dimension);
        for (std::size_t i = 0; i < m.dimension; ++i) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(raw[8 * i + b]) << (8 * b);
            m.weights[i] = std::bit_cast<double>(bits);
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("cli", std::string("malformed model file: ") + e.what());
    }
}

void ModelFile::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cli", "cannot write model file '" + path + "'");
    out << serialize();
    if (!out.flush()) throw DataError("cli", "write to '" + path + "' failed");
}

ModelFile ModelFile::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cli", "cannot open model file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize(buf.str());
}

}  // namespace psgd
