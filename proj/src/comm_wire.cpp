#include <bit>
#include <cstring>

#include "psgd/comm.hpp"
#include "psgd/error.hpp"

namespace psgd {

Backend parse_backend(const std::string& text) {
    if (text == "inproc") return Backend::InProcess;
    if (text == "socket") return Backend::Socket;
    throw InvalidArgument("comm", "unknown backend '" + text + "' (expected inproc|socket)");
}

Topology parse_topology(const std::string& text) {
    if (text == "star") return Topology::Star;
    if (text == "ring") return Topology::Ring;
    throw InvalidArgument("comm", "unknown topology '" + text + "' (expected star|ring)");
}

std::string to_string(Backend backend) { return backend == Backend::InProcess ? "inproc" : "socket"; }
std::string to_string(Topology topology) { return topology == Topology::Star ? "star" : "ring"; }

Endpoint Endpoint::parse(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
        throw InvalidArgument("comm", "bad endpoint '" + text + "', expected host:port");
    }
    Endpoint e;
    e.host = text.substr(0, colon);
    unsigned long port = 0;
    try {
        std::size_t used = 0;
        port = std::stoul(text.substr(colon + 1), &used);
        if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw InvalidArgument("comm", "bad port in endpoint '" + text + "'");
    }
    if (port > 65535) throw InvalidArgument("comm", "port out of range in '" + text + "'");
    e.port = static_cast<std::uint16_t>(port);
    return e;
}

std::string Endpoint::str() const { return host + ":" + std::to_string(port); }

namespace wire {

namespace {

void put_le(std::vector<std::uint8_t>& out, std::uint64_t value, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

bool known_type(std::uint8_t t) { return t >= 1 && t <= 8; }

}  // namespace

std::vector<std::uint8_t> encode(const Frame& frame) {
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderBytes + 8 * frame.payload.size());
    for (std::uint8_t b : kMagic) out.push_back(b);
    out.push_back(static_cast<std::uint8_t>(frame.type));
    put_le(out, frame.rank, 4);
    put_le(out, frame.payload.size(), 8);
    for (double v : frame.payload) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
    return out;
}

Frame decode(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderBytes) throw CommError("truncated frame header");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CommError("bad frame magic");
    if (!known_type(bytes[4])) throw CommError("unknown frame type " + std::to_string(bytes[4]));
    Frame f;
    f.type = static_cast<MessageType>(bytes[4]);
    f.rank = static_cast<std::uint32_t>(get_le(bytes.data() + 5, 4));
    const std::uint64_t length = get_le(bytes.data() + 9, 8);
    if (length > (bytes.size() - kHeaderBytes) / 8 || bytes.size() != kHeaderBytes + 8 * length) {
        throw CommError("frame length " + std::to_string(length) + " does not match " +
                        std::to_string(bytes.size()) + " bytes");
    }
    f.payload.resize(length);
    for (std::uint64_t i = 0; i < length; ++i) {
        f.payload[i] = std::bit_cast<double>(get_le(bytes.data() + kHeaderBytes + 8 * i, 8));
    }
    return f;
}

}  // namespace wire

}  // namespace psgd
