#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace psgd {

enum class Backend { InProcess, Socket };
enum class Topology { Star, Ring };

Backend parse_backend(const std::string& text);
Topology parse_topology(const std::string& text);
std::string to_string(Backend backend);
std::string to_string(Topology topology);

inline constexpr std::chrono::milliseconds kDefaultSyncTimeout{30'000};

// One worker's endpoint of a collective group. Confined to its worker:
// never share a handle between threads.
//
// All collectives are blocking. Sums are accumulated in rank order
// 0..K-1, so every member receives a bitwise-identical result that also
// matches a single-threaded left-to-right fold. Any timeout, peer loss or
// length mismatch throws CommError on every member that observes it.
class SyncHandle {
public:
    virtual ~SyncHandle() = default;

    virtual std::size_t rank() const noexcept = 0;
    virtual std::size_t size() const noexcept = 0;

    virtual std::vector<double> allreduce_sum(std::span<const double> local) = 0;

    // Non-root members may pass any vector (it is ignored).
    virtual std::vector<double> broadcast(std::span<const double> value, std::size_t root) = 0;

    virtual void barrier() = 0;

    // Exact number of bytes this member has written to the wire (0 for the
    // in-process backend).
    virtual std::uint64_t bytes_sent() const noexcept = 0;

    // Fails the group so that peers blocked in (or later entering) a
    // collective throw instead of waiting for the timeout.
    virtual void abort(const std::string& reason) noexcept = 0;
};

// Threaded workers in one process, rendezvous through shared memory.
class InProcessGroup {
public:
    explicit InProcessGroup(std::size_t size, std::chrono::milliseconds timeout = kDefaultSyncTimeout);
    ~InProcessGroup();

    InProcessGroup(const InProcessGroup&) = delete;
    InProcessGroup& operator=(const InProcessGroup&) = delete;

    std::size_t size() const noexcept;

    // Each rank may be claimed exactly once.
    std::unique_ptr<SyncHandle> handle(std::size_t rank);

    struct State;

private:
    std::shared_ptr<State> state_;
};

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;

    // "host:port"
    static Endpoint parse(const std::string& text);
    std::string str() const;
};

struct SocketOptions {
    Endpoint coordinator;
    Topology topology = Topology::Star;
    std::chrono::milliseconds timeout = kDefaultSyncTimeout;
};

// Joins a TCP group. Rank 0 listens on the coordinator endpoint and waits
// for ranks 1..size-1 to register; the others retry connecting until the
// timeout elapses. Returns once the group is fully formed.
std::unique_ptr<SyncHandle> connect_socket_group(std::size_t rank, std::size_t size, const SocketOptions& options);

// Socket frame layout, little-endian:
//   magic "PSGD" (4 bytes) | type (1) | rank (u32) | length (u64) | length x f64
namespace wire {

inline constexpr std::uint8_t kMagic[4] = {'P', 'S', 'G', 'D'};
inline constexpr std::size_t kHeaderBytes = 17;

enum class MessageType : std::uint8_t {
    Hello = 1,      // payload: [listen port] of the registering rank
    Peers = 2,      // payload: [ipv4, port] per rank, sent by rank 0
    Reduce = 3,     // contribution to the root
    Result = 4,     // reduced vector from the root
    Broadcast = 5,
    Barrier = 6,
    RingSegment = 7,
    Error = 8,      // protocol failure; payload empty
};

struct Frame {
    MessageType type;
    std::uint32_t rank;
    std::vector<double> payload;

    bool operator==(const Frame&) const = default;
};

std::vector<std::uint8_t> encode(const Frame& frame);

// Throws CommError on bad magic, unknown type or truncated input.
Frame decode(std::span<const std::uint8_t> bytes);

}  // namespace wire

}  // namespace psgd
