#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

#include "psgd/comm.hpp"
#include "psgd/error.hpp"

namespace psgd {

namespace {

using Clock = std::chrono::steady_clock;

// Frames carry at most this many doubles; anything larger is a corrupt header.
constexpr std::uint64_t kMaxPayload = std::uint64_t{1} << 28;

class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket() { close(); }
    Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    Socket& operator=(Socket&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = std::exchange(o.fd_, -1);
        }
        return *this;
    }

    int fd() const noexcept { return fd_; }
    bool valid() const noexcept { return fd_ >= 0; }
    void close() noexcept {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

private:
    int fd_ = -1;
};

std::string errno_text() { return std::strerror(errno); }

int remaining_ms(Clock::time_point deadline) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 1 << 30));
}

void wait_ready(int fd, short events, Clock::time_point deadline, const std::string& what) {
    for (;;) {
        pollfd p{fd, events, 0};
        const int rc = ::poll(&p, 1, remaining_ms(deadline));
        if (rc > 0) return;
        if (rc == 0) throw CommError("timed out " + what);
        if (errno != EINTR) throw CommError("poll failed " + what + ": " + errno_text());
    }
}

void send_all(int fd, std::span<const std::uint8_t> data, Clock::time_point deadline, const std::string& peer) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        wait_ready(fd, POLLOUT, deadline, "sending to " + peer);
        const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL | MSG_DONTWAIT);
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
            throw CommError("send to " + peer + " failed: " + errno_text());
        }
        sent += static_cast<std::size_t>(n);
    }
}

void recv_exact(int fd, std::uint8_t* out, std::size_t size, Clock::time_point deadline, const std::string& peer) {
    std::size_t got = 0;
    while (got < size) {
        wait_ready(fd, POLLIN, deadline, "waiting for " + peer);
        const ssize_t n = ::recv(fd, out + got, size - got, MSG_DONTWAIT);
        if (n == 0) throw CommError(peer + " closed the connection");
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
            throw CommError("recv from " + peer + " failed: " + errno_text());
        }
        got += static_cast<std::size_t>(n);
    }
}

void set_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

in_addr resolve_ipv4(const std::string& host) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (const int rc = ::getaddrinfo(host.c_str(), nullptr, &hints, &res); rc != 0 || res == nullptr) {
        throw CommError("cannot resolve host '" + host + "': " + ::gai_strerror(rc));
    }
    const in_addr addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
    return addr;
}

Socket listen_on(in_addr addr, std::uint16_t port, int backlog) {
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) throw CommError("socket() failed: " + errno_text());
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_addr = addr;
    sa.sin_port = htons(port);
    if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
        throw CommError("bind to port " + std::to_string(port) + " failed: " + errno_text());
    }
    if (::listen(s.fd(), backlog) != 0) throw CommError("listen failed: " + errno_text());
    return s;
}

std::uint16_t local_port(const Socket& s) {
    sockaddr_in sa{};
    socklen_t len = sizeof(sa);
    ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&sa), &len);
    return ntohs(sa.sin_port);
}

Socket accept_one(const Socket& listener, Clock::time_point deadline, in_addr* peer_addr, const std::string& what) {
    for (;;) {
        wait_ready(listener.fd(), POLLIN, deadline, what);
        sockaddr_in sa{};
        socklen_t len = sizeof(sa);
        const int fd = ::accept(listener.fd(), reinterpret_cast<sockaddr*>(&sa), &len);
        if (fd < 0) {
            if (errno == EINTR || errno == EAGAIN || errno == ECONNABORTED) continue;
            throw CommError("accept failed: " + errno_text());
        }
        if (peer_addr) *peer_addr = sa.sin_addr;
        set_nodelay(fd);
        return Socket(fd);
    }
}

// Retries until the deadline; the peer may not be listening yet.
Socket connect_to(in_addr addr, std::uint16_t port, Clock::time_point deadline, const std::string& what) {
    for (;;) {
        Socket s(::socket(AF_INET, SOCK_STREAM, 0));
        if (!s.valid()) throw CommError("socket() failed: " + errno_text());
        sockaddr_in sa{};
        sa.sin_family = AF_INET;
        sa.sin_addr = addr;
        sa.sin_port = htons(port);
        if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) == 0) {
            set_nodelay(s.fd());
            return s;
        }
        if (Clock::now() >= deadline) throw CommError("could not reach " + what + ": " + errno_text());
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
}

class SocketHandle final : public SyncHandle {
public:
    SocketHandle(std::size_t rank, std::size_t size, SocketOptions options)
        : rank_(rank), size_(size), options_(std::move(options)) {}

    void form_group() {
        const auto deadline = Clock::now() + options_.timeout;
        const in_addr coordinator = resolve_ipv4(options_.coordinator.host);
        const bool ring = options_.topology == Topology::Ring && size_ > 1;

        Socket ring_listener;
        if (ring) {
            in_addr any{};
            any.s_addr = htonl(INADDR_ANY);
            ring_listener = listen_on(any, 0, 4);
        }
        const double ring_port = ring ? static_cast<double>(local_port(ring_listener)) : 0.0;

        std::vector<double> peers(2 * size_, 0.0);  // [ipv4, port] per rank; ipv4 0 = coordinator host
        if (rank_ == 0) {
            star_.resize(size_);
            if (size_ > 1) {
                Socket listener = listen_on(coordinator, options_.coordinator.port, static_cast<int>(size_));
                peers[1] = ring_port;
                for (std::size_t joined = 1; joined < size_; ++joined) {
                    in_addr addr{};
                    Socket s = accept_one(listener, deadline, &addr, "waiting for workers to register");
                    const wire::Frame hello = read_frame(s, deadline, "registering worker");
                    const std::size_t r = hello.rank;
                    if (hello.type != wire::MessageType::Hello || r == 0 || r >= size_ || star_[r].valid() ||
                        hello.payload.size() != 1) {
                        throw CommError("invalid registration from rank " + std::to_string(r));
                    }
                    peers[2 * r] = static_cast<double>(ntohl(addr.s_addr));
                    peers[2 * r + 1] = hello.payload[0];
                    star_[r] = std::move(s);
                }
                for (std::size_t r = 1; r < size_; ++r) {
                    write_frame(star_[r], {wire::MessageType::Peers, 0, peers}, deadline, peer_name(r));
                }
            }
        } else {
            coordinator_ = connect_to(coordinator, options_.coordinator.port, deadline,
                                      "coordinator " + options_.coordinator.str());
            write_frame(coordinator_, {wire::MessageType::Hello, static_cast<std::uint32_t>(rank_), {ring_port}},
                        deadline, "coordinator");
            wire::Frame reply = read_frame(coordinator_, deadline, "coordinator");
            if (reply.type != wire::MessageType::Peers || reply.payload.size() != 2 * size_) {
                throw CommError("unexpected reply from coordinator during registration");
            }
            peers = std::move(reply.payload);
        }

        if (ring) {
            const std::size_t right = (rank_ + 1) % size_;
            in_addr addr{};
            addr.s_addr = peers[2 * right] == 0.0 ? coordinator.s_addr
                                                  : htonl(static_cast<std::uint32_t>(peers[2 * right]));
            right_ = connect_to(addr, static_cast<std::uint16_t>(peers[2 * right + 1]), deadline,
                                "ring neighbour rank " + std::to_string(right));
            write_frame(right_, {wire::MessageType::Hello, static_cast<std::uint32_t>(rank_), {}}, deadline,
                        peer_name(right));
            left_ = accept_one(ring_listener, deadline, nullptr, "waiting for ring neighbour");
            const wire::Frame hello = read_frame(left_, deadline, "ring neighbour");
            if (hello.type != wire::MessageType::Hello || hello.rank != (rank_ + size_ - 1) % size_) {
                throw CommError("unexpected ring neighbour rank " + std::to_string(hello.rank));
            }
        }
    }

    std::size_t rank() const noexcept override { return rank_; }
    std::size_t size() const noexcept override { return size_; }
    std::uint64_t bytes_sent() const noexcept override { return bytes_sent_; }

    void abort(const std::string&) noexcept override { shutdown(); }

    std::vector<double> allreduce_sum(std::span<const double> local) override {
        if (size_ == 1) return {local.begin(), local.end()};
        return guarded([&] {
            return options_.topology == Topology::Ring ? ring_allreduce(local) : star_allreduce(local);
        });
    }

    std::vector<double> broadcast(std::span<const double> value, std::size_t root) override {
        if (root >= size_) throw InvalidArgument("comm", "broadcast root out of range");
        if (size_ == 1) return {value.begin(), value.end()};
        return guarded([&] { return star_broadcast(value, root); });
    }

    void barrier() override {
        if (size_ == 1) return;
        guarded([&] {
            const auto deadline = Clock::now() + options_.timeout;
            if (rank_ == 0) {
                for (std::size_t r = 1; r < size_; ++r) expect(star_[r], wire::MessageType::Barrier, deadline, r);
                for (std::size_t r = 1; r < size_; ++r) {
                    write_frame(star_[r], {wire::MessageType::Barrier, 0, {}}, deadline, peer_name(r));
                }
            } else {
                write_frame(coordinator_, {wire::MessageType::Barrier, static_cast<std::uint32_t>(rank_), {}},
                            deadline, "coordinator");
                expect(coordinator_, wire::MessageType::Barrier, deadline, 0);
            }
            return std::vector<double>{};
        });
    }

private:
    template <typename F>
    std::vector<double> guarded(F&& body) {
        if (broken_) throw CommError("group is no longer usable after an earlier failure");
        try {
            return body();
        } catch (...) {
            shutdown();
            throw;
        }
    }

    void shutdown() noexcept {
        broken_ = true;
        for (auto& s : star_) s.close();
        coordinator_.close();
        left_.close();
        right_.close();
    }

    std::string peer_name(std::size_t r) const { return "rank " + std::to_string(r); }

    void write_frame(Socket& s, const wire::Frame& frame, Clock::time_point deadline, const std::string& peer) {
        const auto bytes = wire::encode(frame);
        send_all(s.fd(), bytes, deadline, peer);
        bytes_sent_ += bytes.size();
    }

    wire::Frame read_frame(Socket& s, Clock::time_point deadline, const std::string& peer) {
        std::vector<std::uint8_t> buf(wire::kHeaderBytes);
        recv_exact(s.fd(), buf.data(), buf.size(), deadline, peer);
        std::uint64_t length = 0;
        for (int i = 0; i < 8; ++i) length |= static_cast<std::uint64_t>(buf[9 + i]) << (8 * i);
        if (length > kMaxPayload) throw CommError("oversized frame from " + peer);
        buf.resize(wire::kHeaderBytes + 8 * length);
        recv_exact(s.fd(), buf.data() + wire::kHeaderBytes, 8 * length, deadline, peer);
        return wire::decode(buf);
    }

    wire::Frame expect(Socket& s, wire::MessageType type, Clock::time_point deadline, std::size_t from) {
        wire::Frame f = read_frame(s, deadline, peer_name(from));
        if (f.type == wire::MessageType::Error) throw CommError("protocol error reported by rank " + std::to_string(from));
        if (f.type != type) {
            throw CommError("protocol error: unexpected frame type " + std::to_string(static_cast<int>(f.type)) +
                            " from " + peer_name(from));
        }
        return f;
    }

    std::vector<double> star_allreduce(std::span<const double> local) {
        const auto deadline = Clock::now() + options_.timeout;
        if (rank_ != 0) {
            write_frame(coordinator_,
                        {wire::MessageType::Reduce, static_cast<std::uint32_t>(rank_), {local.begin(), local.end()}},
                        deadline, "coordinator");
            return expect(coordinator_, wire::MessageType::Result, deadline, 0).payload;
        }
        std::vector<double> acc(local.begin(), local.end());
        std::string mismatch;
        for (std::size_t r = 1; r < size_; ++r) {
            const wire::Frame f = expect(star_[r], wire::MessageType::Reduce, deadline, r);
            if (f.payload.size() != acc.size()) {
                if (mismatch.empty()) {
                    mismatch = "length mismatch in allreduce_sum: rank 0 has " + std::to_string(acc.size()) +
                               ", rank " + std::to_string(r) + " sent " + std::to_string(f.payload.size());
                }
                continue;
            }
            for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += f.payload[j];
        }
        const wire::Frame reply = mismatch.empty() ? wire::Frame{wire::MessageType::Result, 0, acc}
                                                   : wire::Frame{wire::MessageType::Error, 0, {}};
        for (std::size_t r = 1; r < size_; ++r) write_frame(star_[r], reply, deadline, peer_name(r));
        if (!mismatch.empty()) throw CommError(mismatch);
        return acc;
    }

    std::vector<double> star_broadcast(std::span<const double> value, std::size_t root) {
        const auto deadline = Clock::now() + options_.timeout;
        const auto r32 = static_cast<std::uint32_t>(rank_);
        if (rank_ == 0) {
            std::vector<double> data(value.begin(), value.end());
            if (root != 0) data = expect(star_[root], wire::MessageType::Broadcast, deadline, root).payload;
            for (std::size_t r = 1; r < size_; ++r) {
                if (r != root) write_frame(star_[r], {wire::MessageType::Broadcast, r32, data}, deadline, peer_name(r));
            }
            return data;
        }
        if (rank_ == root) {
            write_frame(coordinator_, {wire::MessageType::Broadcast, r32, {value.begin(), value.end()}}, deadline,
                        "coordinator");
            return {value.begin(), value.end()};
        }
        return expect(coordinator_, wire::MessageType::Broadcast, deadline, 0).payload;
    }

    // Chain reduction in rank order, pipelined over K segments:
    // rank r receives the partial sum of ranks 0..r-1 from its left
    // neighbour, adds its own contribution and passes it right. Rank K-1
    // then circulates the finished segments back around the ring.
    std::vector<double> ring_allreduce(std::span<const double> local) {
        const auto deadline = Clock::now() + options_.timeout;
        const std::size_t n = local.size();
        const std::size_t last = size_ - 1;
        const std::size_t left = (rank_ + last) % size_;
        const std::size_t right = (rank_ + 1) % size_;
        const auto r32 = static_cast<std::uint32_t>(rank_);
        auto seg_begin = [&](std::size_t s) { return s * n / size_; };

        std::vector<double> result(n);
        for (std::size_t s = 0; s < size_; ++s) {
            const std::size_t lo = seg_begin(s);
            const std::size_t hi = seg_begin(s + 1);
            std::vector<double> seg(local.begin() + lo, local.begin() + hi);
            if (rank_ != 0) {
                wire::Frame in = expect(left_, wire::MessageType::RingSegment, deadline, left);
                if (in.payload.size() != seg.size()) throw CommError("length mismatch in ring allreduce segment");
                for (std::size_t j = 0; j < seg.size(); ++j) seg[j] = in.payload[j] + seg[j];
            }
            if (rank_ == last) {
                std::copy(seg.begin(), seg.end(), result.begin() + lo);
            } else {
                write_frame(right_, {wire::MessageType::RingSegment, r32, std::move(seg)}, deadline, peer_name(right));
            }
        }
        for (std::size_t s = 0; s < size_; ++s) {
            const std::size_t lo = seg_begin(s);
            const std::size_t hi = seg_begin(s + 1);
            if (rank_ == last) {
                write_frame(right_, {wire::MessageType::RingSegment, r32, {result.begin() + lo, result.begin() + hi}},
                            deadline, peer_name(right));
                continue;
            }
            wire::Frame in = expect(left_, wire::MessageType::RingSegment, deadline, left);
            if (in.payload.size() != hi - lo) throw CommError("length mismatch in ring allgather segment");
            std::copy(in.payload.begin(), in.payload.end(), result.begin() + lo);
            if (right != last) write_frame(right_, {wire::MessageType::RingSegment, r32, std::move(in.payload)},
                                           deadline, peer_name(right));
        }
        return result;
    }

    std::size_t rank_;
    std::size_t size_;
    SocketOptions options_;
    std::vector<Socket> star_;  // rank 0: one connection per worker
    Socket coordinator_;        // ranks > 0: connection to rank 0
    Socket left_;
    Socket right_;
    std::uint64_t bytes_sent_ = 0;
    bool broken_ = false;
};

}  // namespace

std::unique_ptr<SyncHandle> connect_socket_group(std::size_t rank, std::size_t size, const SocketOptions& options) {
    if (size == 0) throw InvalidArgument("comm", "group size must be >= 1");
    if (rank >= size) throw InvalidArgument("comm", "rank " + std::to_string(rank) + " out of range");
    auto handle = std::make_unique<SocketHandle>(rank, size, options);
    if (size > 1) handle->form_group();
    return handle;
}

}  // namespace psgd
