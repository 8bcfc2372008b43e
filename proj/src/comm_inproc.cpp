#include <condition_variable>
#include <mutex>
#include <string>

#include "psgd/comm.hpp"
#include "psgd/error.hpp"

namespace psgd {

namespace {

enum class Op { Sum, Broadcast, Barrier };

const char* op_name(Op op) {
    switch (op) {
        case Op::Sum: return "allreduce_sum";
        case Op::Broadcast: return "broadcast";
        case Op::Barrier: return "barrier";
    }
    return "?";
}

}  // namespace

struct InProcessGroup::State {
    State(std::size_t n, std::chrono::milliseconds t)
        : size(n), timeout(t), claimed(n, false), inputs(n), ops(n, Op::Barrier), roots(n, 0) {}

    const std::size_t size;
    const std::chrono::milliseconds timeout;

    std::mutex mutex;
    std::condition_variable cv;
    std::vector<bool> claimed;

    // Current round. Inputs point into callers' buffers, which stay alive
    // because every caller blocks until the round is released.
    std::vector<std::span<const double>> inputs;
    std::vector<Op> ops;
    std::vector<std::size_t> roots;
    std::size_t arrived = 0;
    std::size_t departing = 0;
    bool releasing = false;
    std::uint64_t generation = 0;
    std::vector<double> result;
    std::string round_error;

    bool failed = false;
    std::string failure;

    void fail(const std::string& why) {
        if (!failed) {
            failed = true;
            failure = why;
        }
        cv.notify_all();
    }

    void reduce() {
        round_error.clear();
        result.clear();
        for (std::size_t r = 1; r < size; ++r) {
            if (ops[r] != ops[0] || roots[r] != roots[0]) {
                round_error = "mismatched collectives: rank 0 called " + std::string(op_name(ops[0])) +
                              ", rank " + std::to_string(r) + " called " + op_name(ops[r]);
                return;
            }
        }
        switch (ops[0]) {
            case Op::Sum: {
                const std::size_t len = inputs[0].size();
                for (std::size_t r = 1; r < size; ++r) {
                    if (inputs[r].size() != len) {
                        round_error = "length mismatch in allreduce_sum: rank 0 sent " + std::to_string(len) +
                                      ", rank " + std::to_string(r) + " sent " + std::to_string(inputs[r].size());
                        return;
                    }
                }
                result.assign(inputs[0].begin(), inputs[0].end());
                for (std::size_t r = 1; r < size; ++r) {
                    for (std::size_t j = 0; j < len; ++j) result[j] += inputs[r][j];
                }
                break;
            }
            case Op::Broadcast: {
                const auto& src = inputs[roots[0]];
                result.assign(src.begin(), src.end());
                break;
            }
            case Op::Barrier:
                break;
        }
    }

    std::vector<double> collective(std::size_t rank, Op op, std::span<const double> input, std::size_t root) {
        std::unique_lock lock(mutex);
        const auto deadline = std::chrono::steady_clock::now() + timeout;

        if (!cv.wait_until(lock, deadline, [&] { return failed || !releasing; })) {
            fail("rank " + std::to_string(rank) + " timed out waiting for the previous collective to drain");
        }
        if (failed) throw CommError(failure);

        inputs[rank] = input;
        ops[rank] = op;
        roots[rank] = root;
        const std::uint64_t my_generation = generation;
        if (++arrived == size) {
            reduce();
            releasing = true;
            departing = size;
            cv.notify_all();
        } else {
            const bool released = cv.wait_until(lock, deadline, [&] {
                return (releasing && generation == my_generation) || failed;
            });
            if (!(releasing && generation == my_generation)) {
                if (!released) {
                    fail(std::string(op_name(op)) + " timed out after " + std::to_string(timeout.count()) +
                         " ms on rank " + std::to_string(rank) + " (" + std::to_string(arrived) + "/" +
                         std::to_string(size) + " members arrived)");
                }
                throw CommError(failure);
            }
        }

        std::vector<double> out = result;
        const std::string error = round_error;
        if (--departing == 0) {
            releasing = false;
            arrived = 0;
            ++generation;
            cv.notify_all();
        }
        if (!error.empty()) {
            fail(error);
            throw CommError(error);
        }
        return out;
    }
};

namespace {

class InProcessHandle final : public SyncHandle {
public:
    InProcessHandle(std::shared_ptr<InProcessGroup::State> state, std::size_t rank)
        : state_(std::move(state)), rank_(rank) {}

    std::size_t rank() const noexcept override { return rank_; }
    std::size_t size() const noexcept override { return state_->size; }

    std::vector<double> allreduce_sum(std::span<const double> local) override {
        if (state_->size == 1) return {local.begin(), local.end()};
        return state_->collective(rank_, Op::Sum, local, 0);
    }

    std::vector<double> broadcast(std::span<const double> value, std::size_t root) override {
        if (root >= state_->size) throw InvalidArgument("comm", "broadcast root out of range");
        if (state_->size == 1) return {value.begin(), value.end()};
        return state_->collective(rank_, Op::Broadcast, value, root);
    }

    void barrier() override {
        if (state_->size == 1) return;
        state_->collective(rank_, Op::Barrier, {}, 0);
    }

    std::uint64_t bytes_sent() const noexcept override { return 0; }

    void abort(const std::string& reason) noexcept override {
        std::lock_guard lock(state_->mutex);
        state_->fail("rank " + std::to_string(rank_) + " aborted: " + reason);
    }

private:
    std::shared_ptr<InProcessGroup::State> state_;
    std::size_t rank_;
};

}  // namespace

InProcessGroup::InProcessGroup(std::size_t size, std::chrono::milliseconds timeout) {
    if (size == 0) throw InvalidArgument("comm", "group size must be >= 1");
    state_ = std::make_shared<State>(size, timeout);
}

InProcessGroup::~InProcessGroup() = default;

std::size_t InProcessGroup::size() const noexcept { return state_->size; }

std::unique_ptr<SyncHandle> InProcessGroup::handle(std::size_t rank) {
    std::lock_guard lock(state_->mutex);
    if (rank >= state_->size) throw InvalidArgument("comm", "rank " + std::to_string(rank) + " out of range");
    if (state_->claimed[rank]) throw InvalidArgument("comm", "rank " + std::to_string(rank) + " already claimed");
    state_->claimed[rank] = true;
    return std::make_unique<InProcessHandle>(state_, rank);
}

}  // namespace psgd
