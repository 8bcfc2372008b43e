#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace psgd {

struct Feature {
    std::uint32_t index;  // 1-based
    double value;

    bool operator==(const Feature&) const = default;
};

// One training point. Features are kept sorted by strictly increasing index.
struct Sample {
    std::vector<Feature> features;
    int label = 1;  // +1 or -1

    std::uint32_t max_index() const noexcept { return features.empty() ? 0 : features.back().index; }

    bool operator==(const Sample&) const = default;
};

// Immutable ordered collection of samples with a fixed feature dimension.
// Safe to share read-only across worker threads.
class Dataset {
public:
    Dataset() = default;

    // Throws InvalidArgument if a sample has a label outside {+1,-1}, unsorted
    // or zero feature indices, or an index above `dimension`.
    Dataset(std::vector<Sample> samples, std::size_t dimension);

    std::size_t size() const noexcept { return samples_.size(); }
    bool empty() const noexcept { return samples_.empty(); }
    std::size_t dimension() const noexcept { return dimension_; }

    const Sample& operator[](std::size_t i) const { return samples_[i]; }
    std::span<const Sample> samples() const noexcept { return samples_; }

    auto begin() const noexcept { return samples_.begin(); }
    auto end() const noexcept { return samples_.end(); }

    // Materializes the samples at `indices`, in that order.
    Dataset select(std::span<const std::size_t> indices) const;

    std::size_t positive_count() const noexcept;

    bool operator==(const Dataset&) const = default;

private:
    std::vector<Sample> samples_;
    std::size_t dimension_ = 0;
};

struct ParseOptions {
    std::optional<std::size_t> dimension;  // must be >= the largest index seen
    bool zero_as_negative = false;         // accept label 0 and map it to -1
};

// LIBSVM text format: `label idx:val idx:val ...`, one sample per line.
// Blank lines and `#` comments are skipped. Throws ParseError (with the
// 1-based line number) on malformed input and DataError on an empty stream.
Dataset parse_libsvm(std::istream& in, const ParseOptions& options = {});
Dataset load_libsvm(const std::string& path, const ParseOptions& options = {});

// Writes values with shortest round-trip formatting so that reparsing
// yields an identical Dataset.
void write_libsvm(const Dataset& dataset, std::ostream& out);

struct SplitSpec {
    double train_fraction = 0.6;
    double cv_fraction = 0.2;
    double test_fraction = 0.2;
    std::uint64_t seed = 0;

    // Parses "60/20/20" (percentages) or "0.6/0.2/0.2".
    static SplitSpec parse(const std::string& text, std::uint64_t seed = 0);

    // Throws InvalidArgument unless each fraction is in (0,1) and they sum to 1.
    void validate() const;
};

struct SplitSizes {
    std::size_t train = 0;
    std::size_t cv = 0;
    std::size_t test = 0;

    bool operator==(const SplitSizes&) const = default;
};

struct Splits {
    Dataset train;
    Dataset cv;
    Dataset test;
};

// cv and test get floor(n * fraction); train takes the remainder.
SplitSizes split_sizes(std::size_t n, const SplitSpec& spec);

// Seeded shuffle followed by contiguous train|cv|test assignment.
Splits split(const Dataset& dataset, const SplitSpec& spec);

// Permutation of 0..n-1; a pure function of (seed, n).
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

Dataset shuffle(const Dataset& dataset, std::uint64_t seed);

// Shuffles `indices` in place with the same generator as shuffled_indices.
void shuffle_in_place(std::vector<std::size_t>& indices, std::uint64_t seed);

// Sub-seed for a given epoch, used when per-epoch reshuffling is enabled.
std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t epoch) noexcept;

// k disjoint equal shards of floor(n/k) indices each, after a seeded shuffle;
// the trailing n mod k shuffled samples are dropped.
std::vector<std::vector<std::size_t>> partition_indices(std::size_t n, std::size_t k, std::uint64_t seed);

std::vector<Dataset> partition(const Dataset& train, std::size_t k, std::uint64_t seed);

}  // namespace psgd
