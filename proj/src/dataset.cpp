#include "psgd/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string_view>

#include "psgd/error.hpp"
#include "psgd/random.hpp"

namespace psgd {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f'; }

std::string_view next_token(std::string_view& rest) {
    std::size_t start = 0;
    while (start < rest.size() && is_space(rest[start])) ++start;
    std::size_t stop = start;
    while (stop < rest.size() && !is_space(rest[stop])) ++stop;
    std::string_view token = rest.substr(start, stop - start);
    rest.remove_prefix(stop);
    return token;
}

bool parse_double(std::string_view text, double& out) {
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    if (text.empty()) return false;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc{} && ptr == text.data() + text.size() && std::isfinite(out);
}

int parse_label(std::string_view token, std::size_t line, bool zero_as_negative) {
    double value = 0.0;
    if (!parse_double(token, value)) {
        throw ParseError(line, "non-numeric label '" + std::string(token) + "'");
    }
    if (value == 1.0) return 1;
    if (value == -1.0) return -1;
    if (value == 0.0) {
        if (zero_as_negative) return -1;
        throw ParseError(line, "label 0 is only accepted with --zero-as-negative");
    }
    throw ParseError(line, "label '" + std::string(token) + "' is not one of +1/-1");
}

Feature parse_feature(std::string_view token, std::size_t line) {
    const auto colon = token.find(':');
    if (colon == std::string_view::npos) {
        throw ParseError(line, "expected index:value, got '" + std::string(token) + "'");
    }
    const std::string_view index_text = token.substr(0, colon);
    const std::string_view value_text = token.substr(colon + 1);

    std::uint64_t index = 0;
    auto [ptr, ec] = std::from_chars(index_text.data(), index_text.data() + index_text.size(), index);
    if (index_text.empty() || ec != std::errc{} || ptr != index_text.data() + index_text.size() ||
        index > UINT32_MAX) {
        throw ParseError(line, "non-numeric feature index '" + std::string(index_text) + "'");
    }
    if (index < 1) throw ParseError(line, "feature index must be >= 1");

    double value = 0.0;
    if (!parse_double(value_text, value)) {
        throw ParseError(line, "non-numeric feature value '" + std::string(value_text) + "'");
    }
    return {static_cast<std::uint32_t>(index), value};
}

void write_double(std::ostream& out, double value) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    out.write(buf, ptr - buf);
}

}  // namespace

Dataset::Dataset(std::vector<Sample> samples, std::size_t dimension)
    : samples_(std::move(samples)), dimension_(dimension) {
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const Sample& s = samples_[i];
        if (s.label != 1 && s.label != -1) {
            throw InvalidArgument("dataset", "sample " + std::to_string(i) + " has label " +
                                                 std::to_string(s.label) + ", expected +1 or -1");
        }
        std::uint32_t prev = 0;
        for (const Feature& f : s.features) {
            if (f.index <= prev) {
                throw InvalidArgument("dataset", "sample " + std::to_string(i) +
                                                     " has non-increasing or zero feature index");
            }
            prev = f.index;
        }
        if (prev > dimension_) {
            throw InvalidArgument("dataset", "sample " + std::to_string(i) + " has feature index " +
                                                 std::to_string(prev) + " above dimension " +
                                                 std::to_string(dimension_));
        }
    }
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
    std::vector<Sample> picked;
    picked.reserve(indices.size());
    for (std::size_t i : indices) picked.push_back(samples_.at(i));
    Dataset out;
    out.samples_ = std::move(picked);
    out.dimension_ = dimension_;
    return out;
}

std::size_t Dataset::positive_count() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(samples_.begin(), samples_.end(), [](const Sample& s) { return s.label > 0; }));
}

Dataset parse_libsvm(std::istream& in, const ParseOptions& options) {
    std::vector<Sample> samples;
    std::uint32_t max_index = 0;
    std::string line;
    std::size_t line_no = 0;

    while (std::getline(in, line)) {
        ++line_no;
        std::string_view rest = line;
        if (const auto hash = rest.find('#'); hash != std::string_view::npos) rest = rest.substr(0, hash);

        const std::string_view label_token = next_token(rest);
        if (label_token.empty()) continue;

        Sample sample;
        sample.label = parse_label(label_token, line_no, options.zero_as_negative);
        for (std::string_view token = next_token(rest); !token.empty(); token = next_token(rest)) {
            const Feature f = parse_feature(token, line_no);
            if (!sample.features.empty() && f.index <= sample.features.back().index) {
                throw ParseError(line_no, "non-increasing feature index " + std::to_string(f.index));
            }
            sample.features.push_back(f);
        }
        max_index = std::max(max_index, sample.max_index());
        samples.push_back(std::move(sample));
    }
    if (in.bad()) throw DataError("dataset", "read failure");
    if (samples.empty()) throw DataError("dataset", "empty input: no samples found");

    std::size_t dimension = max_index;
    if (options.dimension) {
        if (*options.dimension < max_index) {
            throw InvalidArgument("dataset", "dimension override " + std::to_string(*options.dimension) +
                                                 " is below the largest feature index " +
                                                 std::to_string(max_index));
        }
        dimension = *options.dimension;
    }
    return Dataset(std::move(samples), dimension);
}

Dataset load_libsvm(const std::string& path, const ParseOptions& options) {
    std::ifstream in(path);
    if (!in) throw DataError("dataset", "cannot open data file '" + path + "'");
    return parse_libsvm(in, options);
}

void write_libsvm(const Dataset& dataset, std::ostream& out) {
    for (const Sample& s : dataset) {
        out << (s.label > 0 ? "+1" : "-1");
        for (const Feature& f : s.features) {
            out << ' ' << f.index << ':';
            write_double(out, f.value);
        }
        out << '\n';
    }
}

SplitSpec SplitSpec::parse(const std::string& text, std::uint64_t seed) {
    double parts[3];
    std::string_view rest = text;
    for (int i = 0; i < 3; ++i) {
        const auto slash = rest.find('/');
        const std::string_view piece = i < 2 ? rest.substr(0, slash) : rest;
        if ((i < 2 && slash == std::string_view::npos) || !parse_double(piece, parts[i])) {
            throw InvalidArgument("dataset", "bad split '" + text + "', expected e.g. 60/20/20");
        }
        if (i < 2) rest.remove_prefix(slash + 1);
    }
    const double total = parts[0] + parts[1] + parts[2];
    // Percentages are recognized by their sum.
    const double scale = std::abs(total - 100.0) < 1e-6 ? 100.0 : 1.0;
    SplitSpec spec{parts[0] / scale, parts[1] / scale, parts[2] / scale, seed};
    spec.validate();
    return spec;
}

void SplitSpec::validate() const {
    for (double f : {train_fraction, cv_fraction, test_fraction}) {
        if (!(f > 0.0 && f < 1.0)) throw InvalidArgument("dataset", "split fractions must lie in (0,1)");
    }
    if (std::abs(train_fraction + cv_fraction + test_fraction - 1.0) > 1e-9) {
        throw InvalidArgument("dataset", "split fractions must sum to 1");
    }
}

SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
    spec.validate();
    // The epsilon keeps exact products such as 35000 * 0.1 from flooring down
    // because of binary representation error.
    auto share = [n](double fraction) {
        return static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction + 1e-9));
    };
    SplitSizes sizes;
    sizes.cv = share(spec.cv_fraction);
    sizes.test = share(spec.test_fraction);
    sizes.train = n - sizes.cv - sizes.test;
    return sizes;
}

Splits split(const Dataset& dataset, const SplitSpec& spec) {
    if (dataset.empty()) throw InvalidArgument("dataset", "cannot split an empty dataset");
    const SplitSizes sizes = split_sizes(dataset.size(), spec);
    if (sizes.train == 0 || sizes.cv == 0 || sizes.test == 0) {
        throw InvalidArgument("dataset", "split of " + std::to_string(dataset.size()) +
                                             " samples leaves an empty train, cv or test set");
    }
    const std::vector<std::size_t> order = shuffled_indices(dataset.size(), spec.seed);
    const std::span<const std::size_t> all(order);
    return Splits{
        dataset.select(all.subspan(0, sizes.train)),
        dataset.select(all.subspan(sizes.train, sizes.cv)),
        dataset.select(all.subspan(sizes.train + sizes.cv, sizes.test)),
    };
}

void shuffle_in_place(std::vector<std::size_t>& indices, std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = indices.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(indices[i - 1], indices[j]);
    }
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle_in_place(order, seed);
    return order;
}

Dataset shuffle(const Dataset& dataset, std::uint64_t seed) {
    const auto order = shuffled_indices(dataset.size(), seed);
    return dataset.select(order);
}

std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t epoch) noexcept {
    return splitmix64(splitmix64(seed) ^ (epoch + 1) * 0xd1b54a32d192ed03ULL);
}

std::vector<std::vector<std::size_t>> partition_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
    if (k == 0) throw InvalidArgument("dataset", "partition count must be >= 1");
    if (k > n) {
        throw InvalidArgument("dataset", "cannot partition " + std::to_string(n) + " samples into " +
                                             std::to_string(k) + " shards");
    }
    const std::vector<std::size_t> order = shuffled_indices(n, seed);
    const std::size_t shard = n / k;
    std::vector<std::vector<std::size_t>> shards(k);
    for (std::size_t r = 0; r < k; ++r) {
        shards[r].assign(order.begin() + static_cast<std::ptrdiff_t>(r * shard),
                         order.begin() + static_cast<std::ptrdiff_t>((r + 1) * shard));
    }
    return shards;
}

std::vector<Dataset> partition(const Dataset& train, std::size_t k, std::uint64_t seed) {
    std::vector<Dataset> out;
    for (const auto& shard : partition_indices(train.size(), k, seed)) out.push_back(train.select(shard));
    return out;
}

}  // namespace psgd
