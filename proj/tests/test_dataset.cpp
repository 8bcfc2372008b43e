#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "psgd/dataset.hpp"
#include "psgd/error.hpp"
#include "psgd/synthetic.hpp"
#include "support.hpp"

using namespace psgd;
using psgd::test::parse_text;

TEST(ParseLibsvm, SingleLine) {
    const Dataset d = parse_text("+1 1:0.5 3:2.0\n");
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d.dimension(), 3u);
    EXPECT_EQ(d[0].label, 1);
    EXPECT_EQ(d[0].features, (std::vector<Feature>{{1, 0.5}, {3, 2.0}}));
}

TEST(ParseLibsvm, LabelOnlyLineIsLegal) {
    const Dataset d = parse_text("-1\n+1 2:1\n");
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(d[0].label, -1);
    EXPECT_TRUE(d[0].features.empty());
}

TEST(ParseLibsvm, NonIncreasingIndexReportsLine) {
    try {
        parse_text("+1 3:1.0 2:1.0\n");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 1u);
        EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
    }
    try {
        parse_text("+1 1:1\n\n# comment\n-1 2:1 2:3\n");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 4u);
    }
}

TEST(ParseLibsvm, MalformedTokens) {
    EXPECT_THROW(parse_text("abc 1:1\n"), ParseError);
    EXPECT_THROW(parse_text("+1 x:1\n"), ParseError);
    EXPECT_THROW(parse_text("+1 1:y\n"), ParseError);
    EXPECT_THROW(parse_text("+1 0:1\n"), ParseError);
    EXPECT_THROW(parse_text("+1 11\n"), ParseError);
    EXPECT_THROW(parse_text("2 1:1\n"), ParseError);
}

TEST(ParseLibsvm, LabelSpellings) {
    const Dataset d = parse_text("1 1:1\n+1 1:1\n-1 1:1\n");
    EXPECT_EQ(d[0].label, 1);
    EXPECT_EQ(d[1].label, 1);
    EXPECT_EQ(d[2].label, -1);
}

TEST(ParseLibsvm, ZeroLabelNeedsFlag) {
    EXPECT_THROW(parse_text("0 1:1\n"), ParseError);
    ParseOptions opts;
    opts.zero_as_negative = true;
    const Dataset d = parse_text("0 1:1\n1 1:2\n", opts);
    EXPECT_EQ(d[0].label, -1);
    EXPECT_EQ(d[1].label, 1);
}

TEST(ParseLibsvm, EmptyStreamIsAnError) {
    EXPECT_THROW(parse_text(""), DataError);
    EXPECT_THROW(parse_text("\n# only a comment\n"), DataError);
}

TEST(ParseLibsvm, DimensionOverride) {
    ParseOptions opts;
    opts.dimension = 10;
    EXPECT_EQ(parse_text("+1 3:1\n", opts).dimension(), 10u);
    opts.dimension = 2;
    EXPECT_THROW(parse_text("+1 3:1\n", opts), InvalidArgument);
}

TEST(ParseLibsvm, PreservesFileOrder) {
    const Dataset d = parse_text("-1 1:1\n+1 1:2\n-1 1:3\n");
    EXPECT_EQ(d[0].features[0].value, 1.0);
    EXPECT_EQ(d[1].features[0].value, 2.0);
    EXPECT_EQ(d[2].features[0].value, 3.0);
}

TEST(ParseLibsvm, MissingFileNamesPath) {
    try {
        load_libsvm("/nonexistent/data.svm");
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/data.svm"), std::string::npos);
    }
}

TEST(ParseLibsvm, RoundTripIsExact) {
    SyntheticSpec spec;
    spec.samples = 200;
    spec.dimension = 30;
    spec.density = 0.3;
    spec.seed = 9;
    const Dataset original = make_synthetic(spec);
    std::ostringstream out;
    write_libsvm(original, out);
    ParseOptions opts;
    opts.dimension = original.dimension();
    EXPECT_EQ(parse_text(out.str(), opts), original);
}

TEST(DatasetType, RejectsInvalidSamples) {
    using psgd::test::sample;
    EXPECT_THROW(Dataset({sample(0, {{1, 1.0}})}, 2), InvalidArgument);
    EXPECT_THROW(Dataset({sample(1, {{2, 1.0}, {1, 1.0}})}, 2), InvalidArgument);
    EXPECT_THROW(Dataset({sample(1, {{3, 1.0}})}, 2), InvalidArgument);
}

TEST(Split, Sizes) {
    const SplitSpec s6 = SplitSpec::parse("60/20/20");
    const SplitSpec s8 = SplitSpec::parse("80/10/10");
    EXPECT_EQ(split_sizes(35000, s6), (SplitSizes{21000, 7000, 7000}));
    EXPECT_EQ(split_sizes(35000, s8), (SplitSizes{28000, 3500, 3500}));
    EXPECT_EQ(split_sizes(10, s6), (SplitSizes{6, 2, 2}));
    EXPECT_EQ(split_sizes(10, SplitSpec::parse("0.6/0.2/0.2")), (SplitSizes{6, 2, 2}));
}

TEST(Split, InvalidSpecs) {
    EXPECT_THROW(SplitSpec::parse("60/20"), InvalidArgument);
    EXPECT_THROW(SplitSpec::parse("60/30/20"), InvalidArgument);
    EXPECT_THROW(SplitSpec::parse("100/0/0"), InvalidArgument);
    EXPECT_THROW(SplitSpec::parse("a/b/c"), InvalidArgument);
}

TEST(Split, EmptyPartIsAnError) {
    const Dataset d = parse_text("+1 1:1\n-1 1:2\n");
    EXPECT_THROW(split(d, SplitSpec::parse("60/20/20")), InvalidArgument);
}

TEST(Split, IsADisjointCoverAndDeterministic) {
    SyntheticSpec spec;
    spec.samples = 101;
    spec.dimension = 4;
    const Dataset d = make_synthetic(spec);
    const SplitSpec s = SplitSpec::parse("60/20/20", 42);
    const Splits a = split(d, s);
    const Splits b = split(d, s);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.cv, b.cv);
    EXPECT_EQ(a.test, b.test);
    EXPECT_EQ(a.train.size() + a.cv.size() + a.test.size(), d.size());

    // Concatenating the parts reproduces the seeded shuffle exactly.
    const Dataset shuffled = shuffle(d, 42);
    std::size_t i = 0;
    for (const Dataset* part : {&a.train, &a.cv, &a.test}) {
        for (const Sample& s2 : *part) EXPECT_EQ(s2, shuffled[i++]);
    }
}

TEST(Shuffle, PureFunctionOfSeedAndSize) {
    EXPECT_EQ(shuffled_indices(1, 5), std::vector<std::size_t>{0});
    EXPECT_EQ(shuffled_indices(100, 5), shuffled_indices(100, 5));
    EXPECT_NE(shuffled_indices(100, 5), shuffled_indices(100, 6));

    auto perm = shuffled_indices(100, 5);
    std::sort(perm.begin(), perm.end());
    std::vector<std::size_t> iota(100);
    std::iota(iota.begin(), iota.end(), 0);
    EXPECT_EQ(perm, iota);

    std::vector<std::size_t> in_place = iota;
    shuffle_in_place(in_place, 5);
    EXPECT_EQ(in_place, shuffled_indices(100, 5));
}

TEST(Shuffle, SingletonDatasetUnchanged) {
    const Dataset d = parse_text("+1 1:1\n");
    EXPECT_EQ(shuffle(d, 123), d);
}

TEST(Shuffle, EpochSeedsDiffer) {
    EXPECT_NE(epoch_seed(1, 0), epoch_seed(1, 1));
    EXPECT_EQ(epoch_seed(1, 3), epoch_seed(1, 3));
}

TEST(Partition, ShardArithmetic) {
    auto sizes = [](std::size_t n, std::size_t k) {
        std::vector<std::size_t> out;
        for (const auto& s : partition_indices(n, k, 1)) out.push_back(s.size());
        return out;
    };
    EXPECT_EQ(sizes(28000, 32), std::vector<std::size_t>(32, 875));
    EXPECT_EQ(sizes(10, 3), std::vector<std::size_t>(3, 3));
    EXPECT_EQ(sizes(10, 1), std::vector<std::size_t>{10});
    EXPECT_THROW(partition_indices(3, 4, 1), InvalidArgument);
    EXPECT_THROW(partition_indices(3, 0, 1), InvalidArgument);
}

TEST(Partition, ShardsAreDisjointAndEqual) {
    for (std::size_t k : {1, 2, 3, 7}) {
        const auto shards = partition_indices(50, k, 11);
        std::set<std::size_t> seen;
        for (const auto& s : shards) {
            EXPECT_EQ(s.size(), 50 / k);
            for (std::size_t i : s) EXPECT_TRUE(seen.insert(i).second);
        }
        EXPECT_EQ(seen.size(), k * (50 / k));
    }
}

TEST(Partition, MaterializedShardsMatchIndices) {
    SyntheticSpec spec;
    spec.samples = 20;
    spec.dimension = 3;
    const Dataset d = make_synthetic(spec);
    const auto shards = partition(d, 3, 4);
    const auto idx = partition_indices(d.size(), 3, 4);
    ASSERT_EQ(shards.size(), 3u);
    for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(shards[r], d.select(idx[r]));
}
