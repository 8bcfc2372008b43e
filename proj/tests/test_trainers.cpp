#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "psgd/error.hpp"
#include "psgd/synthetic.hpp"
#include "psgd/trainers.hpp"
#include "support.hpp"

using namespace psgd;
using psgd::test::sample;

namespace {

Dataset toy(std::size_t n = 64, std::uint64_t seed = 1, std::size_t d = 6) {
    SyntheticSpec spec;
    spec.samples = n;
    spec.dimension = d;
    spec.seed = seed;
    return make_synthetic(spec);
}

TrainerConfig config(std::size_t k, std::size_t b, std::size_t epochs = 3, std::uint64_t seed = 0) {
    TrainerConfig c;
    c.parallelism = k;
    c.block_size = b;
    c.hyper.t_max = epochs;
    c.seed = seed;
    return c;
}

ModelState zeros(std::size_t d) { return ModelState{Weights(d, 0.0), 0}; }

}  // namespace

TEST(Sequential, SingleSampleOneEpoch) {
    const Dataset d({sample(-1, {{1, 2.0}, {3, 0.5}})}, 3);
    const TrainingResult r = train_sequential(d, config(1, 1, 1), zeros(3));
    EXPECT_EQ(r.final_model.weights, (Weights{-2.0, 0.0, -0.5}));
    EXPECT_EQ(r.final_model.epoch, 1u);
    EXPECT_EQ(r.log.records().size(), 1u);
}

TEST(Sequential, TwoSamplesFollowShardOrder) {
    const Dataset d({sample(1, {{1, 1.0}}), sample(-1, {{2, 1.0}})}, 2);
    const TrainerConfig cfg = config(1, 1, 1, 5);
    const auto order = partition_indices(2, 1, cfg.seed).front();
    Weights w{0, 0};
    for (std::size_t i : order) w = sgd_step(w, d[i], 1.0, 1.0);
    EXPECT_EQ(train_sequential(d, cfg, zeros(2)).final_model.weights, w);
}

TEST(Sequential, ReducesObjectiveOnSeparableData) {
    SyntheticSpec spec;
    spec.samples = 200;
    spec.dimension = 5;
    spec.gap = 0.5;
    spec.seed = 3;
    const Dataset d = make_synthetic(spec);
    const ModelState init = zeros(5);
    const TrainingResult r = train_sequential(d, config(1, 1, 200), init);
    EXPECT_LT(objective(r.final_model.weights, d, 1.0), objective(init.weights, d, 1.0));
    EXPECT_EQ(accuracy(r.final_model.weights, d), 1.0);
}

TEST(Sequential, AbortsOnNonFiniteWeights) {
    const Dataset d({sample(1, {{1, 1e308}}), sample(1, {{1, 1e308}})}, 1);
    TrainerConfig cfg = config(1, 1, 1);
    cfg.hyper.c = 1e10;
    try {
        train_sequential(d, cfg, zeros(1));
        FAIL() << "expected TrainingAbort";
    } catch (const TrainingAbort& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("sample index"), std::string::npos);
    }
}

TEST(Replica, OneRoundIsMeanOfSteps) {
    const Dataset d({sample(1, {{1, 1.0}}), sample(-1, {{2, 2.0}})}, 2);
    const TrainerConfig cfg = config(2, 1, 1, 4);
    const TrainingResult r = train_replica(d, cfg, zeros(2));
    const auto shards = partition_indices(2, 2, 4);
    const Weights a = sgd_step(Weights{0, 0}, d[shards[0][0]], 1.0, 1.0);
    const Weights b = sgd_step(Weights{0, 0}, d[shards[1][0]], 1.0, 1.0);
    EXPECT_EQ(r.final_model.weights, (Weights{(a[0] + b[0]) / 2, (a[1] + b[1]) / 2}));
}

TEST(Replica, K1B1IsSequentialAtEveryStep) {
    const Dataset d = toy(50, 7);
    const TrainerConfig cfg = config(1, 1, 4, 11);
    const ModelState init = gaussian_init(d.dimension(), 0.01, 11);
    std::vector<Weights> seq_path, rep_path;
    TrainHooks h1, h2;
    h1.on_sync = [&](std::size_t, std::size_t, std::span<const double> w) { seq_path.emplace_back(w.begin(), w.end()); };
    h2.on_sync = [&](std::size_t, std::size_t, std::span<const double> w) { rep_path.emplace_back(w.begin(), w.end()); };
    train_sequential(d, cfg, init, h1);
    train_replica(d, cfg, init, h2);
    ASSERT_EQ(seq_path.size(), 200u);
    EXPECT_EQ(seq_path, rep_path);
}

TEST(Replica, PartialLastBlockGetsASync) {
    const Dataset d = toy(22);
    const TrainerConfig cfg = config(2, 4, 2);
    const TrainingResult r = train_replica(d, cfg, zeros(d.dimension()));
    // shard 11, B 4 -> blocks of 4, 4, 3
    EXPECT_EQ(cfg.syncs_per_epoch(d.size()), 3u);
    EXPECT_EQ(r.log.totals().syncs, 6u);
}

TEST(Replica, RejectsOversizedBlocks) {
    const Dataset d = toy(20);
    EXPECT_THROW(train_replica(d, config(4, 6), zeros(d.dimension())), InvalidArgument);
    EXPECT_THROW(train_replica(d, config(21, 1), zeros(d.dimension())), InvalidArgument);
    EXPECT_THROW(train_replica(d, config(2, 0), zeros(d.dimension())), InvalidArgument);
    EXPECT_THROW(train_replica(d, config(2, 2), zeros(d.dimension() + 1)), InvalidArgument);
}

TEST(Distributed, MatchesReplicaInProcess) {
    const Dataset d = toy(96, 2);
    for (std::size_t k : {1, 2, 4}) {
        for (std::size_t b : {1, 3, 8}) {
            const TrainerConfig cfg = config(k, b, 3, 9);
            const ModelState init = gaussian_init(d.dimension(), 0.01, 9);
            InProcessGroup group(k);
            const TrainingResult dist = train_distributed(d, cfg, init, group);
            const TrainingResult rep = train_replica(d, cfg, init);
            EXPECT_EQ(dist.final_model.weights, rep.final_model.weights) << "K=" << k << " B=" << b;
            EXPECT_EQ(dist.log.totals().syncs, rep.log.totals().syncs);
        }
    }
}

TEST(Distributed, K1WholeShardBlockIsSequential) {
    const Dataset d = toy(40, 5);
    const TrainerConfig cfg = config(1, 40, 3, 2);
    const ModelState init = gaussian_init(d.dimension(), 0.01, 2);
    InProcessGroup group(1);
    EXPECT_EQ(train_distributed(d, cfg, init, group).final_model.weights,
              train_sequential(d, cfg, init).final_model.weights);
}

TEST(Distributed, GroupSizeMustMatch) {
    const Dataset d = toy(40);
    InProcessGroup group(3);
    EXPECT_THROW(train_distributed(d, config(2, 1), zeros(d.dimension()), group), InvalidArgument);
}

TEST(Distributed, DivergenceAbortsEveryWorker) {
    std::vector<Sample> samples;
    for (int i = 0; i < 8; ++i) samples.push_back(sample(1, {{1, i == 3 ? 1e308 : 1.0}}));
    const Dataset d(samples, 1);
    TrainerConfig cfg = config(4, 2, 1);
    cfg.hyper.c = 1e10;
    InProcessGroup group(4, std::chrono::milliseconds(5000));
    EXPECT_THROW(train_distributed(d, cfg, zeros(1), group), TrainingAbort);
}

TEST(Distributed, ReshuffleKeepsEquivalence) {
    const Dataset d = toy(64, 4);
    TrainerConfig cfg = config(4, 2, 3, 1);
    cfg.reshuffle_each_epoch = true;
    const ModelState init = gaussian_init(d.dimension(), 0.01, 1);
    InProcessGroup group(4);
    const TrainingResult dist = train_distributed(d, cfg, init, group);
    EXPECT_EQ(dist.final_model.weights, train_replica(d, cfg, init).final_model.weights);
    cfg.reshuffle_each_epoch = false;
    EXPECT_NE(dist.final_model.weights, train_replica(d, cfg, init).final_model.weights);
}

TEST(Cadence, ParseAndDue) {
    EXPECT_EQ(EvalCadence::parse("every-sync").kind, EvalCadence::Kind::EverySync);
    const EvalCadence n = EvalCadence::parse("every:3");
    EXPECT_EQ(n.every, 3u);
    EXPECT_FALSE(n.due(2, false));
    EXPECT_TRUE(n.due(3, false));
    EXPECT_EQ(n.str(), "every:3");
    const EvalCadence e = EvalCadence::parse("per-epoch");
    EXPECT_FALSE(e.due(1, false));
    EXPECT_TRUE(e.due(1, true));
    EXPECT_THROW(EvalCadence::parse("every:0"), InvalidArgument);
    EXPECT_THROW(EvalCadence::parse("sometimes"), InvalidArgument);
}

TEST(Cadence, ChangesEvalCountNotWeights) {
    const Dataset d = toy(64, 6);
    const Dataset cv = toy(30, 16);
    TrainHooks hooks;
    hooks.cv = &cv;
    TrainerConfig every = config(2, 2, 2);
    TrainerConfig sparse = every;
    sparse.cadence = EvalCadence::every_n(5);
    const ModelState init = zeros(d.dimension());
    const TrainingResult a = train_replica(d, every, init, hooks);
    const TrainingResult b = train_replica(d, sparse, init, hooks);
    EXPECT_EQ(a.final_model.weights, b.final_model.weights);
    EXPECT_EQ(a.log.totals().evaluations, 32u);
    EXPECT_EQ(b.log.totals().evaluations, 6u);
    EXPECT_EQ(b.log.totals().syncs, 32u);
}

TEST(Distributed, OnlyRankZeroEvaluates) {
    const Dataset d = toy(64, 6);
    const Dataset cv = toy(30, 16);
    TrainHooks hooks;
    hooks.cv = &cv;
    const TrainerConfig cfg = config(2, 4, 2);
    InProcessGroup group(2);
    const TrainingResult r = train_distributed(d, cfg, zeros(d.dimension()), group, hooks);
    EXPECT_EQ(r.log.totals().evaluations, r.log.totals().syncs);
    const TrainingResult rep = train_replica(d, cfg, zeros(d.dimension()), hooks);
    for (std::size_t i = 0; i < r.log.records().size(); ++i) {
        EXPECT_EQ(r.log.records()[i].cv_accuracy, rep.log.records()[i].cv_accuracy);
        EXPECT_EQ(r.log.records()[i].objective, rep.log.records()[i].objective);
    }
}

TEST(Restarts, SingleRestartEqualsDirectCall) {
    const Dataset d = toy(60, 8);
    const Dataset cv = toy(20, 18);
    const TrainerConfig cfg = config(2, 2, 2, 3);
    const TrainingResult h = restart_harness(d, cv, cfg, 1, TrainMode::Replica);
    TrainHooks hooks;
    hooks.cv = &cv;
    const TrainingResult direct = train_replica(d, cfg, gaussian_init(d.dimension(), 0.01, 3), hooks);
    EXPECT_EQ(h.final_model.weights, direct.final_model.weights);
    EXPECT_EQ(h.restarts_used, 1u);
}

TEST(Restarts, PicksBestOfThree) {
    SyntheticSpec spec;
    spec.samples = 120;
    spec.dimension = 8;
    spec.label_noise = 0.2;
    spec.seed = 31;
    const Dataset d = make_synthetic(spec);
    spec.seed = 32;
    spec.samples = 40;
    const Dataset cv = make_synthetic(spec);
    const TrainerConfig cfg = config(1, 1, 1, 100);
    const TrainingResult best = restart_harness(d, cv, cfg, 3, TrainMode::Sequential, 1.0);

    double max_acc = 0.0;
    TrainHooks hooks;
    hooks.cv = &cv;
    for (std::uint64_t s = 100; s < 103; ++s) {
        TrainerConfig c = cfg;
        c.seed = s;
        const auto r = train_sequential(d, c, gaussian_init(d.dimension(), 1.0, s), hooks);
        max_acc = std::max(max_acc, accuracy(r.final_model.weights, cv));
    }
    EXPECT_EQ(*best.log.final_cv_accuracy, max_acc);
    EXPECT_EQ(best.restarts_used, 3u);
}

TEST(Restarts, MeanCurveHasOneEntryPerEvaluation) {
    const Dataset d = toy(60, 8);
    const Dataset cv = toy(20, 18);
    TrainerConfig cfg = config(2, 3, 2);
    cfg.cadence = EvalCadence::every_n(2);
    const TrainingResult r = restart_harness(d, cv, cfg, 3, TrainMode::Distributed);
    EXPECT_EQ(r.mean_cv_curve.size(), r.log.totals().evaluations);
    EXPECT_EQ(r.mean_cv_curve.size(), 10u);
}

TEST(Modes, ParseAndPrint) {
    EXPECT_EQ(parse_mode("seq"), TrainMode::Sequential);
    EXPECT_EQ(parse_mode("replica"), TrainMode::Replica);
    EXPECT_EQ(parse_mode("dist"), TrainMode::Distributed);
    EXPECT_EQ(to_string(TrainMode::Replica), "replica");
    EXPECT_THROW(parse_mode("async"), InvalidArgument);
}
