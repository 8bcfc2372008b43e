#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "psgd/model_file.hpp"
#include "psgd/synthetic.hpp"
#include "support.hpp"

using namespace psgd;
using psgd::test::TempDir;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
};

Outcome cli(const std::string& args) {
    const std::string cmd = std::string(PSGD_CLI) + " " + args + " 2>&1";
    Outcome o;
    FILE* p = ::popen(cmd.c_str(), "r");
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof(buf), p)) > 0) o.out.append(buf, n);
    const int status = ::pclose(p);
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return o;
}

std::string write_toy(const TempDir& dir, std::size_t n = 240, double noise = 0.0) {
    SyntheticSpec spec;
    spec.samples = n;
    spec.dimension = 8;
    spec.seed = 21;
    spec.label_noise = noise;
    std::ofstream out(dir.file("toy.svm"));
    write_libsvm(make_synthetic(spec), out);
    return dir.file("toy.svm");
}

std::vector<double> weights_of(const std::string& path) { return ModelFile::load(path).weights; }

std::string port_arg() { return "--coordinator 127.0.0.1:" + std::to_string(psgd::test::free_port()); }

}  // namespace

TEST(Cli, SequentialTrainWritesModelAndMetrics) {
    TempDir dir;
    const std::string data = write_toy(dir);
    const Outcome o = cli("train --mode seq --data " + data + " --split 60/20/20 --c 1 --epochs 4 --seed 7 --out " +
                          dir.file("seq"));
    ASSERT_EQ(o.code, 0) << o.out;
    const auto summary = nlohmann::json::parse(o.out);
    EXPECT_EQ(summary["syncs"], 4);
    EXPECT_TRUE(std::filesystem::exists(dir.file("seq/model.json")));
    EXPECT_TRUE(std::filesystem::exists(dir.file("seq/run_toy_1_1_7.csv")));
    EXPECT_TRUE(std::filesystem::exists(dir.file("seq/run_toy_1_1_7.json")));
}

TEST(Cli, ReplicaAndDistributedModelsAgree) {
    TempDir dir;
    const std::string data = write_toy(dir);
    const std::string common = "--data " + data + " --k 4 --block 8 --epochs 3 --seed 5 --restarts 2";
    ASSERT_EQ(cli("train --mode replica " + common + " --out " + dir.file("rep")).code, 0);
    ASSERT_EQ(cli("train --mode dist --backend inproc " + common + " --out " + dir.file("dist")).code, 0);
    const auto a = weights_of(dir.file("rep/model.json"));
    const auto b = weights_of(dir.file("dist/model.json"));
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(std::abs(a[i] - b[i]), 1e-10);
}

TEST(Cli, MissingDataFileNamesPath) {
    TempDir dir;
    const Outcome o = cli("train --data " + dir.file("absent.svm") + " --out " + dir.file("o"));
    EXPECT_EQ(o.code, 2);
    EXPECT_NE(o.out.find("absent.svm"), std::string::npos);
}

TEST(Cli, ExitCodes) {
    TempDir dir;
    const std::string data = write_toy(dir);
    EXPECT_EQ(cli("").code, 1);
    EXPECT_EQ(cli("train --data " + data + " --mode warp").code, 1);
    EXPECT_EQ(cli("train --data " + data + " --mode replica --k 4 --block 100 --out " + dir.file("o")).code, 1);
    psgd::test::write_file(dir.file("bad.svm"), "+1 2:1 1:1\n");
    const Outcome bad = cli("train --data " + dir.file("bad.svm") + " --out " + dir.file("o"));
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.out.find("[dataset] line 1"), std::string::npos);
    psgd::test::write_file(dir.file("huge.svm"), "+1 1:1e308\n+1 1:1e308\n-1 1:1e308\n+1 1:1e308\n+1 1:1e308\n");
    const Outcome diverge = cli("train --data " + dir.file("huge.svm") + " --c 1e10 --out " + dir.file("o"));
    EXPECT_EQ(diverge.code, 3) << diverge.out;
    EXPECT_NE(diverge.out.find("[trainers]"), std::string::npos);
}

TEST(Cli, EvaluateReportsAccuracyAndConfusion) {
    TempDir dir;
    const std::string data = write_toy(dir);
    ASSERT_EQ(cli("train --mode seq --data " + data + " --epochs 20 --c 0.1 --out " + dir.file("m")).code, 0);
    const Outcome o = cli("evaluate --model " + dir.file("m/model.json") + " --data " + data);
    ASSERT_EQ(o.code, 0) << o.out;
    const auto j = nlohmann::json::parse(o.out);
    EXPECT_EQ(j["count"], 240);
    const auto& c = j["confusion"];
    EXPECT_EQ(c["true_positive"].get<int>() + c["false_positive"].get<int>() + c["true_negative"].get<int>() +
                  c["false_negative"].get<int>(),
              240);
    EXPECT_GT(j["accuracy"].get<double>(), 0.9);

    const Outcome test_part = cli("evaluate --model " + dir.file("m/model.json") + " --data " + data +
                                  " --split 60/20/20 --subset test");
    EXPECT_EQ(nlohmann::json::parse(test_part.out)["count"], 48);
}

TEST(Cli, ZeroModelScoresPositiveFraction) {
    TempDir dir;
    psgd::test::write_file(dir.file("bal.svm"), "+1 1:1\n-1 1:2\n+1 2:1\n-1 2:-1\n");
    ModelFile m;
    m.dimension = 2;
    m.weights = {0.0, 0.0};
    m.save(dir.file("zero.json"));
    const Outcome o = cli("evaluate --model " + dir.file("zero.json") + " --data " + dir.file("bal.svm"));
    ASSERT_EQ(o.code, 0) << o.out;
    EXPECT_EQ(nlohmann::json::parse(o.out)["accuracy"], 0.5);
}

TEST(Cli, SweepFollowsSyncCountLawAndSkips) {
    TempDir dir;
    const std::string data = write_toy(dir, 200);
    const Outcome o = cli("sweep --mode dist --data " + data + " --ks 4,64 --blocks 1,2,4,8,512 --epochs 2 --out " +
                          dir.file("sw"));
    ASSERT_EQ(o.code, 0) << o.out;
    EXPECT_NE(o.out.find("skip K=4 B=512"), std::string::npos);
    std::ifstream in(dir.file("sw/breakdown.csv"));
    std::string line;
    std::getline(in, line);
    std::size_t rows = 0;
    // 120 train samples, K=4 -> shard 30; K=64 -> shard 1
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string k, b, syncs;
        std::getline(ss, k, ',');
        std::getline(ss, b, ',');
        std::getline(ss, syncs, ',');
        const std::size_t shard = 120 / std::stoul(k);
        const std::size_t block = std::stoul(b);
        EXPECT_EQ(std::stoul(syncs), 2 * ((shard + block - 1) / block)) << line;
        ++rows;
    }
    EXPECT_EQ(rows, 5u);
    EXPECT_TRUE(std::filesystem::exists(dir.file("sw/run_toy_4_8_0.csv")));
}

TEST(Cli, SocketWorkersProduceIdenticalModels) {
    TempDir dir;
    const std::string data = write_toy(dir);
    const std::string args = "--data " + data + " --k 2 --block 4 --epochs 2 --seed 3 --sync-timeout-secs 20 " +
                             port_arg() + " --out " + dir.file("w");
    Outcome r1;
    std::thread peer([&] { r1 = cli("worker --rank 1 --group-size 2 " + args); });
    const Outcome r0 = cli("worker --rank 0 --group-size 2 " + args);
    peer.join();
    ASSERT_EQ(r0.code, 0) << r0.out;
    ASSERT_EQ(r1.code, 0) << r1.out;
    EXPECT_EQ(psgd::test::read_file(dir.file("w/model.rank0.json")), psgd::test::read_file(dir.file("w/model.rank1.json")));

    ASSERT_EQ(cli("train --mode replica --data " + data + " --k 2 --block 4 --epochs 2 --seed 3 --out " +
                  dir.file("r"))
                  .code,
              0);
    EXPECT_EQ(weights_of(dir.file("w/model.json")), weights_of(dir.file("r/model.json")));
}

TEST(Cli, SpawnedSocketGroupMatchesInProcess) {
    TempDir dir;
    const std::string data = write_toy(dir);
    const std::string common = "--mode dist --data " + data + " --k 3 --block 5 --epochs 2 --seed 4 ";
    ASSERT_EQ(cli("train " + common + "--backend socket --topology ring " + port_arg() + " --out " + dir.file("s")).code, 0);
    ASSERT_EQ(cli("train " + common + "--backend inproc --out " + dir.file("i")).code, 0);
    EXPECT_EQ(weights_of(dir.file("s/model.json")), weights_of(dir.file("i/model.json")));
    EXPECT_TRUE(std::filesystem::exists(dir.file("s/model.rank2.json")));
}

TEST(Cli, SingleWorkerMatchesSequential) {
    TempDir dir;
    const std::string data = write_toy(dir);
    ASSERT_EQ(cli("worker --rank 0 --group-size 1 --data " + data + " --epochs 3 " + port_arg() + " --out " +
                  dir.file("w"))
                  .code,
              0);
    ASSERT_EQ(cli("train --mode seq --data " + data + " --epochs 3 --out " + dir.file("s")).code, 0);
    EXPECT_EQ(weights_of(dir.file("w/model.json")), weights_of(dir.file("s/model.json")));
}

TEST(Cli, UnreachableCoordinatorFailsWithinTimeout) {
    TempDir dir;
    const std::string data = write_toy(dir);
    const auto start = std::chrono::steady_clock::now();
    const Outcome o = cli("worker --rank 1 --group-size 2 --data " + data + " --sync-timeout-secs 0.5 " + port_arg() +
                          " --out " + dir.file("w"));
    EXPECT_EQ(o.code, 4) << o.out;
    EXPECT_NE(o.out.find("[comm]"), std::string::npos);
    EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(10));
}

TEST(Cli, RepeatedRunsGiveIdenticalModelFiles) {
    TempDir dir;
    const std::string data = write_toy(dir);
    const std::string args = "train --mode dist --data " + data + " --k 2 --block 3 --epochs 2 --restarts 3 --seed 9";
    ASSERT_EQ(cli(args + " --out " + dir.file("a")).code, 0);
    ASSERT_EQ(cli(args + " --out " + dir.file("b")).code, 0);
    EXPECT_EQ(psgd::test::read_file(dir.file("a/model.json")), psgd::test::read_file(dir.file("b/model.json")));
}

TEST(Cli, ConfigFileSuppliesOptions) {
    TempDir dir;
    const std::string data = write_toy(dir);
    psgd::test::write_file(dir.file("run.toml"), "mode = \"replica\"\nk = 2\nblock = 4\nepochs = 2\nseed = 3\n");
    ASSERT_EQ(cli("train --config " + dir.file("run.toml") + " --data " + data + " --out " + dir.file("c")).code, 0);
    EXPECT_TRUE(std::filesystem::exists(dir.file("c/run_toy_2_4_3.csv")));
}
