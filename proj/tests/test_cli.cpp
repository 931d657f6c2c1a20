#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#ifndef HYSTAR_CLI
#error "HYSTAR_CLI must name the command-line binary"
#endif

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

std::string scratch() { return (fs::temp_directory_path() / "hystar_cli_sinkhorn").string(); }

Result run(const std::string& args) {
    const std::string cmd = std::string(HYSTAR_CLI) + " " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) throw std::runtime_error("popen failed");
    Result r;
    std::array<char, 4096> buf;
    while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

const char* tiny_config = R"(# small run for the command-line tests
seed=4
data.n_classes=4
data.samples_per_class_per_style=5
data.image_size=16
encoder.patch_size=4
encoder.d_model=16
encoder.n_heads=2
encoder.n_layers=3
encoder.injected_layers=2
encoder.embed_dim=8
encoder.d_style=6
train.batch_size=8
train.epochs=2
train.eval_every=1
train.lr_static=1e-2
train.lr_hyper=1e-3
experiment.seeds=0
)";

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir = fs::temp_directory_path() / (std::string("hystar_cli_") + info->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
        write("tiny.cfg", tiny_config);
    }
    void TearDown() override { fs::remove_all(dir); }

    void write(const std::string& name, const std::string& text) {
        std::ofstream f(dir / name, std::ios::binary);
        f << text;
    }
    std::string path(const std::string& name) const { return (dir / name).string(); }

    Result gen_tiny() { return run("gen-data --config " + path("tiny.cfg") + " --out " + path("data")); }

    fs::path dir;
};

} // namespace

TEST_F(Cli, GenDataDefaultCounts) {
    const auto r = run("gen-data --out " + path("data"));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("items 1600"), std::string::npos) << r.out;
    EXPECT_TRUE(fs::exists(dir / "data" / "manifest.csv"));
    EXPECT_TRUE(fs::exists(dir / "data" / "resolved.cfg"));
}

TEST_F(Cli, GenDataIsReproducible) {
    const auto a = run("gen-data --config " + path("tiny.cfg") + " --out " + path("a"));
    const auto b = run("gen-data --config " + path("tiny.cfg") + " --out " + path("b"));
    ASSERT_EQ(a.code, 0) << a.out;
    EXPECT_EQ(a.out, b.out);
    EXPECT_NE(a.out.find("checksum"), std::string::npos);
    EXPECT_NE(a.out.find("items 80"), std::string::npos) << a.out;
}

TEST_F(Cli, UnknownKeyIsUsageError) {
    write("bad.cfg", "foo=1\n");
    const auto r = run("gen-data --config " + path("bad.cfg") + " --out " + path("data"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("foo"), std::string::npos) << r.out;
}

TEST_F(Cli, MissingArgumentsAreUsageErrors) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("train --out " + path("o")).code, 2);
    EXPECT_EQ(run("no-such-command").code, 2);
}

TEST_F(Cli, MissingDatasetIsUsageError) {
    const auto r = run("train --config " + path("tiny.cfg") + " --data " + path("nowhere") + " --out " + path("o"));
    EXPECT_EQ(r.code, 2) << r.out;
}

TEST_F(Cli, TrainThenEvalReproducesFinalRow) {
    ASSERT_EQ(gen_tiny().code, 0);
    const auto t = run("train --config " + path("tiny.cfg") + " --data " + path("data") + " --out " + path("train"));
    ASSERT_EQ(t.code, 0) << t.out;
    for (const char* f : {"metrics.csv", "checkpoint.bin", "checkpoint.bin.cfg", "resolved.cfg"})
        EXPECT_TRUE(fs::exists(dir / "train" / f)) << f;
    EXPECT_EQ(slurp(dir / "train" / "resolved.cfg"), slurp(dir / "train" / "checkpoint.bin.cfg"));

    const auto e = run("eval --data " + path("data") + " --out " + path("eval") + " --checkpoint " +
                       path("train/checkpoint.bin"));
    ASSERT_EQ(e.code, 0) << e.out;
    const auto trained = lines(slurp(dir / "train" / "metrics.csv"));
    const auto evaluated = lines(slurp(dir / "eval" / "metrics.csv"));
    ASSERT_EQ(evaluated.size(), 5u); // header, three query styles, mean
    EXPECT_EQ(evaluated[0], "run_id,seed,config_label,epoch,style,top1,top5");
    ASSERT_GE(trained.size(), evaluated.size());
    const std::vector<std::string> last(trained.end() - 4, trained.end());
    EXPECT_EQ(last, std::vector<std::string>(evaluated.begin() + 1, evaluated.end()));
}

TEST_F(Cli, TrainingIsByteReproducible) {
    ASSERT_EQ(gen_tiny().code, 0);
    for (const char* out : {"r1", "r2"})
        ASSERT_EQ(run("train --config " + path("tiny.cfg") + " --data " + path("data") + " --out " + path(out)).code, 0);
    for (const char* f : {"metrics.csv", "checkpoint.bin", "resolved.cfg"})
        EXPECT_EQ(slurp(dir / "r1" / f), slurp(dir / "r2" / f)) << f;
}

TEST_F(Cli, DivergenceExitsWithNumericCode) {
    ASSERT_EQ(gen_tiny().code, 0);
    write("wild.cfg", std::string(tiny_config) + "train.lr_static=1e30\ntrain.lr_hyper=1e30\n");
    const auto r = run("train --config " + path("wild.cfg") + " --data " + path("data") + " --out " + path("o"));
    EXPECT_EQ(r.code, 3) << r.out;
    const std::string dump = slurp(dir / "o" / "abort_state.txt");
    EXPECT_NE(dump.find("reason"), std::string::npos) << dump;
}

TEST_F(Cli, AblateWritesFourConfigurations) {
    ASSERT_EQ(gen_tiny().code, 0);
    const auto r = run("ablate --config " + path("tiny.cfg") + " --data " + path("data") + " --out " + path("o"));
    ASSERT_EQ(r.code, 0) << r.out;
    const auto table = lines(slurp(dir / "o" / "ablation.csv"));
    ASSERT_EQ(table.size(), 5u);
    EXPECT_EQ(table[0], "config,seed,sketch,lowres,art,mean");
    EXPECT_EQ(table[1].substr(0, table[1].find(',')), "frozen");
    EXPECT_EQ(table[4].substr(0, table[4].find(',')), "hybrid+stylence");
}

TEST_F(Cli, SweepUsesDefaultGammaList) {
    ASSERT_EQ(gen_tiny().code, 0);
    write("short.cfg", std::string(tiny_config) + "train.epochs=1\n");
    const auto r = run("sweep --param gamma --config " + path("short.cfg") + " --data " + path("data") + " --out " +
                       path("o"));
    ASSERT_EQ(r.code, 0) << r.out;
    const auto table = lines(slurp(dir / "o" / "sweep_gamma.csv"));
    std::vector<std::string> keys;
    for (std::size_t i = 1; i < table.size(); ++i) keys.push_back(table[i].substr(0, table[i].find(',')));
    EXPECT_EQ(keys, (std::vector<std::string>{"1", "10", "30", "50", "80", "120", "200", "500"}));
}

TEST_F(Cli, SweepRejectsUnknownParameter) {
    ASSERT_EQ(gen_tiny().code, 0);
    EXPECT_EQ(run("sweep --param tau --data " + path("data") + " --out " + path("o")).code, 2);
}

TEST_F(Cli, ExportEmbeddings) {
    ASSERT_EQ(gen_tiny().code, 0);
    const auto r = run("export-embeddings --config " + path("tiny.cfg") + " --data " + path("data") + " --out " +
                       path("o"));
    ASSERT_EQ(r.code, 0) << r.out;
    const auto rows = lines(slurp(dir / "o" / "embeddings.csv"));
    ASSERT_EQ(rows.size(), 81u);
    EXPECT_EQ(rows[0], "item_id,class_id,style_id,e0,e1,e2,e3,e4,e5,e6,e7");
}

TEST(CliGradcheck, LossScopePassesAndPrintsThreshold) {
    const auto r = run("gradcheck --scope loss");
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("threshold 1e-05"), std::string::npos) << r.out;
}

TEST(CliGradcheck, EndToEndThreshold) {
    const auto r = run("gradcheck --scope end2end");
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("threshold 0.0001"), std::string::npos) << r.out;
}

TEST(CliGradcheck, CorruptedAdjointFails) {
    const auto r = run("gradcheck --scope end2end --corrupt-adjoint");
    EXPECT_EQ(r.code, 1) << r.out;
    EXPECT_NE(r.out.find("FAIL"), std::string::npos);
}

TEST(CliGradcheck, UnknownScope) { EXPECT_EQ(run("gradcheck --scope everything").code, 2); }

TEST(CliSinkhorn, TwoByTwoPlanIsTheSwap) {
    const auto r = run("sinkhorn-demo --n 2 --out " + scratch());
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("plan [[0,1],[1,0]]"), std::string::npos) << r.out;
}

TEST(CliSinkhorn, DeviationsDoNotIncreaseAndDefaultIsFiftyIterations) {
    const auto r = run("sinkhorn-demo --n 16 --out " + scratch());
    ASSERT_EQ(r.code, 0) << r.out;
    std::vector<double> dev;
    std::string last_iter;
    for (const auto& l : lines(r.out)) {
        if (l.rfind("iter ", 0) != 0) continue;
        std::istringstream in(l);
        std::string w;
        double d = 0;
        in >> w >> last_iter >> w >> d;
        dev.push_back(d);
    }
    ASSERT_EQ(dev.size(), 5u);
    EXPECT_EQ(lines(slurp(fs::path(scratch()) / "plan.csv")).size(), 16u);
    EXPECT_EQ(last_iter, "50");
    for (std::size_t i = 1; i < dev.size(); ++i) EXPECT_LE(dev[i], dev[i - 1]);
}

TEST(CliSinkhorn, RejectsTooSmallBatch) {
    EXPECT_EQ(run("sinkhorn-demo --n 1 --out " + scratch()).code, 2);
    fs::remove_all(scratch());
}
