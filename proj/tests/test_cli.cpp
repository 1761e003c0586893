#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "t4d/manifest.hpp"

// End-to-end command-line checks driven through the real binary.

namespace fs = std::filesystem;

namespace {

const std::string kBinary = T4D_CLI_PATH;

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("t4d_cli_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args) {
    const std::string cmd = kBinary + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string run_capture(const std::string& args, int* exit_code = nullptr) {
    const std::string out_path =
        (fs::temp_directory_path() / ("t4d_cli_out_" + std::to_string(::getpid()))).string();
    const std::string cmd = kBinary + " " + args + " >" + out_path + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (exit_code != nullptr) *exit_code = WEXITSTATUS(status);
    std::ifstream is(out_path);
    std::string text{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
    fs::remove(out_path);
    return text;
}

}  // namespace

TEST_CASE("help and usage errors") {
    CHECK(run("--help") == 0);
    CHECK(run("synth --help") == 0);
    CHECK(run("") == 1);
    CHECK(run("frobnicate") == 1);
    CHECK(run("train") == 1);                        // missing manifest
    CHECK(run("synth --subjects-nope 3") == 1);      // unknown flag
}

TEST_CASE("synth, train, eval round trip") {
    TempDir dir("roundtrip");
    const std::string data = dir.file("data");
    const std::string common = " --extent 8 --frames 24 --train-per-class 2 --val-per-class 1 "
                               "--test-per-class 1 --seed 5";
    REQUIRE(run("synth --out " + data + common) == 0);
    REQUIRE(fs::exists(data + "/manifest.tsv"));

    SUBCASE("identical seeds give identical datasets") {
        const std::string again = dir.file("data2");
        REQUIRE(run("synth --out " + again + common) == 0);
        for (const auto& entry : fs::directory_iterator(data)) {
            std::ifstream a(entry.path(), std::ios::binary);
            std::ifstream b(fs::path(again) / entry.path().filename(), std::ios::binary);
            REQUIRE(b.good());
            const std::string ba{std::istreambuf_iterator<char>(a), {}};
            const std::string bb{std::istreambuf_iterator<char>(b), {}};
            CHECK(ba == bb);
        }
    }
    SUBCASE("invalid generator config exits 1") {
        CHECK(run("synth --out " + dir.file("bad") + " --train-per-class 0") == 1);
    }
    SUBCASE("train writes checkpoints and metrics, eval consumes them") {
        const std::string out = dir.file("run");
        const std::string train_args =
            "train --manifest " + data + "/manifest.tsv --out " + out +
            " --variant cnn3d-ms --epochs 2 --val-interval 2 --crop-length 5 "
            "--initial-filters 3 --growth 2 --layers-per-block 1 --blocks 2 --stride 6";
        REQUIRE(run(train_args) == 0);
        CHECK(fs::exists(out + "/best.ckpt"));
        CHECK(fs::exists(out + "/last.ckpt"));
        CHECK(fs::exists(out + "/train.log"));
        CHECK(fs::exists(out + "/test_metrics.txt"));

        int code = -1;
        const std::string eval_out = run_capture(
            "eval --checkpoint " + out + "/best.ckpt --manifest " + data +
                "/manifest.tsv --split test --stride 6",
            &code);
        CHECK(code == 0);
        CHECK(eval_out.find("eval.accuracy=") != std::string::npos);
        CHECK(eval_out.find("crops=") != std::string::npos);

        // stride changes the reported crop count: (24-5)/1+1=20 vs (24-5)/6+1=4
        const std::string stride1 = run_capture("eval --checkpoint " + out +
                                                "/best.ckpt --manifest " + data +
                                                "/manifest.tsv --split test --stride 1");
        CHECK(stride1.find("crops=20") != std::string::npos);
        const std::string stride6 = run_capture("eval --checkpoint " + out +
                                                "/best.ckpt --manifest " + data +
                                                "/manifest.tsv --split test --stride 6");
        CHECK(stride6.find("crops=4") != std::string::npos);

        // inspect understands all three artifact kinds
        CHECK(run("inspect " + out + "/best.ckpt") == 0);
        CHECK(run("inspect " + data + "/manifest.tsv") == 0);
        CHECK(run("inspect " + data + "/sub-0000.t4df") == 0);

        // a config file supplies defaults, flags override it
        std::ofstream cfg(dir.file("run.cfg"));
        cfg << "model.variant = cnn3d-ms\n"
            << "model.initial_filters = 3\n"
            << "model.growth = 2\n"
            << "model.layers_per_block = 1\n"
            << "model.blocks = 2\n"
            << "model.crop_length = 5\n"
            << "train.epochs = 1\n"
            << "train.val_interval = 1\n"
            << "data.manifest = " + data + "/manifest.tsv\n"
            << "data.stride = 6\n";
        cfg.close();
        const std::string out2 = dir.file("run2");
        CHECK(run("train --config " + dir.file("run.cfg") + " --out " + out2) == 0);
        {
            // epochs = 1 in the config: exactly one train epoch logged
            std::ifstream log(out2 + "/train.log");
            int train_lines = 0;
            std::string line;
            while (std::getline(log, line))
                if (line.find("split=train") != std::string::npos) ++train_lines;
            CHECK(train_lines == 1);
        }

        std::ofstream bad(dir.file("bad.cfg"));
        bad << "model.grwoth = 2\n";
        bad.close();
        CHECK(run("train --config " + dir.file("bad.cfg") + " --manifest " + data +
                  "/manifest.tsv") == 1);
    }
    SUBCASE("data errors exit 2") {
        CHECK(run("train --manifest " + dir.file("missing.tsv") + " --out " + dir.file("x")) == 2);
        CHECK(run("eval --checkpoint " + dir.file("nope.ckpt") + " --manifest " + data +
                  "/manifest.tsv") == 2);
        std::ofstream(dir.file("garbage.t4df")) << "not a tensor";
        CHECK(run("inspect " + dir.file("garbage.t4df")) == 2);
    }
    SUBCASE("unknown variant exits 1 and names the valid ones") {
        int code = -1;
        const std::string text = run_capture(
            "train --manifest " + data + "/manifest.tsv --variant cnn5d", &code);
        CHECK(code == 1);
        CHECK(text.find("cnn3d-tc") != std::string::npos);
        CHECK(text.find("convgru-cnn3d") != std::string::npos);
    }
}

TEST_CASE("gradcheck and bench commands") {
    // tiny instance so this stays quick
    CHECK(run("gradcheck --variant cnn3d-ms --extent 5 --frames 2 --max-coords 4") == 0);
    CHECK(run("gradcheck --variant cnn3d-ms --extent 5 --frames 2 --max-coords 4 "
              "--inject-fault") == 3);
    CHECK(run("gradcheck --variant cnn5d") == 1);
    CHECK(run("bench --preset none") == 0);
    // includes the full-size rank-4 first-layer case
    CHECK(run("bench --preset full") == 0);
}
