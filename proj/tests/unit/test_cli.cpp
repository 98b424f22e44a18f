#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <string>
#include <vector>

#include "advdiff/checkpoint.hpp"
#include "advdiff/cli.hpp"
#include "advdiff/data.hpp"
#include "advdiff/harness.hpp"
#include "helpers.hpp"

using namespace advdiff;
namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;

namespace {

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "advdiff");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    return cli::run(static_cast<int>(args.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

// Small enough that every stage runs in a second or two.
std::vector<std::string> gen_args(const fs::path& out) {
    return {"gen-data", "--out", out.string(), "--num-samples", "48", "--image-size", "16", "--center-size", "6"};
}

std::vector<std::string> train_args(const fs::path& out) {
    return {"train-classifier", "--out", out.string(), "--data", (out / "dataset.bin").string(), "--epochs", "2",
            "--split", "0.5,0.25,0.25"};
}

struct EnvGuard {
    explicit EnvGuard(const char* value) {
        if (value) ::setenv("ADVDIFF_OUTPUT_DIR", value, 1);
        else ::unsetenv("ADVDIFF_OUTPUT_DIR");
    }
    ~EnvGuard() { ::unsetenv("ADVDIFF_OUTPUT_DIR"); }
};

}  // namespace

TEST_CASE("usage errors exit 1") {
    EnvGuard env(nullptr);
    CHECK(run_cli({}) == cli::kUsage);
    CHECK(run_cli({"gen-data", "--no-such-flag"}) == cli::kUsage);
    CHECK(run_cli({"frobnicate"}) == cli::kUsage);
    CHECK(run_cli({"--version"}) == cli::kOk);
    CHECK(run_cli({"--help"}) == cli::kOk);
}

TEST_CASE("missing input files are runtime errors") {
    EnvGuard env(nullptr);
    testutil::TempDir dir("cli_missing");
    CHECK(run_cli({"eval", "--out", dir.path().string(), "--data", (dir / "nope.bin").string(), "--classifier",
                   (dir / "nope.ckpt").string()}) == cli::kRuntime);
}

TEST_CASE("config file problems exit 2") {
    EnvGuard env(nullptr);
    testutil::TempDir dir("cli_cfg");
    std::ofstream(dir / "bad_value.toml") << "seed = \"not a number\"\n";
    CHECK(run_cli({"--config", (dir / "bad_value.toml").string(), "gen-data", "--out", dir.path().string()}) ==
          cli::kConfig);
    std::ofstream(dir / "unknown.toml") << "colour = 3\n";
    CHECK(run_cli({"--config", (dir / "unknown.toml").string(), "gen-data", "--out", dir.path().string()}) ==
          cli::kConfig);
    CHECK(run_cli({"--config", (dir / "absent.toml").string(), "gen-data"}) == cli::kConfig);
}

TEST_CASE("invalid parameter values exit 2") {
    EnvGuard env(nullptr);
    testutil::TempDir dir("cli_param");
    auto args = gen_args(dir.path());
    args.back() = "20";  // centre window wider than the free border allows
    CHECK(run_cli(args) != cli::kOk);
}

TEST_CASE("gen-data writes the dataset, the resolved config and a manifest") {
    EnvGuard env(nullptr);
    testutil::TempDir dir("cli_gen");
    REQUIRE(run_cli(gen_args(dir.path())) == cli::kOk);
    auto d = load_dataset(dir / "dataset.bin");
    CHECK(d.size() == 48);
    CHECK(d.spec.image_size == 16);

    auto m = nlohmann::json::parse(slurp(dir / "gen-data.manifest.json"));
    CHECK(m.at("subcommand") == "gen-data");
    CHECK(m.at("tool") == "advdiff");
    CHECK(m.at("seeds").contains("data"));
    CHECK_THAT(slurp(dir / "gen-data.config.toml"), ContainsSubstring("num-samples"));

    // The resolved config alone reproduces the dataset bit for bit.
    testutil::TempDir again("cli_gen2");
    REQUIRE(run_cli({"--config", (dir / "gen-data.config.toml").string(), "gen-data", "--out",
                     again.path().string()}) == cli::kOk);
    CHECK(slurp(dir / "dataset.bin") == slurp(again / "dataset.bin"));
}

TEST_CASE("output directory precedence: flag over environment over default") {
    testutil::TempDir dir("cli_env");
    const auto env_dir = dir / "from_env";
    const auto flag_dir = dir / "from_flag";
    EnvGuard env(env_dir.string().c_str());
    std::vector<std::string> args{"gen-data", "--num-samples", "8", "--image-size", "16", "--center-size", "6"};
    REQUIRE(run_cli(args) == cli::kOk);
    CHECK(fs::exists(env_dir / "dataset.bin"));
    args.push_back("--out");
    args.push_back(flag_dir.string());
    REQUIRE(run_cli(args) == cli::kOk);
    CHECK(fs::exists(flag_dir / "dataset.bin"));
}

TEST_CASE("end to end on a toy dataset") {
    EnvGuard env(nullptr);
    testutil::TempDir dir("cli_e2e");
    const auto out = dir.path();
    const auto data = (out / "dataset.bin").string();
    REQUIRE(run_cli(gen_args(out)) == cli::kOk);

    REQUIRE(run_cli(train_args(out)) == cli::kOk);
    REQUIRE(fs::exists(out / "classifier.ckpt"));
    CHECK(fs::exists(out / "classifier_curves.csv"));
    const auto clf = (out / "classifier.ckpt").string();

    SECTION("training reruns are byte identical, with or without -v") {
        testutil::TempDir d2("cli_e2e_rerun");
        auto args = train_args(d2.path());
        args[4] = data;
        args.push_back("-v");
        REQUIRE(run_cli(args) == cli::kOk);
        CHECK(slurp(out / "classifier.ckpt") == slurp(d2 / "classifier.ckpt"));
    }

    SECTION("adv-train at epsilon 0 reproduces plain training") {
        testutil::TempDir d2("cli_e2e_adv");
        REQUIRE(run_cli({"adv-train", "--out", d2.path().string(), "--data", data, "--epochs", "2", "--split",
                         "0.5,0.25,0.25", "--epsilon", "0"}) == cli::kOk);
        auto a = load_classifier(out / "classifier.ckpt"), b = load_classifier(d2 / "robust.ckpt");
        CHECK(a.model.net().params().values() == b.model.net().params().values());
    }

    SECTION("attack, diffusion, eval, sweep and dump-images") {
        REQUIRE(run_cli({"attack", "--out", out.string(), "--data", data, "--classifier", clf, "--split",
                         "0.5,0.25,0.25", "--epsilon", "0.03"}) == cli::kOk);
        auto adv = load_dataset(out / "adversarial.bin");
        CHECK(adv.size() == 12);
        auto am = nlohmann::json::parse(slurp(out / "attack.manifest.json"));
        CHECK(am.at("results").at("n") == 12);

        REQUIRE(run_cli({"train-diffusion", "--out", out.string(), "--data", data, "--split", "0.5,0.25,0.25",
                         "--epochs", "1", "--base-width", "8"}) == cli::kOk);
        const auto pred = (out / "predictor.ckpt").string();
        REQUIRE(fs::exists(pred));

        REQUIRE(run_cli({"eval", "--out", out.string(), "--data", data, "--classifier", clf, "--predictor", pred,
                         "--split", "0.5,0.25,0.25", "--epsilon", "0.03", "--defenses", "none,noise,purify",
                         "--t", "0.01", "--adversarial", (out / "adversarial.bin").string()}) == cli::kOk);
        const auto csv = slurp(out / "eval.csv");
        CHECK(csv.rfind(std::string(kCsvHeader) + "\n", 0) == 0);
        CHECK_THAT(csv, ContainsSubstring(",none,"));
        CHECK_THAT(csv, ContainsSubstring(",noise,0.01,"));
        CHECK_THAT(csv, ContainsSubstring(",purify,0.01,"));
        CHECK(fs::exists(out / "eval.txt"));

        // adv_trained without a robust checkpoint is a configuration problem.
        CHECK(run_cli({"eval", "--out", out.string(), "--data", data, "--classifier", clf, "--split",
                       "0.5,0.25,0.25", "--defenses", "adv_trained"}) == cli::kConfig);
        CHECK(run_cli({"eval", "--out", out.string(), "--data", data, "--classifier", clf, "--split",
                       "0.5,0.25,0.25", "--defenses", "jpeg"}) != cli::kOk);

        REQUIRE(run_cli({"sweep", "--out", out.string(), "--data", data, "--classifier", clf, "--predictor", pred,
                         "--split", "0.5,0.25,0.25", "--epsilon", "0.03", "--grid", "0.005,0.01", "--skip-clean",
                         "-n", "6"}) == cli::kOk);
        const auto sw = slurp(out / "sweep.csv");
        CHECK_THAT(sw, ContainsSubstring(",purify,0.005,"));
        CHECK_THAT(sw, ContainsSubstring(",purify,0.01,"));

        REQUIRE(run_cli({"dump-images", "--out", out.string(), "--data", data, "--classifier", clf, "--predictor",
                         pred, "--split", "0.5,0.25,0.25", "--t", "0.01"}) == cli::kOk);
        auto dm = nlohmann::json::parse(slurp(out / "dump-images.manifest.json"));
        CHECK(dm.at("outputs").size() >= 6);
    }
}
