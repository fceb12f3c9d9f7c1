#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "forecaster/cli.hpp"

using namespace forecaster;
namespace fs = std::filesystem;

namespace {

const std::string kTiny = std::string(FORECASTER_SOURCE_DIR) + "/configs/tiny.json";

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "forecaster");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

Result step(const std::string& cmd, const std::string& config, const fs::path& dir) {
    return invoke({cmd, "--config", config, "--out", dir.string()});
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Last non-empty stderr line parsed as JSON.
nlohmann::json last_error(const std::string& err) {
    std::istringstream in(err);
    std::string line, last;
    while (std::getline(in, line)) {
        if (!line.empty()) last = line;
    }
    return nlohmann::json::parse(last);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

const char* kPipeline[] = {"synth", "learn-graph", "train", "forecast", "evaluate", "baseline-var"};

}  // namespace

TEST_CASE("tiny pipeline runs end to end and is reproducible") {
    TempDir a("forecaster_cli_a"), b("forecaster_cli_b");
    for (const auto* cmd : kPipeline) {
        CAPTURE(cmd);
        const auto r = step(cmd, kTiny, a.path);
        CHECK(r.code == 0);
        CHECK(r.err.find("\"error\"") == std::string::npos);
    }
    for (const char* f : {cli::artifacts::kGraph, cli::artifacts::kCheckpoint, cli::artifacts::kPredictions,
                          cli::artifacts::kEvalReport, cli::artifacts::kEvalSteps, cli::artifacts::kVarReport,
                          cli::artifacts::kLossCurve, cli::artifacts::kGraphRecovery}) {
        CAPTURE(f);
        CHECK(fs::exists(a.path / f));
    }
    const auto report = nlohmann::json::parse(read_file(a.path / cli::artifacts::kEvalReport));
    CHECK(report.contains("rmse"));

    for (const auto* cmd : kPipeline) REQUIRE(step(cmd, kTiny, b.path).code == 0);
    for (const char* f : {cli::artifacts::kSignals, cli::artifacts::kGraph, cli::artifacts::kCheckpoint,
                          cli::artifacts::kEvalReport, cli::artifacts::kVarReport}) {
        CAPTURE(f);
        CHECK(read_file(a.path / f) == read_file(b.path / f));
    }

    SUBCASE("changed config is rejected downstream") {
        auto doc = nlohmann::json::parse(read_file(kTiny));
        doc["training"]["epochs"] = 3;
        const auto changed = (a.path / "changed.json").string();
        std::ofstream(changed) << doc.dump(2);
        const auto r = step("train", changed, a.path);
        CHECK(r.code == 2);
        CHECK(last_error(r.err)["error"] == "configuration");
        CHECK(last_error(r.err)["message"].get<std::string>().find("config hash") != std::string::npos);
    }
    SUBCASE("seed override changes the data") {
        TempDir c("forecaster_cli_c");
        REQUIRE(invoke({"synth", "--config", kTiny, "--out", c.path.string(), "--seed", "4"}).code == 0);
        CHECK(read_file(c.path / cli::artifacts::kSignals) != read_file(a.path / cli::artifacts::kSignals));
    }
}

TEST_CASE("missing upstream artifacts") {
    TempDir dir("forecaster_cli_missing");
    for (const char* cmd : {"learn-graph", "train", "forecast", "evaluate", "baseline-var"}) {
        CAPTURE(cmd);
        const auto r = step(cmd, kTiny, dir.path);
        CHECK(r.code == 3);
        const auto e = last_error(r.err);
        CHECK(e["error"] == "dependency");
        CHECK(e["message"].get<std::string>().find("run `") != std::string::npos);
    }
}

TEST_CASE("usage and config errors") {
    TempDir dir("forecaster_cli_usage");
    SUBCASE("help") {
        const auto r = invoke({"--help"});
        CHECK(r.code == 0);
        for (const char* cmd : kPipeline) CHECK(r.out.find(cmd) != std::string::npos);
    }
    SUBCASE("unknown subcommand") {
        const auto r = invoke({"frobnicate"});
        CHECK(r.code != 0);
        CHECK(last_error(r.err)["error"] == "usage");
    }
    SUBCASE("missing config") {
        const auto r = step("synth", (dir.path / "nope.json").string(), dir.path);
        CHECK(r.code == 3);
        CHECK(last_error(r.err)["error"] == "dependency");
    }
    SUBCASE("malformed config") {
        const auto p = (dir.path / "bad.json").string();
        std::ofstream(p) << "{ \"seed\": ";
        const auto r = step("synth", p, dir.path);
        CHECK(r.code == 2);
        CHECK(last_error(r.err)["error"] == "parse");
    }
    SUBCASE("invalid config value") {
        auto doc = nlohmann::json::parse(read_file(kTiny));
        doc["horizon"] = 0;
        const auto p = (dir.path / "h0.json").string();
        std::ofstream(p) << doc.dump();
        const auto r = step("synth", p, dir.path);
        CHECK(r.code == 2);
        CHECK(last_error(r.err)["error"] == "configuration");
    }
}

TEST_CASE("config hash") {
    const auto c = cli::load_config(kTiny);
    CHECK(c.hash() == cli::load_config(kTiny).hash());
    CHECK(cli::RunConfig::from_json(c.to_json()).hash() == c.hash());
    auto moved = c;
    moved.out_dir = "/elsewhere";
    CHECK(moved.hash() == c.hash());
    auto reseeded = c;
    reseeded.seed += 1;
    CHECK(reseeded.hash() != c.hash());
    CHECK(cli::synth_seed(c) != cli::model_seed(c));
    CHECK(cli::model_seed(c) != cli::training_seed(c));
}

TEST_CASE("split fractions") {
    cli::SplitConfig s;
    std::vector<dataio::RowRange> train;
    dataio::RowRange val, test;
    s.resolve(1000, train, val, test);
    REQUIRE(train.size() == 1);
    CHECK(train[0].begin == 0);
    CHECK(train[0].end == 800);
    CHECK(val.begin == 800);
    CHECK(val.end == 900);
    CHECK(test.begin == 900);
    CHECK(test.end == 1000);
}

TEST_CASE("exit codes") {
    CHECK(cli::exit_code(ErrorKind::Configuration) == 2);
    CHECK(cli::exit_code(ErrorKind::Parse) == 2);
    CHECK(cli::exit_code(ErrorKind::Dependency) == 3);
    CHECK(cli::exit_code(ErrorKind::Io) == 4);
    CHECK(cli::exit_code(ErrorKind::Convergence) == 1);
}
