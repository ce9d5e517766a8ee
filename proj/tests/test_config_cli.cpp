#include "speedtrack/cli.hpp"
#include "speedtrack/config.hpp"
#include "speedtrack/errors.hpp"
#include "speedtrack/io_formats.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace speedtrack;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run cli_run(std::vector<std::string> args) {
    args.insert(args.begin(), "speedtrack");
    std::ostringstream out;
    std::ostringstream err;
    Run r;
    r.code = cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("speedtrack_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json manifest(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "manifest.json")); }

}  // namespace

TEST(KeyValues, Parses) {
    const auto kv = config::parse_key_values("# comment\n a = 1 \n\nb=two # trailing\nfixed-kf = true\n");
    EXPECT_EQ(kv.at("a"), "1");
    EXPECT_EQ(kv.at("b"), "two");
    EXPECT_EQ(kv.at("fixed-kf"), "true");
    EXPECT_EQ(kv.size(), 3u);
}

TEST(KeyValues, MalformedLineReportsLine) {
    try {
        config::parse_key_values("a = 1\nno equals here\n");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find('2'), std::string::npos);
    }
}

TEST(KeyValues, RoundTrip) {
    const config::KeyValues kv{{"lr", "0.005"}, {"seed", "3"}};
    EXPECT_EQ(config::parse_key_values(config::format_key_values(kv)), kv);
}

TEST(KeyValues, EnvName) {
    EXPECT_EQ(config::env_name("fixed-kf"), "SPEEDTRACK_FIXED_KF");
    EXPECT_EQ(config::env_name("tau_high"), "SPEEDTRACK_TAU_HIGH");
}

TEST(Cli, PrecedenceFlagEnvFileDefault) {
    const fs::path d = scratch("prec");
    {
        std::ofstream(d / "c.cfg") << "frames = 7\nseed = 4\n";
    }
    auto frames_of = [&](const std::vector<std::string>& extra) {
        std::vector<std::string> a{"synth", "--suite", "single", "--out", (d / "o").string(),
                                   "--config", (d / "c.cfg").string()};
        a.insert(a.end(), extra.begin(), extra.end());
        const auto r = cli_run(a);
        EXPECT_EQ(r.code, 0) << r.err;
        return manifest(d / "o")["config"];
    };
    ::unsetenv("SPEEDTRACK_FRAMES");
    auto c = frames_of({});
    EXPECT_EQ(c["frames"], "7");
    EXPECT_EQ(c["seed"], "4");
    EXPECT_EQ(c["speed"], "0");  // default
    EXPECT_EQ(io::read_bundle(d / "o" / "synth").n_frames, 7);

    ::setenv("SPEEDTRACK_FRAMES", "9", 1);
    c = frames_of({});
    EXPECT_EQ(c["frames"], "9");
    c = frames_of({"--frames", "11"});
    EXPECT_EQ(c["frames"], "11");
    ::unsetenv("SPEEDTRACK_FRAMES");
}

TEST(Cli, UnknownConfigKeyIsRuntimeError) {
    const fs::path d = scratch("badkey");
    {
        std::ofstream(d / "c.cfg") << "framez = 7\n";
    }
    const auto r = cli_run({"synth", "--suite", "single", "--out", (d / "o").string(), "--config",
                            (d / "c.cfg").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err.rfind("error: config:", 0), 0u) << r.err;
}

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(cli_run({}).code, 2);
    EXPECT_EQ(cli_run({"synth", "--bogus"}).code, 2);
    EXPECT_EQ(cli_run({"frobnicate"}).code, 2);
    EXPECT_EQ(cli_run({"synth", "--frames", "abc"}).code, 2);
}

TEST(Cli, RuntimeErrorSingleLine) {
    const fs::path d = scratch("rt");
    const auto r = cli_run({"eval", "--results", (d / "missing").string(), "--data", (d / "nope").string(),
                            "--out", (d / "o").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err.rfind("error: ", 0), 0u);
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(Cli, HelpForEverySubcommand) {
    const std::map<std::string, std::string> flag{{"synth", "--suite"},          {"train", "--epochs"},
                                                  {"track", "--checkpoint"},     {"eval", "--results"},
                                                  {"speed-analysis", "--centers"}, {"perturb-speed", "--levels"}};
    for (const auto& [sub, f] : flag) {
        const auto r = cli_run({sub, "--help"});
        EXPECT_EQ(r.code, 0) << sub;
        EXPECT_NE(r.out.find(f), std::string::npos) << sub;
        EXPECT_NE(r.out.find("--config"), std::string::npos) << sub;
    }
}

TEST(Cli, GroundTruthAsResultsScoresHundred) {
    const fs::path d = scratch("perfect");
    const auto data = d / "data";
    ASSERT_EQ(cli_run({"synth", "--suite", "single", "--frames", "40", "--out", data.string()}).code, 0);
    const auto bundle = io::read_bundle(data / "synth");
    std::vector<io::ResultRow> rows;
    for (const auto& frame : bundle.gt) {
        for (const auto& g : frame) {
            if (g.dont_care()) {
                continue;
            }
            rows.push_back(io::ResultRow{g.frame, g.track_id, g.class_id, g.box, 1.0});
        }
    }
    fs::create_directories(d / "res");
    io::write_results(rows, d / "res" / "synth.txt", io::ResultFormat::Kitti, 8);
    const auto e = cli_run({"eval", "--results", (d / "res").string(), "--data", data.string(), "--out",
                            (d / "ev").string()});
    ASSERT_EQ(e.code, 0) << e.err;
    const auto rep = nlohmann::json::parse(slurp(d / "ev" / "report.json"));
    EXPECT_NEAR(rep["combined"]["HOTA"].get<double>(), 100.0, 1e-6);
    EXPECT_NE(e.out.find("HOTA"), std::string::npos);
}

TEST(Cli, PerfectDetectionsTrackCleanly) {
    const fs::path d = scratch("perfect_track");
    const auto data = (d / "data").string();
    ASSERT_EQ(cli_run({"synth", "--suite", "single", "--perfect", "--frames", "40", "--out", data}).code, 0);
    const auto t = cli_run({"track", "--data", data, "--fixed-kf", "--out", (d / "res").string()});
    ASSERT_EQ(t.code, 0) << t.err;
    const auto e = cli_run({"eval", "--results", (d / "res").string(), "--data", data, "--out", (d / "ev").string()});
    ASSERT_EQ(e.code, 0) << e.err;
    const auto rep = nlohmann::json::parse(slurp(d / "ev" / "report.json"));
    EXPECT_GT(rep["combined"]["HOTA"].get<double>(), 90.0);
    EXPECT_EQ(rep["combined"]["IDSW"].get<int>(), 0);
}

TEST(Cli, PipelineIsByteIdenticalAcrossRuns) {
    auto pipeline = [](const fs::path& d) {
        const auto data = (d / "data").string();
        EXPECT_EQ(cli_run({"synth", "--suite", "training", "--count", "2", "--frames", "25", "--out", data}).code, 0);
        const auto tr = cli_run({"train", "--data", data, "--epochs", "2", "--warmup", "1", "--out", (d / "m").string()});
        EXPECT_EQ(tr.code, 0) << tr.err;
        EXPECT_EQ(cli_run({"track", "--data", data, "--checkpoint", (d / "m" / "model.msn").string(), "--out",
                           (d / "res").string()})
                      .code,
                  0);
        EXPECT_EQ(cli_run({"eval", "--results", (d / "res").string(), "--data", data, "--out", (d / "ev").string()})
                      .code,
                  0);
    };
    const fs::path a = scratch("det_a");
    const fs::path b = scratch("det_b");
    pipeline(a);
    pipeline(b);
    int compared = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file() || e.path().filename() == "manifest.json") {
            continue;
        }
        const auto rel = fs::relative(e.path(), a);
        const fs::path other = b / rel;
        ASSERT_TRUE(fs::exists(other)) << rel;
        EXPECT_EQ(slurp(e.path()), slurp(other)) << rel;
        ++compared;
    }
    EXPECT_GT(compared, 8);
}

TEST(Cli, DiscoverBundles) {
    const fs::path d = scratch("disc");
    ASSERT_EQ(cli_run({"synth", "--suite", "training", "--count", "3", "--frames", "5", "--out", d.string()}).code, 0);
    const auto found = cli::discover_bundles(d);
    ASSERT_EQ(found.size(), 3u);
    EXPECT_TRUE(std::is_sorted(found.begin(), found.end()));
    EXPECT_EQ(cli::discover_bundles(found[0]).size(), 1u);
    EXPECT_THROW(cli::discover_bundles(scratch("empty")), IoError);
    EXPECT_EQ(cli::read_sequence_list(d / "sequences.txt"), found);
}
