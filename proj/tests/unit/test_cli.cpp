#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "uavdet/detector.hpp"
#include "uavdet/ingest.hpp"

namespace fs = std::filesystem;
using uavdet::cli::run;

namespace {

const fs::path kSuite = fs::path(UAVDET_SOURCE_DIR) / "fixtures" / "synthetic";

struct Out {
    int code;
    std::string out, err;
};

Out call(std::vector<std::string> args) {
    std::ostringstream o, e;
    const int code = run(args, o, e);
    return {code, o.str(), e.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("uavdet_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<std::string> refine_args(const fs::path& out) {
    return {"refine",   "--manifest", (kSuite / "manifest.json").string(), "--config", (kSuite / "run.json").string(),
            "--scene",  (kSuite / "scene.json").string(), "--out", out.string()};
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(call({}).code, 1);
    EXPECT_EQ(call({"bogus"}).code, 1);
    EXPECT_EQ(call({"gradcheck", "--samples", "0"}).code, 1);
    EXPECT_EQ(call({"refine", "--manifest", "/nonexistent/m.json", "--out", "/tmp/x"}).code, 1);
    EXPECT_EQ(call({"--help"}).code, 0);
}

TEST(Cli, GradcheckThresholdExitTwo) {
    EXPECT_EQ(call({"gradcheck", "--samples", "200"}).code, 0);
    const auto r = call({"gradcheck", "--samples", "200", "--threshold", "1e-15"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("FAIL"), std::string::npos);
}

TEST(Cli, ConfigProblemsAreListedTogether) {
    const auto dir = scratch("badcfg");
    std::ofstream(dir / "run.json") << R"({"refine": {"gate_iou": "high", "nope": 1}, "extra": true})";
    auto args = refine_args(dir / "out");
    args[4] = (dir / "run.json").string();
    const auto r = call(args);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("extra"), std::string::npos);
}

TEST(Cli, FlagsOverrideConfig) {
    const auto dir = scratch("override");
    auto args = refine_args(dir);
    args.insert(args.end(), {"--gate-iou", "0.4", "--workers", "2"});
    ASSERT_EQ(call(args).code, 0);
    const auto cfg = nlohmann::json::parse(slurp(dir / "config.json"));
    EXPECT_DOUBLE_EQ(cfg["refine"]["gate_iou"].get<double>(), 0.4);
    EXPECT_DOUBLE_EQ(cfg["first_pass"]["conf_floor"].get<double>(), 0.16);  // from run.json
    EXPECT_EQ(cfg["workers"].get<int>(), 2);
    EXPECT_TRUE(cfg.contains("version"));
}

TEST(Cli, RefineAndEvalAreByteStable) {
    const auto a = scratch("stable_a"), b = scratch("stable_b");
    auto args_b = refine_args(b);
    args_b.insert(args_b.end(), {"--workers", "1"});
    ASSERT_EQ(call(refine_args(a)).code, 0);
    ASSERT_EQ(call(args_b).code, 0);
    for (const char* f : {"detections.jsonl", "single_stage.jsonl", "trace.jsonl", "summary.json"})
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;

    auto eval = [&](const fs::path& out) {
        return call({"eval", "--manifest", (kSuite / "manifest.json").string(), "--detections",
                     (a / "single_stage.jsonl").string(), "--compare", (a / "detections.jsonl").string(), "--config",
                     (kSuite / "run.json").string(), "--out", (out / "eval.json").string()});
    };
    const auto ea = eval(a), eb = eval(b);
    ASSERT_EQ(ea.code, 0);
    EXPECT_EQ(ea.out, eb.out);
    EXPECT_EQ(slurp(a / "eval.json"), slurp(b / "eval.json"));

    const auto j = nlohmann::json::parse(slurp(a / "eval.json"));
    EXPECT_GT(j["delta"]["precision"].get<double>(), 0.02);
    EXPECT_GT(j["delta"]["recall"].get<double>(), 0.02);
    EXPECT_NE(ea.out.find("two-stage *"), std::string::npos);
}

TEST(Cli, EvalRejectsUnknownImages) {
    const auto dir = scratch("unknown");
    std::ofstream(dir / "d.jsonl")
        << R"({"image_id":"ghost","bbox_xyxy":[0,0,5,5],"score":0.9,"class_id":0})" << "\n";
    const auto r = call({"eval", "--manifest", (kSuite / "manifest.json").string(), "--detections",
                         (dir / "d.jsonl").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("ghost"), std::string::npos);
}

TEST(Cli, PatchWritesWindowsAndLabels) {
    const auto dir = scratch("patch");
    ASSERT_EQ(call({"patch", "--manifest", (kSuite / "manifest.json").string(), "--out",
                    (dir / "manifest.json").string(), "--patch-w", "640", "--patch-h", "512"})
                  .code,
              0);
    const auto m = uavdet::load_manifest(dir / "manifest.json");
    EXPECT_EQ(m.entries.size(), 20u * 2 * 2);
    for (const auto& e : m.entries) {
        EXPECT_EQ(e.width, 640);
        EXPECT_EQ(e.height, 512);
        ASSERT_TRUE(e.label_path);
        EXPECT_TRUE(fs::exists(m.resolve(*e.label_path)));
    }
    EXPECT_TRUE(fs::exists(dir / "windows.json"));
}

TEST(Cli, RenderWritesOneSvgPerImage) {
    const auto dir = scratch("render");
    ASSERT_EQ(call({"render", "--manifest", (kSuite / "manifest.json").string(), "--out", dir.string()}).code, 0);
    const std::string svg = slurp(dir / "scene_00.svg");
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("stroke=\"blue\""), std::string::npos);
}

TEST(Cli, ConformanceAgainstLocalServer) {
    uavdet::SyntheticBackend backend(uavdet::conformance_scene());
    uavdet::DetectorServer server(backend);
    const int port = server.start();
    const std::string url = "http://127.0.0.1:" + std::to_string(port);
    const auto ok = call({"detector-conformance", "--url", url, "--strict"});
    EXPECT_EQ(ok.code, 0) << ok.out;
    EXPECT_EQ(std::count(ok.out.begin(), ok.out.end(), '\n'), 5);
    server.stop();
    EXPECT_EQ(call({"detector-conformance", "--url", url}).code, 3);
}

TEST(Cli, UnreachableExternalBackendExitsThree) {
    const auto dir = scratch("external");
    auto m = uavdet::load_manifest(kSuite / "manifest.json");
    m.entries.resize(1);
    m.entries[0].label_path.reset();
    uavdet::save_manifest(dir / "manifest.json", m);
    const auto r = call({"refine", "--manifest", (dir / "manifest.json").string(), "--backend", "external",
                         "--url", "http://127.0.0.1:1", "--out", (dir / "out").string()});
    EXPECT_EQ(r.code, 3);
}
