#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "uavdet/detector.hpp"
#include "uavdet/error.hpp"
#include "uavdet/ingest.hpp"
#include "uavdet/losses.hpp"
#include "uavdet/metrics.hpp"
#include "uavdet/refine.hpp"

namespace uavdet::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string num(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string fixed(double v, int digits) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(digits) << v;
    return ss.str();
}

json read_json(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw ValidationError("cannot open " + p.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ValidationError(p.string() + ": " + e.what());
    }
}

json section(const json& cfg, const char* key) {
    if (cfg.is_null() || !cfg.contains(key)) return json::object();
    return cfg.at(key);
}

void check_top_level(const json& cfg) {
    if (cfg.is_null()) return;
    if (!cfg.is_object()) throw ConfigError({"config: expected a JSON object"});
    static const std::set<std::string> known{"first_pass", "refine", "eval", "synthetic", "workers", "seed"};
    std::vector<std::string> problems;
    for (const auto& [k, _] : cfg.items())
        if (!known.count(k)) problems.push_back("config." + k + ": unknown key");
    if (!problems.empty()) throw ConfigError(std::move(problems));
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

void write_run_info(const fs::path& dir, const std::string& command) {
    ordered_json j;
    j["command"] = command;
    j["version"] = UAVDET_VERSION;
    j["started_utc"] = utc_timestamp();
    write_file_atomic(dir / "run_info.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
    std::uint64_t seed = 0;
    int n = 1000;
    double lambda = 0.5;
    double c_norm = 12.8;
    std::string mode = "frozen";
    double threshold = 1e-4;
    std::string out;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
    if (a.n < 1) throw ValidationError("gradcheck: --samples must be >= 1");
    LossConfig cfg;
    cfg.lambda_nwd = a.lambda;
    cfg.nwd.c_norm = a.c_norm;
    const auto mode = a.mode == "full" ? WiouGradient::kFull : WiouGradient::kFrozenNormalizer;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_gradcheck(a.seed, a.n, cfg, mode);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    ordered_json j;
    j["version"] = UAVDET_VERSION;
    j["seed"] = r.seed;
    j["n_samples"] = r.n_samples;
    j["n_rejected"] = r.n_rejected;
    j["mode"] = a.mode;
    j["lambda_nwd"] = cfg.lambda_nwd;
    j["c_norm"] = cfg.nwd.c_norm;
    j["max_rel_error"] = r.max_rel_error;
    j["mean_rel_error"] = r.mean_rel_error;
    j["max_abs_error"] = r.max_abs_error;
    j["max_rel_error_per_param"] = {{"cx", r.max_rel_error_per_param[0]},
                                    {"cy", r.max_rel_error_per_param[1]},
                                    {"w", r.max_rel_error_per_param[2]},
                                    {"h", r.max_rel_error_per_param[3]}};
    j["threshold"] = a.threshold;
    j["passed"] = r.max_rel_error <= a.threshold;
    if (!a.out.empty()) write_file_atomic(a.out, j.dump(2) + "\n");
    out << j.dump(2) << "\n";
    out << "gradcheck: " << r.n_samples << " samples, max rel error " << num(r.max_rel_error) << " ("
        << fixed(secs, 2) << " s) " << (r.max_rel_error <= a.threshold ? "PASS" : "FAIL") << "\n";
    return r.max_rel_error <= a.threshold ? kOk : kThreshold;
}

// ---------------------------------------------------------------------------
// patch

struct PatchArgs {
    std::string manifest;
    std::string out;
    int patch_w = 0, patch_h = 0, overlap = -1;
    double min_visibility = -1.0;
};

int cmd_patch(const PatchArgs& a, std::ostream& out, std::ostream& err) {
    const auto m = load_manifest(a.manifest);
    PatchPlan plan = m.patch_plan.value_or(PatchPlan{});
    if (a.patch_w > 0) plan.patch_w = a.patch_w;
    if (a.patch_h > 0) plan.patch_h = a.patch_h;
    if (a.overlap >= 0) plan.overlap = a.overlap;
    if (a.min_visibility >= 0.0) plan.min_visibility = a.min_visibility;
    validate(plan);

    const fs::path out_manifest(a.out);
    const fs::path out_dir = out_manifest.has_parent_path() ? out_manifest.parent_path() : fs::path(".");
    DatasetManifest patched;
    patched.class_names = m.class_names;
    patched.patch_plan = plan;
    ordered_json windows = ordered_json::array();
    std::size_t n_objects = 0;
    for (const auto& e : m.entries) {
        // Windows reference the source image; keep its path valid from the new manifest.
        const std::string image_path =
            e.image_path.empty() ? e.image_path
                                 : fs::relative(fs::absolute(m.resolve(e.image_path)), fs::absolute(out_dir)).generic_string();
        const auto layout = plan_patches(e.width, e.height, plan);
        for (const auto& w : layout.warnings) err << "warning: " << e.image_id << ": " << w << "\n";
        std::vector<GroundTruthObject> objects;
        if (e.label_path) {
            auto loaded = load_yolo_labels(m.resolve(*e.label_path), e.width, e.height, m.class_names, e.image_id);
            for (const auto& w : loaded.warnings) err << "warning: " << w << "\n";
            objects = std::move(loaded.objects);
        }
        const auto per_window = remap_labels(objects, layout.windows, plan.min_visibility);
        for (std::size_t i = 0; i < layout.windows.size(); ++i) {
            const auto& w = layout.windows[i];
            const std::string id = patch_image_id(e.image_id, w);
            ManifestEntry pe{id, image_path, w.width(), w.height(), {}};
            if (e.label_path) {
                const std::string rel = "labels/" + id + ".txt";
                write_yolo_labels(out_dir / rel, per_window[i], w.width(), w.height());
                pe.label_path = rel;
                n_objects += per_window[i].size();
            }
            patched.entries.push_back(std::move(pe));
            ordered_json wj;
            wj["image_id"] = id;
            wj["source_image_id"] = e.image_id;
            wj["window"] = {w.x0(), w.y0(), w.x1(), w.y1()};
            windows.push_back(std::move(wj));
        }
    }
    save_manifest(out_manifest, patched);
    write_file_atomic(out_dir / "windows.json", windows.dump(2) + "\n");
    out << "patch: " << m.entries.size() << " images -> " << patched.entries.size() << " windows, " << n_objects
        << " objects kept\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// refine

struct RefineArgs {
    std::string manifest;
    std::string backend = "synthetic";
    std::string scene;
    std::string fixture;
    std::string url;
    std::string detections;
    std::string config;
    std::string out;
    std::string record;
    std::size_t workers = 0;
    std::uint64_t seed = 0;
    RefineConfig refine;
    FirstPassConfig first;
    CLI::App* app = nullptr;
};

bool given(const CLI::App* app, const std::string& name) {
    try {
        return app->get_option(name)->count() > 0;
    } catch (const CLI::OptionNotFound&) {
        return false;
    }
}

int cmd_refine(RefineArgs& a, std::ostream& out, std::ostream& err) {
    const json cfg = a.config.empty() ? json() : read_json(a.config);
    check_top_level(cfg);
    RefineConfig rc = refine_config_from_json(section(cfg, "refine"));
    FirstPassConfig fp = first_pass_config_from_json(section(cfg, "first_pass"));
    std::size_t workers = cfg.is_object() ? cfg.value("workers", std::size_t{0}) : 0;
    const auto* app = a.app;
    if (given(app, "--conf-threshold")) rc.conf_threshold = a.refine.conf_threshold;
    if (given(app, "--gate-iou")) rc.gate_iou = a.refine.gate_iou;
    if (given(app, "--scale-min")) rc.scale_min = a.refine.scale_min;
    if (given(app, "--scale-max")) rc.scale_max = a.refine.scale_max;
    if (given(app, "--crop-pad")) rc.crop_pad = a.refine.crop_pad;
    if (given(app, "--target-w")) rc.target_w = a.refine.target_w;
    if (given(app, "--target-h")) rc.target_h = a.refine.target_h;
    if (given(app, "--nms-iou")) rc.nms_iou = a.refine.nms_iou;
    if (given(app, "--refine-floor")) rc.refine_conf_floor = a.refine.refine_conf_floor;
    if (given(app, "--first-target-w")) fp.target_w = a.first.target_w;
    if (given(app, "--first-target-h")) fp.target_h = a.first.target_h;
    if (given(app, "--first-floor")) fp.conf_floor = a.first.conf_floor;
    if (given(app, "--workers")) workers = a.workers;
    validate(rc);
    validate(fp);

    const auto m = load_manifest(a.manifest);
    ordered_json effective;
    effective["version"] = UAVDET_VERSION;
    effective["manifest"] = a.manifest;
    effective["backend"] = a.backend;
    effective["first_pass"] = to_json(fp);
    effective["refine"] = to_json(rc);
    effective["workers"] = workers;

    std::unique_ptr<DetectorBackend> backend;
    if (a.backend == "synthetic") {
        json sj = a.scene.empty() ? section(cfg, "synthetic") : read_json(a.scene);
        SyntheticParams sp = synthetic_params_from_json(sj);
        if (given(app, "--seed")) sp.seed = a.seed;
        else if (cfg.is_object() && cfg.contains("seed")) sp.seed = cfg["seed"].get<std::uint64_t>();
        effective["synthetic"] = to_json(sp);
        backend = std::make_unique<SyntheticBackend>(scene_from_manifest(m, sp));
    } else if (a.backend == "fixture") {
        if (a.fixture.empty()) throw ValidationError("refine: --fixture is required with --backend fixture");
        effective["fixture"] = a.fixture;
        backend = std::make_unique<FixtureBackend>(fs::path(a.fixture));
    } else if (a.backend == "external") {
        if (a.url.empty()) throw ValidationError("refine: --url is required with --backend external");
        ExternalOptions eo;
        eo.url = a.url;
        eo.connections = std::max<std::size_t>(1, workers ? workers : 4);
        effective["url"] = a.url;
        backend = std::make_unique<ExternalBackend>(eo);
    } else {
        throw ValidationError("refine: unknown backend '" + a.backend + "'");
    }

    std::optional<std::vector<Detection>> pre;
    if (!a.detections.empty()) {
        pre = read_detections_jsonl(a.detections);
        effective["first_pass_detections"] = a.detections;
    }

    DatasetRefineOptions opts{rc, fp, workers};
    std::unique_ptr<RecordingBackend> recorder;
    DetectorBackend* used = backend.get();
    if (!a.record.empty()) {
        recorder = std::make_unique<RecordingBackend>(*backend);
        used = recorder.get();
    }
    const auto result = refine_dataset(m, *used, opts, pre);
    write_refinement(a.out, result, effective);
    write_run_info(a.out, "refine");
    if (recorder) recorder->recorded().save(a.record);

    for (const auto& s : result.skipped) err << "skipped: " << s << "\n";
    const auto& s = result.summary;
    out << "refine: " << s.images << " images, " << s.detections_in << " detections, " << s.candidates
        << " candidates, " << s.replaced << " replaced, " << s.gated_low_iou << " low-iou, " << s.gated_not_higher
        << " not-higher-conf, " << s.backend_errors << " backend errors\n";
    if (result.skipped_by_backend > 0) return kBackend;
    if (!result.skipped.empty()) return kValidation;
    return kOk;
}

// ---------------------------------------------------------------------------
// eval

ordered_json eval_to_json(const EvalResult& r) {
    ordered_json j;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["map50"] = r.map50;
    j["map50_95"] = r.map50_95;
    j["tp"] = r.tp;
    j["fp"] = r.fp;
    j["fn"] = r.fn;
    j["n_gt"] = r.n_gt;
    j["score_cut"] = r.score_cut;
    j["interpolation"] = std::string(to_string(r.interpolation));
    j["iou_thresholds"] = r.thresholds;
    ordered_json per = ordered_json::object();
    for (const auto& [cls, aps] : r.per_class_ap) {
        ordered_json arr = ordered_json::array();
        for (const auto& ap : aps) arr.push_back(ap ? ordered_json(*ap) : ordered_json(nullptr));
        per[std::to_string(cls)] = std::move(arr);
    }
    j["per_class_ap"] = std::move(per);
    return j;
}

std::string table_row(const std::string& name, const EvalResult& r) {
    std::ostringstream ss;
    ss << std::left << std::setw(24) << name << std::right << std::setw(10) << fixed(100 * r.precision, 1)
       << std::setw(10) << fixed(100 * r.recall, 1) << std::setw(10) << fixed(100 * r.map50, 1) << std::setw(12)
       << fixed(100 * r.map50_95, 1) << "\n";
    return ss.str();
}

std::string table_header() {
    std::ostringstream ss;
    ss << std::left << std::setw(24) << "Method" << std::right << std::setw(10) << "Precision" << std::setw(10)
       << "Recall" << std::setw(10) << "mAP50" << std::setw(12) << "AP50-95" << "\n";
    return ss.str();
}

struct EvalArgs {
    std::string manifest;
    std::string detections;
    std::string compare;
    std::string config;
    std::string out;
    std::string table;
    std::vector<double> thresholds;
    double score_cut = 0.25;
    std::string interpolation = "coco101";
    std::string label_a = "single-stage";
    std::string label_b = "two-stage *";
    CLI::App* app = nullptr;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    const json cfg = a.config.empty() ? json() : read_json(a.config);
    check_top_level(cfg);
    const json ej = section(cfg, "eval");
    EvalOptions opts;
    std::string interp = ej.value("interpolation", std::string("coco101"));
    opts.score_cut = ej.value("score_cut", 0.25);
    if (ej.contains("iou_thresholds")) opts.iou_thresholds = ej["iou_thresholds"].get<std::vector<double>>();
    if (given(a.app, "--score-cut")) opts.score_cut = a.score_cut;
    if (given(a.app, "--interpolation")) interp = a.interpolation;
    if (given(a.app, "--iou-thresholds")) opts.iou_thresholds = a.thresholds;
    if (interp == "coco101") opts.interpolation = ApInterpolation::kCoco101;
    else if (interp == "all_point") opts.interpolation = ApInterpolation::kAllPoint;
    else throw ValidationError("eval: unknown interpolation '" + interp + "'");

    const auto m = load_manifest(a.manifest);
    for (const auto& e : m.entries) {
        opts.image_ids.push_back(e.image_id);
        if (!e.label_path) throw ValidationError("eval: image '" + e.image_id + "' has no label file");
    }
    std::vector<std::string> warnings;
    const auto gts = load_ground_truth(m, &warnings);
    for (const auto& w : warnings) err << "warning: " << w << "\n";

    const auto first = evaluate(read_detections_jsonl(a.detections), gts, opts);
    ordered_json j;
    j["version"] = UAVDET_VERSION;
    j["manifest"] = a.manifest;
    std::string table = table_header();
    if (a.compare.empty()) {
        j["detections"] = a.detections;
        j["result"] = eval_to_json(first);
        table += table_row(a.label_a, first);
    } else {
        const auto second = evaluate(read_detections_jsonl(a.compare), gts, opts);
        j["detections"] = a.detections;
        j["compare"] = a.compare;
        j["result"] = eval_to_json(first);
        j["compare_result"] = eval_to_json(second);
        ordered_json d;
        d["precision"] = second.precision - first.precision;
        d["recall"] = second.recall - first.recall;
        d["map50"] = second.map50 - first.map50;
        d["map50_95"] = second.map50_95 - first.map50_95;
        j["delta"] = std::move(d);
        table += table_row(a.label_a, first);
        table += table_row(a.label_b, second);
    }
    if (!a.out.empty()) write_file_atomic(a.out, j.dump(2) + "\n");
    if (!a.table.empty()) write_file_atomic(a.table, table);
    out << table;
    return kOk;
}

// ---------------------------------------------------------------------------
// render

std::string xml_escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '&': o += "&amp;"; break;
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '"': o += "&quot;"; break;
            default: o += c;
        }
    }
    return o;
}

std::string svg_rect(const Box& b, const char* color, const std::string& label) {
    std::string s = "    <rect x=\"" + num(b.x0()) + "\" y=\"" + num(b.y0()) + "\" width=\"" + num(b.w()) +
                    "\" height=\"" + num(b.h()) + "\" stroke=\"" + color + "\" fill=\"none\" stroke-width=\"2\"/>\n";
    if (!label.empty())
        s += "    <text x=\"" + num(b.x0()) + "\" y=\"" + num(std::max(10.0, b.y0() - 2)) + "\" fill=\"" + color +
             "\" font-size=\"10\">" + xml_escape(label) + "</text>\n";
    return s;
}

struct RenderArgs {
    std::string manifest;
    std::string first;
    std::string second;
    std::string out;
};

int cmd_render(const RenderArgs& a, std::ostream& out) {
    const auto m = load_manifest(a.manifest);
    const auto gts = load_ground_truth(m);
    std::map<std::string, std::vector<Detection>> first, second;
    if (!a.first.empty())
        for (auto& d : read_detections_jsonl(a.first)) first[d.image_id].push_back(d);
    if (!a.second.empty())
        for (auto& d : read_detections_jsonl(a.second)) second[d.image_id].push_back(d);
    fs::create_directories(a.out);
    for (const auto& e : m.entries) {
        std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(e.width) +
                          "\" height=\"" + std::to_string(e.height) + "\" viewBox=\"0 0 " + std::to_string(e.width) +
                          " " + std::to_string(e.height) + "\">\n";
        if (!e.image_path.empty())
            svg += "  <image href=\"" + xml_escape(e.image_path) + "\" x=\"0\" y=\"0\" width=\"" +
                   std::to_string(e.width) + "\" height=\"" + std::to_string(e.height) + "\"/>\n";
        svg += "  <g class=\"ground-truth\">\n";
        for (const auto& g : gts)
            if (g.image_id == e.image_id) svg += svg_rect(g.box, "blue", "");
        svg += "  </g>\n";
        auto group = [&](const char* cls, const char* color, const std::vector<Detection>& dets) {
            svg += std::string("  <g class=\"") + cls + "\">\n";
            for (const auto& d : dets)
                svg += svg_rect(d.box, color, std::to_string(d.class_id) + " " + fixed(d.score, 2));
            svg += "  </g>\n";
        };
        if (!a.first.empty()) group("first", "red", first[e.image_id]);
        if (!a.second.empty()) group("second", "green", second[e.image_id]);
        svg += "</svg>\n";
        write_file_atomic(fs::path(a.out) / (e.image_id + ".svg"), svg);
    }
    out << "render: " << m.entries.size() << " overlays written to " << a.out << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// detector-conformance / serve

int cmd_conformance(const std::string& url, bool strict, std::ostream& out) {
    ExternalOptions o;
    o.url = url;
    const auto results = run_conformance(o, canned_conformance_cases(strict));
    bool all = true;
    for (const auto& r : results) {
        out << (r.passed ? "PASS " : "FAIL ") << r.label << ": " << r.detail << "\n";
        all = all && r.passed;
    }
    return all ? kOk : kBackend;
}

struct ServeArgs {
    std::string manifest;
    std::string scene;
    std::string host = "127.0.0.1";
    int port = 8080;
};

int cmd_serve(const ServeArgs& a, std::ostream& out) {
    SyntheticSceneModel model;
    if (a.manifest.empty()) {
        model = conformance_scene();
    } else {
        const SyntheticParams sp = a.scene.empty() ? SyntheticParams{} : synthetic_params_from_json(read_json(a.scene));
        model = scene_from_manifest(load_manifest(a.manifest), sp);
    }
    SyntheticBackend backend(std::move(model));
    DetectorServer server(backend);
    out << "serving synthetic detector on http://" << a.host << ":" << a.port << "/detect\n" << std::flush;
    server.listen(a.host, a.port);
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Small-object detection toolkit: losses, refinement, evaluation"};
    app.name("uavdet");
    app.set_version_flag("--version", std::string(UAVDET_VERSION));
    app.require_subcommand(1);

    GradcheckArgs ga;
    auto* gc = app.add_subcommand("gradcheck", "Compare analytic loss gradients with finite differences");
    gc->add_option("--seed", ga.seed, "Random seed")->capture_default_str();
    gc->add_option("--samples,-n", ga.n, "Number of box pairs")->capture_default_str();
    gc->add_option("--lambda", ga.lambda, "Weight of the NWD term")->capture_default_str();
    gc->add_option("--c-norm", ga.c_norm, "NWD normalizing constant")->capture_default_str();
    gc->add_option("--mode", ga.mode, "frozen | full")->check(CLI::IsMember({"frozen", "full"}))->capture_default_str();
    gc->add_option("--threshold", ga.threshold, "Maximum allowed relative error")->capture_default_str();
    gc->add_option("--out", ga.out, "Write the report here as JSON");

    PatchArgs pa;
    auto* pt = app.add_subcommand("patch", "Tile images into windows and remap labels");
    pt->add_option("--manifest", pa.manifest, "Input manifest")->required();
    pt->add_option("--out", pa.out, "Output manifest path")->required();
    pt->add_option("--patch-w", pa.patch_w, "Patch width");
    pt->add_option("--patch-h", pa.patch_h, "Patch height");
    pt->add_option("--overlap", pa.overlap, "Overlap in pixels");
    pt->add_option("--min-visibility", pa.min_visibility, "Visible fraction needed to keep a label");

    RefineArgs ra;
    auto* rf = app.add_subcommand("refine", "Run the two-stage confidence-guided refinement");
    ra.app = rf;
    rf->add_option("--manifest", ra.manifest, "Dataset manifest")->required();
    rf->add_option("--out", ra.out, "Output directory")->required();
    rf->add_option("--backend", ra.backend, "synthetic | fixture | external")
        ->check(CLI::IsMember({"synthetic", "fixture", "external"}))
        ->capture_default_str();
    rf->add_option("--scene", ra.scene, "Synthetic scene parameters (JSON)");
    rf->add_option("--fixture", ra.fixture, "Fixture file for the replay backend");
    rf->add_option("--url", ra.url, "External detector base URL");
    rf->add_option("--detections", ra.detections, "Precomputed first-pass detections (JSONL)");
    rf->add_option("--config", ra.config, "Run configuration (JSON)");
    rf->add_option("--record", ra.record, "Record every backend response into a fixture file");
    rf->add_option("--workers", ra.workers, "Worker threads (0: all cores)");
    rf->add_option("--seed", ra.seed, "Synthetic backend seed");
    rf->add_option("--conf-threshold", ra.refine.conf_threshold, "Refine detections scoring below this");
    rf->add_option("--gate-iou", ra.refine.gate_iou, "Minimum IoU for a replacement");
    rf->add_option("--scale-min", ra.refine.scale_min, "Lower clamp of the crop scale");
    rf->add_option("--scale-max", ra.refine.scale_max, "Upper clamp of the crop scale");
    rf->add_option("--crop-pad", ra.refine.crop_pad, "Relative crop margin");
    rf->add_option("--target-w", ra.refine.target_w, "Second-pass input width");
    rf->add_option("--target-h", ra.refine.target_h, "Second-pass input height");
    rf->add_option("--nms-iou", ra.refine.nms_iou, "Final NMS IoU threshold");
    rf->add_option("--refine-floor", ra.refine.refine_conf_floor, "Second-pass confidence floor");
    rf->add_option("--first-target-w", ra.first.target_w, "First-pass input width");
    rf->add_option("--first-target-h", ra.first.target_h, "First-pass input height");
    rf->add_option("--first-floor", ra.first.conf_floor, "First-pass confidence floor");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Evaluate detections against manifest labels");
    ea.app = ev;
    ev->add_option("--manifest", ea.manifest, "Dataset manifest with labels")->required();
    ev->add_option("--detections", ea.detections, "Detections (JSONL)")->required();
    ev->add_option("--compare", ea.compare, "Second detection set for a side-by-side table");
    ev->add_option("--config", ea.config, "Run configuration (JSON, 'eval' section)");
    ev->add_option("--out", ea.out, "Write the result here as JSON");
    ev->add_option("--table", ea.table, "Write the text table here");
    ev->add_option("--iou-thresholds", ea.thresholds, "IoU thresholds (default 0.50:0.05:0.95)");
    ev->add_option("--score-cut", ea.score_cut, "Operating point for precision and recall");
    ev->add_option("--interpolation", ea.interpolation, "coco101 | all_point");
    ev->add_option("--label", ea.label_a, "Row label of the first set");
    ev->add_option("--compare-label", ea.label_b, "Row label of the second set");

    RenderArgs rn;
    auto* rd = app.add_subcommand("render", "Write SVG overlays: labels blue, first set red, second green");
    rd->add_option("--manifest", rn.manifest, "Dataset manifest")->required();
    rd->add_option("--detections", rn.first, "First detection set (red)");
    rd->add_option("--second", rn.second, "Second detection set (green)");
    rd->add_option("--out", rn.out, "Output directory")->required();

    std::string conf_url;
    bool strict = false;
    auto* cf = app.add_subcommand("detector-conformance", "Check a detector server against canned requests");
    cf->add_option("--url", conf_url, "Server base URL")->required();
    cf->add_flag("--strict", strict, "Also require the synthetic reference answers");

    ServeArgs sa;
    auto* sv = app.add_subcommand("serve", "Serve the synthetic detector over HTTP");
    sv->add_option("--manifest", sa.manifest, "Scenes from this manifest (default: conformance scene)");
    sv->add_option("--scene", sa.scene, "Synthetic scene parameters (JSON)");
    sv->add_option("--host", sa.host, "Bind address")->capture_default_str();
    sv->add_option("--port", sa.port, "Port")->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return kOk;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return kOk;
    } catch (const CLI::CallForVersion& e) {
        app.exit(e, out, err);
        return kOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kValidation;
    }

    try {
        if (*gc) return cmd_gradcheck(ga, out);
        if (*pt) return cmd_patch(pa, out, err);
        if (*rf) return cmd_refine(ra, out, err);
        if (*ev) return cmd_eval(ea, out, err);
        if (*rd) return cmd_render(rn, out);
        if (*cf) return cmd_conformance(conf_url, strict, out);
        if (*sv) return cmd_serve(sa, out);
    } catch (const ConfigError& e) {
        err << "error: invalid configuration:\n";
        for (const auto& p : e.problems()) err << "  " << p << "\n";
        return kValidation;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const BackendError& e) {
        err << "backend error: " << e.what() << "\n";
        return kBackend;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    }
    return kValidation;
}

}  // namespace uavdet::cli
