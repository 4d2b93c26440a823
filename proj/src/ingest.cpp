#include "uavdet/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>

#include <json.hpp>

#include "uavdet/error.hpp"

namespace uavdet {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string read_text(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string shortest(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

// ---------------------------------------------------------------------------
// Detection JSONL

std::string detection_to_json_line(const Detection& d) {
    ordered_json j;
    j["image_id"] = d.image_id;
    j["bbox_xyxy"] = {d.box.x0(), d.box.y0(), d.box.x1(), d.box.y1()};
    j["score"] = d.score;
    j["class_id"] = d.class_id;
    j["source"] = std::string(to_string(d.source));
    if (d.extra.is_object())
        for (const auto& [k, v] : d.extra.items()) j[k] = v;
    return j.dump();
}

Detection detection_from_json_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError("detection must be a JSON object");
    auto number = [&](const json& v, const char* what) {
        if (!v.is_number()) throw ValidationError(std::string(what) + " must be a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw ValidationError(std::string(what) + " must be finite");
        return d;
    };
    for (const char* key : {"image_id", "bbox_xyxy", "score", "class_id"})
        if (!j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
    if (!j["image_id"].is_string()) throw ValidationError("image_id must be a string");
    const auto& bb = j["bbox_xyxy"];
    if (!bb.is_array() || bb.size() != 4) throw ValidationError("bbox_xyxy must be an array of 4 numbers");
    if (!j["class_id"].is_number_integer()) throw ValidationError("class_id must be an integer");

    Detection d{Box::from_corners(number(bb[0], "bbox_xyxy[0]"), number(bb[1], "bbox_xyxy[1]"),
                                  number(bb[2], "bbox_xyxy[2]"), number(bb[3], "bbox_xyxy[3]")),
                number(j["score"], "score"),
                j["class_id"].get<int>(),
                j["image_id"].get<std::string>(),
                DetectionSource::kInitial,
                json::object()};
    if (j.contains("source")) {
        if (!j["source"].is_string()) throw ValidationError("source must be a string");
        d.source = parse_source(j["source"].get<std::string>());
    }
    validate(d);
    for (const auto& [k, v] : j.items())
        if (k != "image_id" && k != "bbox_xyxy" && k != "score" && k != "class_id" && k != "source") d.extra[k] = v;
    return d;
}

std::vector<Detection> read_detections_jsonl(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open detections file " + path.string());
    std::vector<Detection> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(detection_from_json_line(line));
        } catch (const ValidationError& e) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void write_detections_jsonl(const std::filesystem::path& path, const std::vector<Detection>& dets) {
    std::string text;
    for (const auto& d : dets) {
        text += detection_to_json_line(d);
        text += '\n';
    }
    write_file_atomic(path, text);
}

// ---------------------------------------------------------------------------
// Manifest

void validate(const PatchPlan& plan) {
    std::vector<std::string> problems;
    if (plan.patch_w < 1 || plan.patch_h < 1) problems.push_back("patch_plan.size: patch dims must be >= 1");
    if (plan.overlap < 0) problems.push_back("patch_plan.overlap: must be >= 0");
    if (plan.overlap >= std::min(plan.patch_w, plan.patch_h))
        problems.push_back("patch_plan.overlap: must be smaller than both patch dims");
    if (!(plan.min_visibility > 0.0 && plan.min_visibility <= 1.0))
        problems.push_back("patch_plan.min_visibility: must lie in (0, 1]");
    if (!problems.empty()) throw ConfigError(std::move(problems));
}

const ManifestEntry* DatasetManifest::find(const std::string& image_id) const {
    for (const auto& e : entries)
        if (e.image_id == image_id) return &e;
    return nullptr;
}

std::filesystem::path DatasetManifest::resolve(const std::string& path) const {
    const std::filesystem::path p(path);
    return p.is_absolute() ? p : base_dir / p;
}

void validate(const DatasetManifest& m) {
    std::vector<std::string> problems;
    std::set<std::string> ids;
    for (const auto& e : m.entries) {
        if (!ids.insert(e.image_id).second) problems.push_back("entries.unique_ids: duplicate image id '" + e.image_id + "'");
        if (e.width < 1 || e.height < 1)
            problems.push_back("entries.dimensions: image '" + e.image_id + "' has non-positive dimensions");
    }
    if (m.patch_plan) {
        try {
            validate(*m.patch_plan);
        } catch (const ConfigError& e) {
            problems.insert(problems.end(), e.problems().begin(), e.problems().end());
        }
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    DatasetManifest m;
    m.base_dir = path.parent_path();
    try {
        m.class_names = j.value("class_names", std::vector<std::string>{});
        for (const auto& e : j.at("entries")) {
            ManifestEntry entry;
            entry.image_id = e.at("image_id").get<std::string>();
            entry.image_path = e.value("image_path", std::string{});
            entry.width = e.at("width").get<int>();
            entry.height = e.at("height").get<int>();
            if (e.contains("label_path") && !e["label_path"].is_null()) entry.label_path = e["label_path"].get<std::string>();
            m.entries.push_back(std::move(entry));
        }
        if (j.contains("patch_plan") && !j["patch_plan"].is_null()) {
            const auto& p = j["patch_plan"];
            m.patch_plan = PatchPlan{p.at("patch_w").get<int>(), p.at("patch_h").get<int>(), p.value("overlap", 0),
                                     p.value("min_visibility", 0.3)};
        }
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": malformed manifest: " + e.what());
    }
    validate(m);
    return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
    validate(m);
    ordered_json j;
    j["class_names"] = m.class_names;
    ordered_json entries = ordered_json::array();
    for (const auto& e : m.entries) {
        ordered_json o;
        o["image_id"] = e.image_id;
        o["image_path"] = e.image_path;
        o["width"] = e.width;
        o["height"] = e.height;
        if (e.label_path) o["label_path"] = *e.label_path;
        entries.push_back(std::move(o));
    }
    j["entries"] = std::move(entries);
    if (m.patch_plan) {
        ordered_json p;
        p["patch_w"] = m.patch_plan->patch_w;
        p["patch_h"] = m.patch_plan->patch_h;
        p["overlap"] = m.patch_plan->overlap;
        p["min_visibility"] = m.patch_plan->min_visibility;
        j["patch_plan"] = std::move(p);
    }
    write_file_atomic(path, j.dump(2) + "\n");
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw ValidationError("cannot open " + tmp.string() + " for writing");
        os << contents;
        if (!os) throw ValidationError("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// YOLO labels

LabelLoad load_yolo_labels(const std::filesystem::path& label_path, int image_w, int image_h,
                           const std::vector<std::string>& class_names, const std::string& image_id) {
    if (image_w < 1 || image_h < 1) throw ValidationError("image dimensions must be positive");
    std::ifstream is(label_path);
    if (!is) throw ValidationError("cannot open label file " + label_path.string());
    LabelLoad out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string where = label_path.string() + ":" + std::to_string(line_no) + ": ";
        std::istringstream ls(line);
        std::vector<std::string> tok;
        for (std::string t; ls >> t;) tok.push_back(t);
        if (tok.empty()) continue;
        if (tok.size() != 5) throw ValidationError(where + "expected 5 fields, got " + std::to_string(tok.size()));

        int cls = 0;
        const auto cr = std::from_chars(tok[0].data(), tok[0].data() + tok[0].size(), cls);
        if (cr.ec != std::errc{} || cr.ptr != tok[0].data() + tok[0].size())
            throw ValidationError(where + "class index '" + tok[0] + "' is not an integer");
        if (cls < 0 || (!class_names.empty() && cls >= static_cast<int>(class_names.size())))
            throw ValidationError(where + "class index " + std::to_string(cls) + " out of range for " +
                                  std::to_string(class_names.size()) + " classes");
        double v[4];
        for (int i = 0; i < 4; ++i) {
            const auto& t = tok[i + 1];
            const auto r = std::from_chars(t.data(), t.data() + t.size(), v[i]);
            if (r.ec != std::errc{} || r.ptr != t.data() + t.size() || !std::isfinite(v[i]))
                throw ValidationError(where + "field '" + t + "' is not a number");
            if (v[i] < 0.0 || v[i] > 1.0) throw ValidationError(where + "value " + t + " outside [0, 1]");
        }
        if (v[2] <= 0.0 || v[3] <= 0.0) throw ValidationError(where + "box has zero width or height");
        const Box full = Box::from_center(v[0] * image_w, v[1] * image_h, v[2] * image_w, v[3] * image_h);
        const auto clipped = clip(full, 0, 0, image_w, image_h);
        if (!clipped) throw ValidationError(where + "box lies outside the image");
        if (!(*clipped == full)) out.warnings.push_back(where + "box clipped to image bounds");
        out.objects.push_back({*clipped, cls, image_id});
    }
    return out;
}

void write_yolo_labels(const std::filesystem::path& path, const std::vector<GroundTruthObject>& objects, int image_w,
                       int image_h) {
    std::string text;
    for (const auto& o : objects) {
        text += std::to_string(o.class_id);
        for (double v : {o.box.cx() / image_w, o.box.cy() / image_h, o.box.w() / image_w, o.box.h() / image_h}) {
            text += ' ';
            text += shortest(std::clamp(v, 0.0, 1.0));
        }
        text += '\n';
    }
    write_file_atomic(path, text);
}

std::vector<GroundTruthObject> load_ground_truth(const DatasetManifest& m, std::vector<std::string>* warnings) {
    std::vector<GroundTruthObject> out;
    for (const auto& e : m.entries) {
        if (!e.label_path) continue;
        auto loaded = load_yolo_labels(m.resolve(*e.label_path), e.width, e.height, m.class_names, e.image_id);
        out.insert(out.end(), loaded.objects.begin(), loaded.objects.end());
        if (warnings) warnings->insert(warnings->end(), loaded.warnings.begin(), loaded.warnings.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Patching

namespace {

std::vector<int> axis_starts(int extent, int patch, int stride) {
    std::vector<int> starts;
    if (patch >= extent) return {0};
    for (int s = 0;; s += stride) {
        if (s + patch >= extent) {
            starts.push_back(extent - patch);
            break;
        }
        starts.push_back(s);
    }
    return starts;
}

}  // namespace

PatchLayout plan_patches(int image_w, int image_h, const PatchPlan& plan) {
    validate(plan);
    if (image_w < 1 || image_h < 1) throw ValidationError("plan_patches: image dimensions must be positive");
    PatchLayout layout;
    if (plan.patch_w > image_w || plan.patch_h > image_h) {
        layout.warnings.push_back("patch " + std::to_string(plan.patch_w) + "x" + std::to_string(plan.patch_h) +
                                  " larger than image " + std::to_string(image_w) + "x" + std::to_string(image_h) +
                                  "; using a single whole-image window");
        layout.windows.push_back(CropWindow::whole(image_w, image_h));
        return layout;
    }
    const auto xs = axis_starts(image_w, plan.patch_w, plan.patch_w - plan.overlap);
    const auto ys = axis_starts(image_h, plan.patch_h, plan.patch_h - plan.overlap);
    for (int y : ys)
        for (int x : xs) layout.windows.emplace_back(x, y, x + plan.patch_w, y + plan.patch_h, image_w, image_h);
    return layout;
}

std::vector<std::vector<GroundTruthObject>> remap_labels(const std::vector<GroundTruthObject>& objects,
                                                         const std::vector<CropWindow>& windows,
                                                         double min_visibility) {
    if (!(min_visibility > 0.0 && min_visibility <= 1.0))
        throw ValidationError("min_visibility must lie in (0, 1]");
    std::vector<std::vector<GroundTruthObject>> out(windows.size());
    for (std::size_t w = 0; w < windows.size(); ++w)
        for (const auto& o : objects) {
            const auto local = image_to_window(o.box, windows[w]);
            if (!local || local->visible_fraction < min_visibility) continue;
            out[w].push_back({local->box, o.class_id, patch_image_id(o.image_id, windows[w])});
        }
    return out;
}

std::string patch_image_id(const std::string& image_id, const CropWindow& w) {
    return image_id + "__" + std::to_string(w.x0()) + "_" + std::to_string(w.y0());
}

}  // namespace uavdet
