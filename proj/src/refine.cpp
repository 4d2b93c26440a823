#include "uavdet/refine.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <array>
#include <map>
#include <set>
#include <thread>

#include "uavdet/error.hpp"

namespace uavdet {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

ordered_json brief(const Detection& d) {
    ordered_json j;
    j["bbox_xyxy"] = {d.box.x0(), d.box.y0(), d.box.x1(), d.box.y1()};
    j["score"] = d.score;
    j["class_id"] = d.class_id;
    j["source"] = std::string(to_string(d.source));
    return j;
}

template <class T>
void read_key(const json& j, const char* key, T& out, std::vector<std::string>& problems, const char* prefix) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        problems.push_back(std::string(prefix) + key + ": wrong type");
    }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, std::vector<std::string>& problems,
                    const char* prefix) {
    for (const auto& [k, _] : j.items())
        if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; }))
            problems.push_back(std::string(prefix) + k + ": unknown key");
}

}  // namespace

void validate(const RefineConfig& c) {
    std::vector<std::string> p;
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(c.conf_threshold)) p.push_back("refine.conf_threshold: must lie in [0, 1]");
    if (!(c.gate_iou > 0.0 && c.gate_iou < 1.0)) p.push_back("refine.gate_iou: must lie in (0, 1)");
    if (!(c.scale_min >= 1.0)) p.push_back("refine.scale_min: must be >= 1");
    if (!(c.scale_max >= c.scale_min) || !std::isfinite(c.scale_max))
        p.push_back("refine.scale_max: must be finite and >= scale_min");
    if (!(c.crop_pad >= 0.0) || !std::isfinite(c.crop_pad)) p.push_back("refine.crop_pad: must be >= 0");
    if (c.target_w < 1 || c.target_h < 1) p.push_back("refine.target_size: must be positive");
    if (!(c.nms_iou > 0.0 && c.nms_iou < 1.0)) p.push_back("refine.nms_iou: must lie in (0, 1)");
    if (!unit(c.refine_conf_floor)) p.push_back("refine.refine_conf_floor: must lie in [0, 1]");
    if (!p.empty()) throw ConfigError(std::move(p));
}

json to_json(const RefineConfig& c) {
    return {{"conf_threshold", c.conf_threshold}, {"gate_iou", c.gate_iou},
            {"scale_min", c.scale_min},           {"scale_max", c.scale_max},
            {"crop_pad", c.crop_pad},             {"target_size", {c.target_w, c.target_h}},
            {"nms_iou", c.nms_iou},               {"refine_conf_floor", c.refine_conf_floor}};
}

RefineConfig refine_config_from_json(const json& j, RefineConfig c) {
    if (!j.is_object()) throw ConfigError({"refine: expected a JSON object"});
    std::vector<std::string> p;
    const char* pre = "refine.";
    reject_unknown(j,
                   {"conf_threshold", "gate_iou", "scale_min", "scale_max", "crop_pad", "target_size", "nms_iou",
                    "refine_conf_floor"},
                   p, pre);
    read_key(j, "conf_threshold", c.conf_threshold, p, pre);
    read_key(j, "gate_iou", c.gate_iou, p, pre);
    read_key(j, "scale_min", c.scale_min, p, pre);
    read_key(j, "scale_max", c.scale_max, p, pre);
    read_key(j, "crop_pad", c.crop_pad, p, pre);
    read_key(j, "nms_iou", c.nms_iou, p, pre);
    read_key(j, "refine_conf_floor", c.refine_conf_floor, p, pre);
    std::array<int, 2> ts{c.target_w, c.target_h};
    read_key(j, "target_size", ts, p, pre);
    c.target_w = ts[0];
    c.target_h = ts[1];
    if (!p.empty()) throw ConfigError(std::move(p));
    validate(c);
    return c;
}

void validate(const FirstPassConfig& c) {
    std::vector<std::string> p;
    if (c.target_w < 1 || c.target_h < 1) p.push_back("first_pass.target_size: must be positive");
    if (!(c.conf_floor >= 0.0 && c.conf_floor <= 1.0)) p.push_back("first_pass.conf_floor: must lie in [0, 1]");
    if (!p.empty()) throw ConfigError(std::move(p));
}

json to_json(const FirstPassConfig& c) {
    return {{"target_size", {c.target_w, c.target_h}}, {"conf_floor", c.conf_floor}};
}

FirstPassConfig first_pass_config_from_json(const json& j, FirstPassConfig c) {
    if (!j.is_object()) throw ConfigError({"first_pass: expected a JSON object"});
    std::vector<std::string> p;
    const char* pre = "first_pass.";
    reject_unknown(j, {"target_size", "conf_floor"}, p, pre);
    read_key(j, "conf_floor", c.conf_floor, p, pre);
    std::array<int, 2> ts{c.target_w, c.target_h};
    read_key(j, "target_size", ts, p, pre);
    c.target_w = ts[0];
    c.target_h = ts[1];
    if (!p.empty()) throw ConfigError(std::move(p));
    validate(c);
    return c;
}

std::size_t select_reference(const std::vector<Detection>& dets) {
    if (dets.empty()) throw ValidationError("select_reference: no detections");
    std::size_t best = 0;
    for (std::size_t i = 1; i < dets.size(); ++i) {
        const auto& a = dets[i];
        const auto& b = dets[best];
        if (a.score > b.score || (a.score == b.score && a.box.area() > b.box.area())) best = i;
    }
    return best;
}

CropWindow adaptive_crop(const Detection& candidate, const Detection& reference, int image_w, int image_h,
                         const RefineConfig& cfg) {
    if (image_w < 1 || image_h < 1) throw ValidationError("adaptive_crop: image dimensions must be positive");
    const double s = std::clamp(std::sqrt(reference.box.area() / candidate.box.area()), cfg.scale_min, cfg.scale_max);
    const double f = s * (1.0 + cfg.crop_pad);
    const Box& c = candidate.box;
    const double hw = 0.5 * c.w() * f, hh = 0.5 * c.h() * f;
    auto span = [](double lo, double hi, int extent) {
        int a = static_cast<int>(std::clamp(std::floor(lo), 0.0, static_cast<double>(extent)));
        int b = static_cast<int>(std::clamp(std::ceil(hi), 0.0, static_cast<double>(extent)));
        if (b <= a) {
            if (b < extent) b = a + 1;
            else a = b - 1;
        }
        return std::pair{a, b};
    };
    const auto [x0, x1] = span(c.cx() - hw, c.cx() + hw, image_w);
    const auto [y0, y1] = span(c.cy() - hh, c.cy() + hh, image_h);
    return CropWindow(x0, y0, x1, y1, image_w, image_h);
}

std::string_view to_string(Disposition d) noexcept {
    switch (d) {
        case Disposition::kHighConfidence: return "high-confidence";
        case Disposition::kReplaced: return "replaced";
        case Disposition::kLowIou: return "low-iou";
        case Disposition::kNotHigherConf: return "not-higher-conf";
        case Disposition::kBackendError: return "backend-error";
    }
    return "unknown";
}

ImageRefinement refine_image(const std::string& image_ref, int image_w, int image_h,
                             const std::vector<Detection>& dets, DetectorBackend& backend, const RefineConfig& cfg) {
    validate(cfg);
    ImageRefinement out;
    out.image_id = dets.empty() ? image_ref : dets.front().image_id;
    if (dets.empty()) return out;
    const std::size_t ref = select_reference(dets);

    for (std::size_t i = 0; i < dets.size(); ++i) {
        const Detection& d = dets[i];
        CandidateRecord rec{i, d, {}, {}, {}, {}, 0.0, Disposition::kHighConfidence, {}, d, false};
        if (d.score >= cfg.conf_threshold) {
            out.trace.push_back(std::move(rec));
            continue;
        }
        rec.reference = dets[ref];
        const CropWindow win = adaptive_crop(d, dets[ref], image_w, image_h, cfg);
        rec.window = win;
        try {
            ++out.backend_calls;
            const auto local = backend.detect({image_ref, win, cfg.target_w, cfg.target_h, cfg.refine_conf_floor});
            const double sx = static_cast<double>(win.width()) / cfg.target_w;
            const double sy = static_cast<double>(win.height()) / cfg.target_h;
            for (auto r : local) {
                r.box = window_to_image(r.box, win, sx, sy);
                r.image_id = d.image_id;
                r.source = DetectionSource::kRefined;
                rec.returned.push_back(std::move(r));
            }
        } catch (const std::exception& e) {
            rec.disposition = Disposition::kBackendError;
            rec.error = e.what();
            rec.returned.clear();
            out.trace.push_back(std::move(rec));
            continue;
        }

        for (std::size_t k = 0; k < rec.returned.size(); ++k) {
            if (rec.returned[k].class_id != d.class_id) continue;
            const double v = iou(rec.returned[k].box, d.box);
            if (!rec.match || v > rec.match_iou) {
                rec.match = k;
                rec.match_iou = v;
            }
        }
        if (!rec.match) {
            rec.disposition = Disposition::kNotHigherConf;
        } else if (rec.match_iou < cfg.gate_iou) {
            rec.disposition = Disposition::kLowIou;
        } else if (!(rec.returned[*rec.match].score > d.score)) {
            rec.disposition = Disposition::kNotHigherConf;
        } else {
            rec.disposition = Disposition::kReplaced;
            rec.output = rec.returned[*rec.match];
            rec.output.extra = d.extra;
        }
        out.trace.push_back(std::move(rec));
    }

    for (const auto& r : out.trace) out.merged.push_back(r.output);
    for (std::size_t k : nms_indices(out.merged, {cfg.nms_iou, true})) {
        out.trace[k].kept_after_nms = true;
        out.detections.push_back(out.merged[k]);
    }
    return out;
}

ordered_json trace_record_to_json(const std::string& image_id, const CandidateRecord& r) {
    ordered_json j;
    j["image_id"] = image_id;
    j["index"] = r.index;
    j["disposition"] = std::string(to_string(r.disposition));
    j["initial"] = brief(r.initial);
    j["reference"] = r.reference ? brief(*r.reference) : ordered_json(nullptr);
    j["window"] = r.window ? ordered_json{r.window->x0(), r.window->y0(), r.window->x1(), r.window->y1()}
                           : ordered_json(nullptr);
    ordered_json ret = ordered_json::array();
    for (const auto& d : r.returned) ret.push_back(brief(d));
    j["returned"] = std::move(ret);
    j["match"] = r.match ? ordered_json(*r.match) : ordered_json(nullptr);
    j["match_iou"] = r.match_iou;
    j["output"] = brief(r.output);
    j["kept_after_nms"] = r.kept_after_nms;
    if (!r.error.empty()) j["error"] = r.error;
    return j;
}

std::vector<Detection> first_pass(const ManifestEntry& entry, DetectorBackend& backend, const FirstPassConfig& fp) {
    validate(fp);
    const std::string ref = entry.image_path.empty() ? entry.image_id : entry.image_path;
    const CropWindow whole = CropWindow::whole(entry.width, entry.height);
    const double sx = static_cast<double>(entry.width) / fp.target_w;
    const double sy = static_cast<double>(entry.height) / fp.target_h;
    auto dets = backend.detect({ref, std::nullopt, fp.target_w, fp.target_h, fp.conf_floor});
    for (auto& d : dets) {
        d.box = window_to_image(d.box, whole, sx, sy);
        d.image_id = entry.image_id;
        d.source = DetectionSource::kInitial;
    }
    return dets;
}

void ScoreHistogram::add(double score) {
    const auto bin = std::min<std::size_t>(counts.size() - 1, static_cast<std::size_t>(std::max(0.0, score) * 10.0));
    ++counts[bin];
}

ordered_json to_json(const RefineSummary& s) {
    ordered_json j;
    j["images"] = s.images;
    j["images_skipped"] = s.images_skipped;
    j["detections_in"] = s.detections_in;
    j["detections_out"] = s.detections_out;
    j["high_confidence"] = s.high_confidence;
    j["candidates"] = s.candidates;
    j["replaced"] = s.replaced;
    j["gated_low_iou"] = s.gated_low_iou;
    j["gated_not_higher_conf"] = s.gated_not_higher;
    j["backend_errors"] = s.backend_errors;
    j["backend_calls"] = s.backend_calls;
    j["mean_score_replaced_before"] = s.mean_score_replaced_before;
    j["mean_score_replaced_after"] = s.mean_score_replaced_after;
    j["score_histogram_before"] = s.before.counts;
    j["score_histogram_after"] = s.after.counts;
    return j;
}

DatasetRefinement refine_dataset(const DatasetManifest& manifest, DetectorBackend& backend,
                                 const DatasetRefineOptions& opts,
                                 const std::optional<std::vector<Detection>>& precomputed) {
    validate(manifest);
    validate(opts.refine);
    validate(opts.first_pass);
    DatasetRefinement result;

    std::map<std::string, std::vector<Detection>> given;
    if (precomputed) {
        std::set<std::string> unknown;
        for (const auto& d : *precomputed) {
            if (manifest.find(d.image_id)) given[d.image_id].push_back(d);
            else unknown.insert(d.image_id);
        }
        for (const auto& id : unknown) result.skipped.push_back(id + ": not in manifest");
    }

    struct Slot {
        std::vector<Detection> first;
        std::optional<ImageRefinement> refined;
        std::string error;
        bool backend_failure = false;
    };
    const std::size_t n = manifest.entries.size();
    std::vector<Slot> slots(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            const auto& e = manifest.entries[i];
            Slot& slot = slots[i];
            try {
                if (precomputed) {
                    const auto it = given.find(e.image_id);
                    if (it != given.end()) slot.first = it->second;
                } else {
                    slot.first = first_pass(e, backend, opts.first_pass);
                }
                const std::string ref = e.image_path.empty() ? e.image_id : e.image_path;
                slot.refined = refine_image(ref, e.width, e.height, slot.first, backend, opts.refine);
                slot.refined->image_id = e.image_id;
            } catch (const BackendError& ex) {
                slot.error = ex.what();
                slot.backend_failure = true;
                slot.refined.reset();
            } catch (const std::exception& ex) {
                slot.error = ex.what();
                slot.refined.reset();
            }
        }
    };
    std::size_t workers = opts.workers ? opts.workers : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, std::max<std::size_t>(n, 1));
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }

    RefineSummary& s = result.summary;
    double before = 0.0, after = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        Slot& slot = slots[i];
        if (!slot.refined) {
            result.skipped.push_back(manifest.entries[i].image_id + ": " + slot.error);
            result.skipped_by_backend += slot.backend_failure ? 1 : 0;
            continue;
        }
        ++s.images;
        for (const auto& d : nms(slot.first, {opts.refine.nms_iou, true})) result.single_stage.push_back(d);
        auto& img = *slot.refined;
        result.detections.insert(result.detections.end(), img.detections.begin(), img.detections.end());
        s.detections_in += img.trace.size();
        s.detections_out += img.detections.size();
        s.backend_calls += img.backend_calls;
        for (const auto& r : img.trace) {
            s.before.add(r.initial.score);
            switch (r.disposition) {
                case Disposition::kHighConfidence: ++s.high_confidence; break;
                case Disposition::kReplaced:
                    ++s.replaced;
                    before += r.initial.score;
                    after += r.output.score;
                    break;
                case Disposition::kLowIou: ++s.gated_low_iou; break;
                case Disposition::kNotHigherConf: ++s.gated_not_higher; break;
                case Disposition::kBackendError: ++s.backend_errors; break;
            }
            if (r.disposition != Disposition::kHighConfidence) ++s.candidates;
        }
        for (const auto& d : img.detections) s.after.add(d.score);
        result.images.push_back(std::move(img));
    }
    s.images_skipped = result.skipped.size();
    if (s.replaced) {
        s.mean_score_replaced_before = before / s.replaced;
        s.mean_score_replaced_after = after / s.replaced;
    }
    return result;
}

void write_refinement(const std::filesystem::path& out_dir, const DatasetRefinement& r, const json& config) {
    std::filesystem::create_directories(out_dir);
    write_detections_jsonl(out_dir / "detections.jsonl", r.detections);
    write_detections_jsonl(out_dir / "single_stage.jsonl", r.single_stage);
    std::string trace;
    for (const auto& img : r.images)
        for (const auto& rec : img.trace) trace += trace_record_to_json(img.image_id, rec).dump() + "\n";
    write_file_atomic(out_dir / "trace.jsonl", trace);
    auto summary = to_json(r.summary);
    summary["skipped"] = r.skipped;
    write_file_atomic(out_dir / "summary.json", summary.dump(2) + "\n");
    write_file_atomic(out_dir / "config.json", config.dump(2) + "\n");
}

}  // namespace uavdet
