#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "uavdet/detector.hpp"
#include "uavdet/geometry.hpp"
#include "uavdet/ingest.hpp"
#include "uavdet/postprocess.hpp"

namespace uavdet {

struct RefineConfig {
    double conf_threshold = 0.5;  // detections below this are refined
    double gate_iou = 0.25;
    double scale_min = 1.0;
    double scale_max = 4.0;
    double crop_pad = 0.25;
    int target_w = 640;
    int target_h = 640;
    double nms_iou = 0.5;
    double refine_conf_floor = 0.05;
};

void validate(const RefineConfig& c);
nlohmann::json to_json(const RefineConfig& c);
// Keys of `j` override `base`; unknown keys and bad types are reported together.
RefineConfig refine_config_from_json(const nlohmann::json& j, RefineConfig base = {});

// Whole-image detection pass that precedes refinement.
struct FirstPassConfig {
    int target_w = 640;
    int target_h = 640;
    double conf_floor = 0.05;
};

void validate(const FirstPassConfig& c);
nlohmann::json to_json(const FirstPassConfig& c);
FirstPassConfig first_pass_config_from_json(const nlohmann::json& j, FirstPassConfig base = {});

// Highest score; ties go to the larger box, then the earlier index. Empty input throws.
std::size_t select_reference(const std::vector<Detection>& dets);

CropWindow adaptive_crop(const Detection& candidate, const Detection& reference, int image_w, int image_h,
                         const RefineConfig& cfg);

enum class Disposition {
    kHighConfidence,  // passed through untouched
    kReplaced,
    kLowIou,
    kNotHigherConf,   // includes "no same-class return"
    kBackendError,
};

std::string_view to_string(Disposition d) noexcept;

struct CandidateRecord {
    std::size_t index = 0;  // position in the input list
    Detection initial;
    std::optional<Detection> reference;
    std::optional<CropWindow> window;
    std::vector<Detection> returned;  // second-pass output mapped to image coordinates
    std::optional<std::size_t> match;  // into `returned`
    double match_iou = 0.0;
    Disposition disposition = Disposition::kHighConfidence;
    std::string error;
    Detection output;           // what entered the merged set
    bool kept_after_nms = false;
};

struct ImageRefinement {
    std::string image_id;
    std::vector<Detection> merged;      // pre-NMS, one per input, input order
    std::vector<Detection> detections;  // after NMS
    std::vector<CandidateRecord> trace;  // one per input, input order
    std::size_t backend_calls = 0;
};

// Image dimensions bound the crops; image_ref is what the backend is asked about.
ImageRefinement refine_image(const std::string& image_ref, int image_w, int image_h,
                             const std::vector<Detection>& dets, DetectorBackend& backend, const RefineConfig& cfg);

nlohmann::ordered_json trace_record_to_json(const std::string& image_id, const CandidateRecord& r);

// Whole-image pass mapped back to image coordinates (no NMS).
std::vector<Detection> first_pass(const ManifestEntry& entry, DetectorBackend& backend, const FirstPassConfig& fp);

struct ScoreHistogram {
    std::vector<std::size_t> counts = std::vector<std::size_t>(10, 0);  // bins of width 0.1 on [0, 1]
    void add(double score);
};

struct RefineSummary {
    std::size_t images = 0;
    std::size_t images_skipped = 0;
    std::size_t detections_in = 0;
    std::size_t detections_out = 0;
    std::size_t high_confidence = 0;
    std::size_t candidates = 0;
    std::size_t replaced = 0;
    std::size_t gated_low_iou = 0;
    std::size_t gated_not_higher = 0;
    std::size_t backend_errors = 0;
    std::size_t backend_calls = 0;
    double mean_score_replaced_before = 0.0;
    double mean_score_replaced_after = 0.0;
    ScoreHistogram before;  // first-pass scores
    ScoreHistogram after;   // final scores
};

nlohmann::ordered_json to_json(const RefineSummary& s);

struct DatasetRefinement {
    std::vector<Detection> single_stage;  // first pass after NMS, manifest order
    std::vector<Detection> detections;    // two-stage output, manifest order
    std::vector<ImageRefinement> images;  // refined images, manifest order
    std::vector<std::string> skipped;     // "image_id: reason"
    std::size_t skipped_by_backend = 0;   // skips caused by a backend failure
    RefineSummary summary;
};

struct DatasetRefineOptions {
    RefineConfig refine;
    FirstPassConfig first_pass;
    std::size_t workers = 0;  // 0: hardware concurrency
};

// First-pass detections come from `precomputed` when given (grouped by image id;
// detections naming images outside the manifest are reported as skipped),
// otherwise from the backend. Images are processed on a worker pool; output
// order follows the manifest.
DatasetRefinement refine_dataset(const DatasetManifest& manifest, DetectorBackend& backend,
                                 const DatasetRefineOptions& opts,
                                 const std::optional<std::vector<Detection>>& precomputed = std::nullopt);

// detections.jsonl, single_stage.jsonl, trace.jsonl, summary.json, config.json.
void write_refinement(const std::filesystem::path& out_dir, const DatasetRefinement& r, const nlohmann::json& config);

}  // namespace uavdet
