#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "uavdet/geometry.hpp"
#include "uavdet/metrics.hpp"
#include "uavdet/postprocess.hpp"

namespace uavdet {

// ---------------------------------------------------------------------------
// Detection JSONL: one object per line,
//   {"image_id": str, "bbox_xyxy": [x0, y0, x1, y1], "score": num, "class_id": int,
//    "source": "initial" | "refined", ...unknown fields kept}

std::string detection_to_json_line(const Detection& d);
Detection detection_from_json_line(const std::string& line);  // throws ValidationError

std::vector<Detection> read_detections_jsonl(const std::filesystem::path& path);
void write_detections_jsonl(const std::filesystem::path& path, const std::vector<Detection>& dets);

// ---------------------------------------------------------------------------
// Dataset manifest

struct PatchPlan {
    int patch_w = 608;
    int patch_h = 513;
    int overlap = 0;
    double min_visibility = 0.3;
};

void validate(const PatchPlan& plan);

struct ManifestEntry {
    std::string image_id;
    std::string image_path;
    int width = 0;
    int height = 0;
    std::optional<std::string> label_path;

    bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> class_names;
    std::optional<PatchPlan> patch_plan;
    std::filesystem::path base_dir;  // relative paths resolve against this; not serialized

    const ManifestEntry* find(const std::string& image_id) const;
    std::filesystem::path resolve(const std::string& path) const;
};

// Unique ids, positive dimensions.
void validate(const DatasetManifest& m);

DatasetManifest load_manifest(const std::filesystem::path& path);
// Written to a temporary file and renamed into place.
void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);

// Replaces `path` atomically with `contents`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

// ---------------------------------------------------------------------------
// YOLO labels: lines "class cx cy w h", coordinates normalized to [0, 1].

struct LabelLoad {
    std::vector<GroundTruthObject> objects;
    std::vector<std::string> warnings;  // boxes clipped to the image
};

LabelLoad load_yolo_labels(const std::filesystem::path& label_path, int image_w, int image_h,
                           const std::vector<std::string>& class_names, const std::string& image_id = {});

void write_yolo_labels(const std::filesystem::path& path, const std::vector<GroundTruthObject>& objects, int image_w,
                       int image_h);

// Ground truth for every manifest entry that has a label file.
std::vector<GroundTruthObject> load_ground_truth(const DatasetManifest& m, std::vector<std::string>* warnings = nullptr);

// ---------------------------------------------------------------------------
// Patching

struct PatchLayout {
    std::vector<CropWindow> windows;  // row-major: top row first, left to right
    std::vector<std::string> warnings;
};

// Windows step by (patch - overlap); the last window on each axis is shifted
// back so it ends on the image border. A patch larger than the image yields a
// single whole-image window and a warning.
PatchLayout plan_patches(int image_w, int image_h, const PatchPlan& plan);

// Per window, the objects whose visible fraction is >= min_visibility, in
// window-local coordinates clipped to the window.
std::vector<std::vector<GroundTruthObject>> remap_labels(const std::vector<GroundTruthObject>& objects,
                                                         const std::vector<CropWindow>& windows,
                                                         double min_visibility);

std::string patch_image_id(const std::string& image_id, const CropWindow& w);

}  // namespace uavdet
