#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uavdet/geometry.hpp"
#include "uavdet/postprocess.hpp"

namespace uavdet {

struct GroundTruthObject {
    Box box;
    int class_id = 0;
    std::string image_id;

    bool operator==(const GroundTruthObject&) const = default;
};

enum class ApInterpolation {
    kCoco101,   // mean of the precision envelope at recall 0, 0.01, ..., 1
    kAllPoint,  // area under the precision envelope
};

std::string_view to_string(ApInterpolation m) noexcept;

// Greedy one-to-one matching within each (image, class). Detections are visited
// by score descending (ties by input order); each takes the unmatched ground
// truth with the highest IoU >= iou_thr. Returns one TP flag per input
// detection, in input order.
std::vector<bool> match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthObject>& gts,
                                   double iou_thr);

struct ScoredFlag {
    double score;
    bool tp;
};

// AP from flags (any order; sorted internally by score descending, stable).
// nullopt when there is neither ground truth nor a detection.
std::optional<double> average_precision(std::vector<ScoredFlag> flags, std::size_t n_gt,
                                        ApInterpolation mode = ApInterpolation::kCoco101);

struct EvalOptions {
    std::vector<double> iou_thresholds;  // empty means 0.50, 0.55, ..., 0.95
    double score_cut = 0.25;             // operating point for precision / recall
    ApInterpolation interpolation = ApInterpolation::kCoco101;
    // Images detections may reference. Empty means "the images named by the ground truth".
    std::vector<std::string> image_ids;
};

std::vector<double> coco_iou_thresholds();

struct EvalResult {
    // class id -> AP per threshold (same order as `thresholds`); nullopt when undefined.
    std::map<int, std::vector<std::optional<double>>> per_class_ap;
    std::vector<double> thresholds;
    double precision = 0.0;  // at IoU 0.5 and score_cut; 0 when nothing passes the cut
    double recall = 0.0;
    double map50 = 0.0;
    double map50_95 = 0.0;
    std::size_t tp = 0, fp = 0, fn = 0;
    std::size_t n_gt = 0;
    double score_cut = 0.25;
    ApInterpolation interpolation = ApInterpolation::kCoco101;
};

EvalResult evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruthObject>& gts,
                    const EvalOptions& opts = {});

}  // namespace uavdet
