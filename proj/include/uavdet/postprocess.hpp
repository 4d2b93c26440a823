#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "uavdet/geometry.hpp"

namespace uavdet {

enum class DetectionSource { kInitial, kRefined };

std::string_view to_string(DetectionSource s) noexcept;
DetectionSource parse_source(std::string_view s);

struct Detection {
    Box box;
    double score = 0.0;  // in [0, 1]
    int class_id = 0;
    std::string image_id;
    DetectionSource source = DetectionSource::kInitial;
    // Interchange fields this toolkit does not interpret; carried through rewrites.
    nlohmann::json extra = nlohmann::json::object();

    bool operator==(const Detection&) const = default;
};

// Throws ValidationError on score outside [0, 1] or negative class id.
void validate(const Detection& d);

struct NmsOptions {
    double iou_threshold = 0.5;
    bool class_aware = true;
};

// Greedy suppression. Candidates are visited by score descending, then lower
// class_id, then input order; a candidate is kept iff its IoU with every kept
// detection (same class when class_aware) is below the threshold.
std::vector<Detection> nms(const std::vector<Detection>& dets, const NmsOptions& opts = {});

// Indices into dets of the kept detections, in output order.
std::vector<std::size_t> nms_indices(const std::vector<Detection>& dets, const NmsOptions& opts = {});

struct ConfidenceSplit {
    std::vector<Detection> high;  // score >= tau
    std::vector<Detection> low;
};

ConfidenceSplit split_by_confidence(const std::vector<Detection>& dets, double tau);

}  // namespace uavdet
