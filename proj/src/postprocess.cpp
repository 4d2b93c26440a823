#include "uavdet/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uavdet/error.hpp"

namespace uavdet {

std::string_view to_string(DetectionSource s) noexcept {
    return s == DetectionSource::kRefined ? "refined" : "initial";
}

DetectionSource parse_source(std::string_view s) {
    if (s == "initial") return DetectionSource::kInitial;
    if (s == "refined") return DetectionSource::kRefined;
    throw ValidationError("unknown detection source '" + std::string(s) + "'");
}

void validate(const Detection& d) {
    if (!(d.score >= 0.0 && d.score <= 1.0))
        throw ValidationError("detection score must lie in [0, 1], got " + std::to_string(d.score));
    if (d.class_id < 0) throw ValidationError("detection class_id must be >= 0");
}

std::vector<std::size_t> nms_indices(const std::vector<Detection>& dets, const NmsOptions& opts) {
    if (!(opts.iou_threshold > 0.0 && opts.iou_threshold < 1.0))
        throw ValidationError("nms iou_threshold must lie in (0, 1)");
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        return dets[a].class_id < dets[b].class_id;
    });

    std::vector<std::size_t> kept;
    for (std::size_t idx : order) {
        const Detection& cand = dets[idx];
        bool keep = true;
        for (std::size_t k : kept) {
            if (opts.class_aware && dets[k].class_id != cand.class_id) continue;
            if (iou(dets[k].box, cand.box) >= opts.iou_threshold) {
                keep = false;
                break;
            }
        }
        if (keep) kept.push_back(idx);
    }
    return kept;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, const NmsOptions& opts) {
    std::vector<Detection> out;
    for (std::size_t i : nms_indices(dets, opts)) out.push_back(dets[i]);
    return out;
}

ConfidenceSplit split_by_confidence(const std::vector<Detection>& dets, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("confidence threshold must lie in [0, 1]");
    ConfidenceSplit s;
    for (const auto& d : dets) (d.score >= tau ? s.high : s.low).push_back(d);
    return s;
}

}  // namespace uavdet
