#include "uavdet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <utility>

#include "uavdet/error.hpp"

namespace uavdet {

std::string_view to_string(ApInterpolation m) noexcept {
    return m == ApInterpolation::kCoco101 ? "coco101" : "all_point";
}

std::vector<double> coco_iou_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
    return t;
}

std::vector<bool> match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthObject>& gts,
                                   double iou_thr) {
    using Key = std::pair<std::string, int>;
    std::map<Key, std::vector<std::size_t>> gt_groups;
    for (std::size_t i = 0; i < gts.size(); ++i) gt_groups[{gts[i].image_id, gts[i].class_id}].push_back(i);

    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

    std::vector<bool> taken(gts.size(), false);
    std::vector<bool> tp(dets.size(), false);
    for (std::size_t di : order) {
        const auto it = gt_groups.find({dets[di].image_id, dets[di].class_id});
        if (it == gt_groups.end()) continue;
        double best = -1.0;
        std::size_t best_gt = 0;
        for (std::size_t gi : it->second) {
            if (taken[gi]) continue;
            const double v = iou(dets[di].box, gts[gi].box);
            if (v >= iou_thr && v > best) {
                best = v;
                best_gt = gi;
            }
        }
        if (best >= 0.0) {
            taken[best_gt] = true;
            tp[di] = true;
        }
    }
    return tp;
}

std::optional<double> average_precision(std::vector<ScoredFlag> flags, std::size_t n_gt, ApInterpolation mode) {
    if (n_gt == 0) return flags.empty() ? std::nullopt : std::optional<double>(0.0);
    if (flags.empty()) return 0.0;
    std::stable_sort(flags.begin(), flags.end(),
                     [](const ScoredFlag& a, const ScoredFlag& b) { return a.score > b.score; });

    const std::size_t n = flags.size();
    std::vector<std::size_t> cum_tp(n);
    std::vector<double> precision(n);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        tp += flags[i].tp ? 1 : 0;
        cum_tp[i] = tp;
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    }
    for (std::size_t i = n - 1; i-- > 0;) precision[i] = std::max(precision[i], precision[i + 1]);

    if (mode == ApInterpolation::kAllPoint) {
        double ap = 0.0;
        std::size_t prev = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (cum_tp[i] != prev) ap += static_cast<double>(cum_tp[i] - prev) / n_gt * precision[i];
            prev = cum_tp[i];
        }
        return ap;
    }

    // Recall threshold r/100 is reached at the first rank with 100*tp >= r*n_gt.
    double sum = 0.0;
    std::size_t i = 0;
    for (std::size_t r = 0; r <= 100; ++r) {
        while (i < n && 100 * cum_tp[i] < r * n_gt) ++i;
        if (i == n) break;
        sum += precision[i];
    }
    return sum / 101.0;
}

EvalResult evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruthObject>& gts,
                    const EvalOptions& opts) {
    EvalResult res;
    res.thresholds = opts.iou_thresholds.empty() ? coco_iou_thresholds() : opts.iou_thresholds;
    for (double t : res.thresholds)
        if (!(t > 0.0 && t <= 1.0)) throw ValidationError("IoU thresholds must lie in (0, 1]");
    if (!(opts.score_cut >= 0.0 && opts.score_cut <= 1.0)) throw ValidationError("score_cut must lie in [0, 1]");
    res.score_cut = opts.score_cut;
    res.interpolation = opts.interpolation;
    res.n_gt = gts.size();

    std::set<std::string> known(opts.image_ids.begin(), opts.image_ids.end());
    if (opts.image_ids.empty())
        for (const auto& g : gts) known.insert(g.image_id);
    std::set<std::string> unknown;
    for (const auto& d : dets) {
        validate(d);
        if (!known.count(d.image_id)) unknown.insert(d.image_id);
    }
    if (!unknown.empty()) {
        std::string msg = "detections reference unknown images:";
        for (const auto& id : unknown) msg += " " + id;
        throw ValidationError(msg);
    }

    std::map<int, std::size_t> gt_per_class;
    for (const auto& g : gts) ++gt_per_class[g.class_id];
    std::set<int> classes;
    for (const auto& [c, _] : gt_per_class) classes.insert(c);
    for (const auto& d : dets) classes.insert(d.class_id);

    auto class_aps = [&](double thr) {
        const auto tp = match_detections(dets, gts, thr);
        std::map<int, std::vector<ScoredFlag>> flags;
        for (std::size_t i = 0; i < dets.size(); ++i) flags[dets[i].class_id].push_back({dets[i].score, tp[i]});
        std::map<int, std::optional<double>> out;
        for (int c : classes) {
            const auto g = gt_per_class.find(c);
            out[c] = average_precision(std::move(flags[c]), g == gt_per_class.end() ? 0 : g->second,
                                       opts.interpolation);
        }
        return out;
    };

    for (int c : classes) res.per_class_ap[c].reserve(res.thresholds.size());
    for (double thr : res.thresholds)
        for (auto& [c, ap] : class_aps(thr)) res.per_class_ap[c].push_back(ap);

    auto mean_defined = [](const std::map<int, std::optional<double>>& aps) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& [_, ap] : aps)
            if (ap) {
                sum += *ap;
                ++n;
            }
        return n ? sum / n : 0.0;
    };
    res.map50 = mean_defined(class_aps(0.5));

    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [_, aps] : res.per_class_ap) {
        double s = 0.0;
        bool defined = true;
        for (const auto& ap : aps) {
            if (!ap) defined = false;
            else s += *ap;
        }
        if (defined && !aps.empty()) {
            sum += s / aps.size();
            ++n;
        }
    }
    res.map50_95 = n ? sum / n : 0.0;

    std::vector<Detection> kept;
    for (const auto& d : dets)
        if (d.score >= opts.score_cut) kept.push_back(d);
    const auto tp = match_detections(kept, gts, 0.5);
    res.tp = static_cast<std::size_t>(std::count(tp.begin(), tp.end(), true));
    res.fp = kept.size() - res.tp;
    res.fn = gts.size() - res.tp;
    res.precision = kept.empty() ? 0.0 : static_cast<double>(res.tp) / kept.size();
    res.recall = gts.empty() ? 0.0 : static_cast<double>(res.tp) / gts.size();
    return res;
}

}  // namespace uavdet
