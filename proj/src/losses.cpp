#include "uavdet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "uavdet/error.hpp"

namespace uavdet {

void validate(const NwdConfig& cfg) {
    if (!(cfg.c_norm > 0.0) || !std::isfinite(cfg.c_norm))
        throw ValidationError("nwd normalization constant must be positive, got " + std::to_string(cfg.c_norm));
}

void validate(const LossConfig& cfg) {
    if (!(cfg.lambda_nwd >= 0.0 && cfg.lambda_nwd <= 1.0))
        throw ValidationError("lambda_nwd must lie in [0, 1], got " + std::to_string(cfg.lambda_nwd));
    validate(cfg.nwd);
}

double wasserstein2_sq(const GaussianBox& ga, const GaussianBox& gb) noexcept {
    const double dx = ga.mean[0] - gb.mean[0];
    const double dy = ga.mean[1] - gb.mean[1];
    const double sx = std::sqrt(ga.var_x) - std::sqrt(gb.var_x);
    const double sy = std::sqrt(ga.var_y) - std::sqrt(gb.var_y);
    return dx * dx + dy * dy + sx * sx + sy * sy;
}

double nwd(const Box& a, const Box& b, const NwdConfig& cfg) {
    validate(cfg);
    return std::exp(-std::sqrt(wasserstein2_sq(to_gaussian(a), to_gaussian(b))) / cfg.c_norm);
}

namespace {

double center_dist_sq(const Box& a, const Box& b) {
    const double dx = a.cx() - b.cx();
    const double dy = a.cy() - b.cy();
    return dx * dx + dy * dy;
}

double wiou_normalizer(const Box& pred, const Box& gt) {
    const Box enc = enclosing_box(pred, gt);
    return enc.w() * enc.w() + enc.h() * enc.h();
}

double combine(double l_wiou, double l_nwd, double lambda) {
    return (1.0 - lambda) * l_wiou + lambda * l_nwd;
}

// d(IoU)/d(cx, cy, w, h) of pred.
BoxGradient iou_gradient(const Box& p, const Box& g) {
    const double iw = std::min(p.x1(), g.x1()) - std::max(p.x0(), g.x0());
    const double ih = std::min(p.y1(), g.y1()) - std::max(p.y0(), g.y0());
    const double area_p = p.area();
    const double area_g = g.area();

    BoxGradient d_inter{0.0, 0.0, 0.0, 0.0};
    double inter = 0.0;
    if (iw > 0.0 && ih > 0.0) {
        inter = iw * ih;
        // Pred's edge is the active bound on ties.
        const double right = p.x1() <= g.x1() ? 1.0 : 0.0;
        const double left = p.x0() >= g.x0() ? 1.0 : 0.0;
        const double bottom = p.y1() <= g.y1() ? 1.0 : 0.0;
        const double top = p.y0() >= g.y0() ? 1.0 : 0.0;
        d_inter[0] = (right - left) * ih;
        d_inter[1] = (bottom - top) * iw;
        d_inter[2] = 0.5 * (right + left) * ih;
        d_inter[3] = 0.5 * (bottom + top) * iw;
    }
    const BoxGradient d_area{0.0, 0.0, p.h(), p.w()};
    const double uni = area_p + area_g - inter;

    BoxGradient out{};
    for (int i = 0; i < 4; ++i)
        out[i] = (d_inter[i] * uni - inter * (d_area[i] - d_inter[i])) / (uni * uni);
    return out;
}

// d(wg^2 + hg^2)/d(cx, cy, w, h) of pred.
BoxGradient normalizer_gradient(const Box& p, const Box& g) {
    const Box enc = enclosing_box(p, g);
    const double right = p.x1() >= g.x1() ? 1.0 : 0.0;
    const double left = p.x0() <= g.x0() ? 1.0 : 0.0;
    const double bottom = p.y1() >= g.y1() ? 1.0 : 0.0;
    const double top = p.y0() <= g.y0() ? 1.0 : 0.0;
    return {2.0 * enc.w() * (right - left), 2.0 * enc.h() * (bottom - top),
            2.0 * enc.w() * 0.5 * (right + left), 2.0 * enc.h() * 0.5 * (bottom + top)};
}

BoxGradient nwd_loss_gradient(const Box& p, const Box& g, const NwdConfig& cfg) {
    const double dcx = p.cx() - g.cx();
    const double dcy = p.cy() - g.cy();
    const double dw = 0.5 * (p.w() - g.w());
    const double dh = 0.5 * (p.h() - g.h());
    const double dist = std::sqrt(dcx * dcx + dcy * dcy + dw * dw + dh * dh);
    if (dist == 0.0) return {0.0, 0.0, 0.0, 0.0};
    // d/dp [1 - exp(-dist / C)] = exp(-dist / C) / C * d(dist)/dp
    const double outer = std::exp(-dist / cfg.c_norm) / cfg.c_norm / dist;
    return {outer * dcx, outer * dcy, outer * 0.5 * dw, outer * 0.5 * dh};
}

}  // namespace

std::pair<double, WiouTerms> wiou_loss(const Box& pred, const Box& gt) {
    const Box enc = enclosing_box(pred, gt);
    WiouTerms t{};
    t.l_iou = 1.0 - iou(pred, gt);
    t.wg = enc.w();
    t.hg = enc.h();
    t.center_dist_sq = center_dist_sq(pred, gt);
    t.r_wiou = std::exp(t.center_dist_sq / (t.wg * t.wg + t.hg * t.hg));
    return {t.r_wiou * t.l_iou, t};
}

double combined_loss(const Box& pred, const Box& gt, const LossConfig& cfg) {
    return combined_loss_fixed_normalizer(pred, gt, cfg, wiou_normalizer(pred, gt));
}

double combined_loss_fixed_normalizer(const Box& pred, const Box& gt, const LossConfig& cfg,
                                      double normalizer) {
    validate(cfg);
    const double l_wiou = std::exp(center_dist_sq(pred, gt) / normalizer) * (1.0 - iou(pred, gt));
    const double l_nwd = 1.0 - nwd(pred, gt, cfg.nwd);
    return combine(l_wiou, l_nwd, cfg.lambda_nwd);
}

double mean_combined_loss(std::span<const Box> preds, std::span<const Box> gts, const LossConfig& cfg) {
    if (preds.size() != gts.size()) throw ValidationError("mean_combined_loss: pred/gt count mismatch");
    if (preds.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) sum += combined_loss(preds[i], gts[i], cfg);
    return sum / static_cast<double>(preds.size());
}

BoxGradient loss_gradient(const Box& pred, const Box& gt, const LossConfig& cfg, WiouGradient mode) {
    validate(cfg);
    const double norm = wiou_normalizer(pred, gt);
    const double dist_sq = center_dist_sq(pred, gt);
    const double r = std::exp(dist_sq / norm);
    const double l_iou = 1.0 - iou(pred, gt);

    const BoxGradient d_dist{2.0 * (pred.cx() - gt.cx()), 2.0 * (pred.cy() - gt.cy()), 0.0, 0.0};
    const BoxGradient d_iou = iou_gradient(pred, gt);
    BoxGradient d_norm{0.0, 0.0, 0.0, 0.0};
    if (mode == WiouGradient::kFull) d_norm = normalizer_gradient(pred, gt);
    const BoxGradient d_nwd = nwd_loss_gradient(pred, gt, cfg.nwd);

    BoxGradient out{};
    for (int i = 0; i < 4; ++i) {
        const double d_r = r * (d_dist[i] / norm - dist_sq * d_norm[i] / (norm * norm));
        const double d_wiou = d_r * l_iou - r * d_iou[i];
        out[i] = combine(d_wiou, d_nwd[i], cfg.lambda_nwd);
    }
    return out;
}

std::vector<BoxGradient> mean_loss_gradient(std::span<const Box> preds, std::span<const Box> gts,
                                            const LossConfig& cfg) {
    if (preds.size() != gts.size()) throw ValidationError("mean_loss_gradient: pred/gt count mismatch");
    std::vector<BoxGradient> out;
    out.reserve(preds.size());
    const double inv_n = preds.empty() ? 0.0 : 1.0 / static_cast<double>(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        BoxGradient g = loss_gradient(preds[i], gts[i], cfg);
        for (double& v : g) v *= inv_n;
        out.push_back(g);
    }
    return out;
}

BoxGradient numeric_gradient(const Box& pred, const Box& gt, const LossConfig& cfg, WiouGradient mode,
                             double rel_step) {
    const double scale = std::max({pred.w(), pred.h(), gt.w(), gt.h()});
    const double step = rel_step * scale;
    const double frozen = wiou_normalizer(pred, gt);
    const auto params = pred.center_size();

    auto eval = [&](const std::array<double, 4>& p) {
        const Box b = Box::from_center(p[0], p[1], p[2], p[3]);
        return mode == WiouGradient::kFull ? combined_loss(b, gt, cfg)
                                           : combined_loss_fixed_normalizer(b, gt, cfg, frozen);
    };

    BoxGradient out{};
    for (int i = 0; i < 4; ++i) {
        auto plus = params;
        auto minus = params;
        plus[i] += step;
        minus[i] -= step;
        out[i] = (eval(plus) - eval(minus)) / (plus[i] - minus[i]);
    }
    return out;
}

double gradient_relative_error(double analytic, double numeric, double abs_floor) noexcept {
    const double diff = std::abs(analytic - numeric);
    return diff / std::max({std::abs(analytic), std::abs(numeric), abs_floor});
}

namespace {

// Distance from every pred edge to every gt edge on the same axis. The loss is
// only piecewise smooth; these are the breakpoints.
double min_kink_distance(const Box& p, const Box& g) {
    const double xs[] = {p.x0() - g.x0(), p.x1() - g.x1(), p.x1() - g.x0(), p.x0() - g.x1()};
    const double ys[] = {p.y0() - g.y0(), p.y1() - g.y1(), p.y1() - g.y0(), p.y0() - g.y1()};
    double m = std::abs(xs[0]);
    for (double v : xs) m = std::min(m, std::abs(v));
    for (double v : ys) m = std::min(m, std::abs(v));
    return m;
}

}  // namespace

GradCheckReport run_gradcheck(std::uint64_t seed, int n_samples, const LossConfig& cfg, WiouGradient mode) {
    if (n_samples < 1) throw ValidationError("gradcheck needs at least one sample");
    validate(cfg);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    GradCheckReport rep{};
    rep.seed = seed;
    rep.n_samples = n_samples;
    double sum = 0.0;
    int accepted = 0;
    while (accepted < n_samples) {
        const double gw = uniform(2.0, 60.0);
        const double gh = uniform(2.0, 60.0);
        const Box gt = Box::from_center(uniform(0.0, 200.0), uniform(0.0, 200.0), gw, gh);
        const Box pred = Box::from_center(gt.cx() + uniform(-1.2, 1.2) * gw, gt.cy() + uniform(-1.2, 1.2) * gh,
                                          gw * std::exp(uniform(-0.8, 0.8)), gh * std::exp(uniform(-0.8, 0.8)));
        const double step = 1e-5 * std::max({pred.w(), pred.h(), gt.w(), gt.h()});
        if (min_kink_distance(pred, gt) < 1e3 * step) {
            ++rep.n_rejected;
            continue;
        }
        const BoxGradient a = loss_gradient(pred, gt, cfg, mode);
        const BoxGradient n = numeric_gradient(pred, gt, cfg, mode);
        for (int i = 0; i < 4; ++i) {
            const double e = gradient_relative_error(a[i], n[i]);
            rep.max_rel_error = std::max(rep.max_rel_error, e);
            rep.max_rel_error_per_param[i] = std::max(rep.max_rel_error_per_param[i], e);
            sum += e;
            rep.max_abs_error = std::max(rep.max_abs_error, std::abs(a[i] - n[i]));
        }
        ++accepted;
    }
    rep.mean_rel_error = sum / (4.0 * n_samples);
    return rep;
}

}  // namespace uavdet
