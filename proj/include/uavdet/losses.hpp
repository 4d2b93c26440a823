#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "uavdet/geometry.hpp"

namespace uavdet {

struct NwdConfig {
    double c_norm = 12.8;  // pixels; roughly the mean absolute object size
};

struct LossConfig {
    double lambda_nwd = 0.5;  // weight of (1 - NWD); WIoU gets 1 - lambda_nwd
    NwdConfig nwd{};
};

void validate(const NwdConfig& cfg);
void validate(const LossConfig& cfg);

struct WiouTerms {
    double l_iou;           // 1 - IoU
    double r_wiou;          // exp(center_dist_sq / (wg^2 + hg^2)), >= 1
    double wg;              // enclosing box width
    double hg;              // enclosing box height
    double center_dist_sq;  // squared distance between centers
};

// Gradient w.r.t. the predicted box parameters (cx, cy, w, h).
using BoxGradient = std::array<double, 4>;

// Closed-form squared 2-Wasserstein distance between diagonal Gaussians.
double wasserstein2_sq(const GaussianBox& ga, const GaussianBox& gb) noexcept;

double nwd(const Box& a, const Box& b, const NwdConfig& cfg);

std::pair<double, WiouTerms> wiou_loss(const Box& pred, const Box& gt);

double combined_loss(const Box& pred, const Box& gt, const LossConfig& cfg);

// Mean of combined_loss over aligned pred/gt spans.
double mean_combined_loss(std::span<const Box> preds, std::span<const Box> gts, const LossConfig& cfg);

// Which parts of the WIoU penalty are differentiated.
enum class WiouGradient {
    // (wg^2 + hg^2) is held constant, the normalizer is detached.
    kFrozenNormalizer,
    // Also differentiates through the enclosing box (diagnostics only).
    kFull,
};

// Analytic gradient of combined_loss. Where an edge of pred coincides with an
// edge of gt, pred's edge is taken as the active intersection bound, so the
// derivative is the one obtained by moving that edge inward.
BoxGradient loss_gradient(const Box& pred, const Box& gt, const LossConfig& cfg,
                          WiouGradient mode = WiouGradient::kFrozenNormalizer);

// Batch gradient of mean_combined_loss, one entry per pred.
std::vector<BoxGradient> mean_loss_gradient(std::span<const Box> preds, std::span<const Box> gts,
                                            const LossConfig& cfg);

// ----------------------------------------------------------------------------
// Finite-difference verification.

// combined_loss evaluated with an externally supplied WIoU normalizer
// (wg^2 + hg^2). Passing the normalizer of the unperturbed pair gives the
// frozen-normalizer loss whose derivative loss_gradient reports.
double combined_loss_fixed_normalizer(const Box& pred, const Box& gt, const LossConfig& cfg,
                                      double normalizer);

// Central differences over (cx, cy, w, h). Each parameter is stepped by
// rel_step * scale, where scale is the larger of the two box sizes.
BoxGradient numeric_gradient(const Box& pred, const Box& gt, const LossConfig& cfg,
                             WiouGradient mode = WiouGradient::kFrozenNormalizer, double rel_step = 1e-5);

// |a - n| / max(|a|, |n|, abs_floor).
double gradient_relative_error(double analytic, double numeric, double abs_floor = 1e-8) noexcept;

struct GradCheckReport {
    std::uint64_t seed;
    int n_samples;
    int n_rejected;          // draws discarded as degenerate (edges too close to a kink)
    double max_rel_error;
    double mean_rel_error;   // over all components of all samples
    double max_abs_error;
    std::array<double, 4> max_rel_error_per_param;
};

// Draws n_samples non-degenerate random (pred, gt) pairs and compares
// loss_gradient against numeric_gradient.
GradCheckReport run_gradcheck(std::uint64_t seed, int n_samples, const LossConfig& cfg,
                              WiouGradient mode = WiouGradient::kFrozenNormalizer);

}  // namespace uavdet
