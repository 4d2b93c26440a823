#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "uavdet/tensor.hpp"

namespace uavdet {

// Scale-sequence feature fusion. Levels are ordered finest first.
struct SsffConfig {
    std::size_t common_channels = 0;
    std::vector<double> sigma_schedule;      // one per level, strictly increasing
    std::vector<WeightArray> norm_weights;   // per level: (common_channels, C_in_i, 1, 1)
    WeightArray fuse_weights{{1, 1, 1, 1, 1}};  // (C_out, common_channels, levels, k, k)
    // Expected (height, width) per level; empty means "not declared".
    std::vector<std::pair<std::size_t, std::size_t>> level_dims;

    std::size_t levels() const noexcept { return sigma_schedule.size(); }
    std::size_t out_channels() const { return fuse_weights.dim(0); }
};

// Throws ConfigError listing every violated invariant.
void validate(const SsffConfig& cfg);

SsffConfig default_ssff_config(std::span<const std::size_t> level_channels, std::size_t common_channels,
                               std::size_t out_channels, std::uint64_t seed, std::size_t fuse_kernel = 3);

// Normalize, upsample and smooth every level, then stack finest to coarsest.
FeatureVolume ssff_scale_volume(std::span<const FeatureMap> levels, const SsffConfig& cfg);

FeatureMap ssff_forward(std::span<const FeatureMap> levels, const SsffConfig& cfg);

// The same pipeline without the ordering checks on the schedule; per-level
// parameters are taken positionally. Used to permute levels consistently.
FeatureMap ssff_fuse_levels(std::span<const FeatureMap> levels, std::span<const double> sigmas,
                            std::span<const WeightArray> norm_weights, const WeightArray& fuse_weights);

// Config directory: manifest.json plus FMAP weight files.
void ssff_save_config(const std::filesystem::path& dir, const SsffConfig& cfg);
SsffConfig ssff_load_config(const std::filesystem::path& dir);

}  // namespace uavdet
