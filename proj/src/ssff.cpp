#include "uavdet/ssff.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include <json.hpp>

#include "uavdet/error.hpp"

namespace uavdet {

using nlohmann::json;

namespace {

std::vector<std::string> collect_problems(const SsffConfig& cfg) {
    std::vector<std::string> problems;
    const std::size_t n = cfg.sigma_schedule.size();
    if (n < 2) problems.push_back("levels.count: at least 2 levels required, got " + std::to_string(n));
    if (cfg.common_channels == 0) problems.push_back("common_channels.positive: must be >= 1");
    for (std::size_t i = 0; i < n; ++i) {
        if (!(cfg.sigma_schedule[i] > 0.0)) problems.push_back("sigma_schedule.positive: entry " + std::to_string(i));
        if (i > 0 && !(cfg.sigma_schedule[i] > cfg.sigma_schedule[i - 1]))
            problems.push_back("sigma_schedule.strictly_increasing: entry " + std::to_string(i) + " (" +
                               std::to_string(cfg.sigma_schedule[i]) + ") <= entry " + std::to_string(i - 1));
    }
    if (cfg.norm_weights.size() != n)
        problems.push_back("norm_weights.count: " + std::to_string(cfg.norm_weights.size()) + " weight sets for " +
                           std::to_string(n) + " levels");
    for (std::size_t i = 0; i < cfg.norm_weights.size(); ++i) {
        const auto& w = cfg.norm_weights[i];
        if (w.rank() != 4 || w.dim(2) != 1 || w.dim(3) != 1)
            problems.push_back("norm_weights.shape: level " + std::to_string(i) + " must be (C, C_in, 1, 1)");
        else if (w.dim(0) != cfg.common_channels)
            problems.push_back("norm_weights.channels: level " + std::to_string(i) + " produces " +
                               std::to_string(w.dim(0)) + " channels, common_channels is " +
                               std::to_string(cfg.common_channels));
    }
    const auto& f = cfg.fuse_weights;
    if (f.rank() != 5) {
        problems.push_back("fuse_weights.shape: must be rank 5 (C_out, C, D, k, k)");
    } else {
        if (f.dim(1) != cfg.common_channels)
            problems.push_back("fuse_weights.channels: expects " + std::to_string(f.dim(1)) +
                               " input channels, common_channels is " + std::to_string(cfg.common_channels));
        if (f.dim(2) != n)
            problems.push_back("fuse_weights.depth: depth " + std::to_string(f.dim(2)) + " does not match " +
                               std::to_string(n) + " levels");
        if (f.dim(3) != f.dim(4) || f.dim(3) % 2 == 0)
            problems.push_back("fuse_weights.kernel: spatial kernel must be square with odd size");
    }
    if (!cfg.level_dims.empty()) {
        if (cfg.level_dims.size() != n)
            problems.push_back("level_dims.count: " + std::to_string(cfg.level_dims.size()) + " entries for " +
                               std::to_string(n) + " levels");
        for (std::size_t i = 1; i < cfg.level_dims.size(); ++i) {
            const auto [h0, w0] = cfg.level_dims[0];
            const auto [h, w] = cfg.level_dims[i];
            if (h == 0 || w == 0 || h0 % h != 0 || w0 % w != 0 || h0 / h != w0 / w)
                problems.push_back("level_dims.integer_factor: level " + std::to_string(i) +
                                   " does not divide the finest level by one integer factor");
        }
    }
    return problems;
}

std::size_t upsample_factor(const FeatureMap& finest, const FeatureMap& level, std::size_t index) {
    if (finest.height() % level.height() != 0 || finest.width() % level.width() != 0 ||
        finest.height() / level.height() != finest.width() / level.width())
        throw ValidationError("ssff: level " + std::to_string(index) + " (" + std::to_string(level.height()) + "x" +
                              std::to_string(level.width()) + ") is not an integer downscale of the finest level");
    return finest.height() / level.height();
}

std::vector<FeatureMap> preprocess(std::span<const FeatureMap> levels, std::span<const double> sigmas,
                                   std::span<const WeightArray> norm_weights) {
    if (levels.size() != sigmas.size() || levels.size() != norm_weights.size())
        throw ValidationError("ssff: got " + std::to_string(levels.size()) + " levels for " +
                              std::to_string(sigmas.size()) + " sigmas and " + std::to_string(norm_weights.size()) +
                              " normalization weight sets");
    if (levels.empty()) throw ValidationError("ssff: no input levels");
    std::vector<FeatureMap> out;
    out.reserve(levels.size());
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (norm_weights[i].rank() != 4 || norm_weights[i].dim(1) != levels[i].channels())
            throw ValidationError("ssff: level " + std::to_string(i) + " has " + std::to_string(levels[i].channels()) +
                                  " channels, normalization weights do not match");
        const std::size_t factor = upsample_factor(levels.front(), levels[i], i);
        const FeatureMap normalized = conv2d(levels[i], norm_weights[i]);
        const FeatureMap upsampled = upsample_nearest(normalized, factor);
        out.push_back(gaussian_smooth(upsampled, gaussian_kernel(sigmas[i])));
    }
    return out;
}

}  // namespace

void validate(const SsffConfig& cfg) {
    auto problems = collect_problems(cfg);
    if (!problems.empty()) throw ConfigError(std::move(problems));
}

SsffConfig default_ssff_config(std::span<const std::size_t> level_channels, std::size_t common_channels,
                               std::size_t out_channels, std::uint64_t seed, std::size_t fuse_kernel) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    SsffConfig cfg;
    cfg.common_channels = common_channels;
    const std::size_t n = level_channels.size();
    // 0.5, 1, 2, ... doubling per level.
    for (std::size_t i = 0; i < n; ++i) cfg.sigma_schedule.push_back(0.5 * std::pow(2.0, static_cast<double>(i)));
    for (std::size_t i = 0; i < n; ++i) {
        WeightArray w({common_channels, level_channels[i], 1, 1});
        const double scale = 1.0 / std::sqrt(static_cast<double>(level_channels[i]));
        for (double& v : w.data()) v = scale * normal(rng);
        cfg.norm_weights.push_back(std::move(w));
    }
    WeightArray f({out_channels, common_channels, n, fuse_kernel, fuse_kernel});
    const double fan_in = static_cast<double>(common_channels * n * fuse_kernel * fuse_kernel);
    for (double& v : f.data()) v = normal(rng) / std::sqrt(fan_in);
    cfg.fuse_weights = std::move(f);
    return cfg;
}

FeatureVolume ssff_scale_volume(std::span<const FeatureMap> levels, const SsffConfig& cfg) {
    validate(cfg);
    if (levels.size() != cfg.levels())
        throw ValidationError("ssff: config declares " + std::to_string(cfg.levels()) + " levels, got " +
                              std::to_string(levels.size()));
    if (!cfg.level_dims.empty())
        for (std::size_t i = 0; i < levels.size(); ++i)
            if (levels[i].height() != cfg.level_dims[i].first || levels[i].width() != cfg.level_dims[i].second)
                throw ValidationError("ssff: level " + std::to_string(i) + " dims differ from the declared dims");
    const auto smoothed = preprocess(levels, cfg.sigma_schedule, cfg.norm_weights);
    return FeatureVolume::stack(smoothed);
}

FeatureMap ssff_forward(std::span<const FeatureMap> levels, const SsffConfig& cfg) {
    return conv3d_scale(ssff_scale_volume(levels, cfg), cfg.fuse_weights);
}

FeatureMap ssff_fuse_levels(std::span<const FeatureMap> levels, std::span<const double> sigmas,
                            std::span<const WeightArray> norm_weights, const WeightArray& fuse_weights) {
    const auto smoothed = preprocess(levels, sigmas, norm_weights);
    return conv3d_scale(FeatureVolume::stack(smoothed), fuse_weights);
}

void ssff_save_config(const std::filesystem::path& dir, const SsffConfig& cfg) {
    validate(cfg);
    std::filesystem::create_directories(dir);
    json m;
    m["levels"] = cfg.levels();
    m["common_channels"] = cfg.common_channels;
    m["sigma_schedule"] = cfg.sigma_schedule;
    json norms = json::array();
    json level_channels = json::array();
    for (std::size_t i = 0; i < cfg.norm_weights.size(); ++i) {
        const std::string name = "norm_" + std::to_string(i) + ".fmap";
        write_weights(dir / name, cfg.norm_weights[i]);
        norms.push_back(name);
        level_channels.push_back(cfg.norm_weights[i].dim(1));
    }
    m["level_channels"] = level_channels;
    m["norm_weights"] = norms;
    m["fuse_weights"] = "fuse.fmap";
    m["fuse_shape"] = cfg.fuse_weights.shape();
    write_weights(dir / "fuse.fmap", cfg.fuse_weights);
    if (!cfg.level_dims.empty()) {
        json dims = json::array();
        for (const auto& [h, w] : cfg.level_dims) dims.push_back({h, w});
        m["level_dims"] = dims;
    }
    std::ofstream os(dir / "manifest.json");
    os << m.dump(2) << "\n";
    if (!os) throw ValidationError("failed writing " + (dir / "manifest.json").string());
}

SsffConfig ssff_load_config(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream is(manifest_path);
    if (!is) throw ValidationError("cannot open " + manifest_path.string());
    json m;
    try {
        m = json::parse(is);
    } catch (const json::exception& e) {
        throw ValidationError(manifest_path.string() + ": " + e.what());
    }

    std::vector<std::string> problems;
    SsffConfig cfg;
    try {
        const std::size_t levels = m.at("levels").get<std::size_t>();
        cfg.common_channels = m.at("common_channels").get<std::size_t>();
        cfg.sigma_schedule = m.at("sigma_schedule").get<std::vector<double>>();
        const auto level_channels = m.at("level_channels").get<std::vector<std::size_t>>();
        const auto norm_files = m.at("norm_weights").get<std::vector<std::string>>();
        const auto fuse_shape = m.at("fuse_shape").get<std::vector<std::size_t>>();
        if (cfg.sigma_schedule.size() != levels)
            problems.push_back("sigma_schedule.count: " + std::to_string(cfg.sigma_schedule.size()) +
                               " entries for " + std::to_string(levels) + " declared levels");
        if (level_channels.size() != levels || norm_files.size() != levels)
            problems.push_back("norm_weights.count: level_channels/norm_weights must list " +
                               std::to_string(levels) + " entries");
        if (fuse_shape.size() != 5) {
            problems.push_back("fuse_weights.shape: fuse_shape must have 5 entries");
        } else if (fuse_shape[2] != levels) {
            problems.push_back("fuse_weights.depth: depth " + std::to_string(fuse_shape[2]) +
                               " does not match declared levels " + std::to_string(levels));
        }
        if (m.contains("level_dims"))
            for (const auto& d : m["level_dims"]) cfg.level_dims.emplace_back(d.at(0).get<std::size_t>(), d.at(1).get<std::size_t>());
        if (!problems.empty()) throw ConfigError(problems);

        for (std::size_t i = 0; i < levels; ++i)
            cfg.norm_weights.push_back(read_weights(dir / norm_files[i], {cfg.common_channels, level_channels[i], 1, 1}));
        cfg.fuse_weights = read_weights(dir / m.at("fuse_weights").get<std::string>(), fuse_shape);
    } catch (const json::exception& e) {
        throw ValidationError(manifest_path.string() + ": malformed manifest: " + e.what());
    }
    validate(cfg);
    return cfg;
}

}  // namespace uavdet
