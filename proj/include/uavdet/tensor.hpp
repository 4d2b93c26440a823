#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace uavdet {

// Dense row-major (channels x height x width) array.
class FeatureMap {
public:
    FeatureMap(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0);
    FeatureMap(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> data);

    std::size_t channels() const noexcept { return channels_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& at(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * height_ + y) * width_ + x]; }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return data_[(c * height_ + y) * width_ + x]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool same_shape(const FeatureMap& o) const noexcept {
        return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
    }
    bool operator==(const FeatureMap&) const = default;

private:
    std::size_t channels_, height_, width_;
    std::vector<double> data_;
};

// Dense row-major (channels x depth x height x width) array; depth indexes scale levels.
class FeatureVolume {
public:
    FeatureVolume(std::size_t channels, std::size_t depth, std::size_t height, std::size_t width);

    // Stacks equally shaped maps along a new depth axis, in the given order.
    static FeatureVolume stack(std::span<const FeatureMap> levels);

    std::size_t channels() const noexcept { return channels_; }
    std::size_t depth() const noexcept { return depth_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }

    double& at(std::size_t c, std::size_t d, std::size_t y, std::size_t x) {
        return data_[((c * depth_ + d) * height_ + y) * width_ + x];
    }
    double at(std::size_t c, std::size_t d, std::size_t y, std::size_t x) const {
        return data_[((c * depth_ + d) * height_ + y) * width_ + x];
    }

    FeatureMap slice(std::size_t d) const;

private:
    std::size_t channels_, depth_, height_, width_;
    std::vector<double> data_;
};

// Generic row-major weight array (conv2d: rank 4, conv3d: rank 5).
class WeightArray {
public:
    WeightArray(std::vector<std::size_t> shape, double fill = 0.0);
    WeightArray(std::vector<std::size_t> shape, std::vector<double> data);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    // Row-major element access; the index count must equal rank().
    double& operator()(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
    double operator()(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

    bool operator==(const WeightArray&) const = default;

private:
    std::size_t offset(std::initializer_list<std::size_t> idx) const;

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

struct GaussianKernel {
    double sigma;
    std::size_t radius;
    std::vector<double> weights;  // (2r+1) x (2r+1), row-major, sums to 1

    std::size_t side() const noexcept { return 2 * radius + 1; }
    double at(int dy, int dx) const {
        return weights[static_cast<std::size_t>(dy + static_cast<int>(radius)) * side() +
                       static_cast<std::size_t>(dx + static_cast<int>(radius))];
    }
};

// Default truncation radius, ceil(3 sigma).
std::size_t default_kernel_radius(double sigma);

GaussianKernel gaussian_kernel(double sigma, std::size_t radius);
inline GaussianKernel gaussian_kernel(double sigma) { return gaussian_kernel(sigma, default_kernel_radius(sigma)); }

// Normalized 1D profile whose outer product is gaussian_kernel(sigma, radius).
std::vector<double> gaussian_profile(double sigma, std::size_t radius);

// Per-channel 2D convolution with edge-replicated borders; output has the input's shape.
FeatureMap gaussian_smooth(const FeatureMap& fm, const GaussianKernel& k);

// Same operator computed as a horizontal then a vertical 1D pass.
FeatureMap gaussian_smooth_separable(const FeatureMap& fm, double sigma, std::size_t radius);

FeatureMap upsample_nearest(const FeatureMap& fm, std::size_t factor);

// Mean over non-overlapping factor x factor blocks; dims must divide.
FeatureMap average_pool(const FeatureMap& fm, std::size_t factor);

// Cross-correlation with zero padding. weights: (C_out, C_in, k, k).
FeatureMap conv2d(const FeatureMap& fm, const WeightArray& weights, std::size_t stride = 1, std::size_t padding = 0);

// Contracts the depth axis completely. weights: (C_out, C_in, D, k, k) with odd k;
// spatial padding (k - 1) / 2, no depth padding.
FeatureMap conv3d_scale(const FeatureVolume& vol, const WeightArray& weights);

// ----------------------------------------------------------------------------
// FMAP files: "FMAP", u32 C, H, W (little endian), then C*H*W little-endian
// float32 values, row-major.

void write_fmap(const std::filesystem::path& path, const FeatureMap& fm);
FeatureMap read_fmap(const std::filesystem::path& path);

// Weight arrays are stored flattened as (dim0, dim1, product of the rest);
// the caller supplies the full shape.
void write_weights(const std::filesystem::path& path, const WeightArray& w);
WeightArray read_weights(const std::filesystem::path& path, std::vector<std::size_t> shape);

}  // namespace uavdet
