#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "uavdet/tensor.hpp"

namespace uavdet {

struct SampleOffset {
    int row;
    int col;
    bool operator==(const SampleOffset&) const = default;
};

// Base sampling grid for n taps: b = floor(sqrt(n)) columns, n / b full rows
// and one partial row holding the remainder, laid out row-major from (0, 0)
// and re-centered by (floor(rows / 2), floor(b / 2)).
std::vector<SampleOffset> initial_coordinates(std::size_t n);

struct LdConvSpec {
    std::size_t n_samples = 1;
    std::size_t c_in = 1;
    std::size_t c_out = 1;
    std::size_t stride = 1;
    WeightArray weights{{1, 1, 1}};  // (c_out, c_in, n_samples)
};

void validate(const LdConvSpec& spec);

// Per output position, one (dx, dy) pixel offset per tap. Channel 2k holds dx
// (columns) and channel 2k + 1 holds dy (rows) of tap k.
class OffsetField {
public:
    OffsetField(std::size_t n_samples, std::size_t height, std::size_t width);
    explicit OffsetField(FeatureMap data);

    std::size_t n_samples() const noexcept { return data_.channels() / 2; }
    std::size_t height() const noexcept { return data_.height(); }
    std::size_t width() const noexcept { return data_.width(); }

    double& dx(std::size_t k, std::size_t y, std::size_t x) { return data_.at(2 * k, y, x); }
    double& dy(std::size_t k, std::size_t y, std::size_t x) { return data_.at(2 * k + 1, y, x); }
    double dx(std::size_t k, std::size_t y, std::size_t x) const { return data_.at(2 * k, y, x); }
    double dy(std::size_t k, std::size_t y, std::size_t x) const { return data_.at(2 * k + 1, y, x); }

    const FeatureMap& as_map() const noexcept { return data_; }

private:
    FeatureMap data_;
};

// Uniform offsets in [-amplitude, amplitude], seeded.
OffsetField random_offsets(std::size_t n_samples, std::size_t height, std::size_t width, double amplitude,
                           std::uint64_t seed);

// Bilinear interpolation of channel c at (x, y); grid points outside the map read as 0.
double bilinear_sample(const FeatureMap& fm, double x, double y, std::size_t c);

// Output grid is ceil(H / stride) x ceil(W / stride).
std::size_t ldconv_output_extent(std::size_t extent, std::size_t stride);

FeatureMap ldconv_forward(const FeatureMap& fm, const LdConvSpec& spec, const OffsetField& offsets);

// Fixture directory: manifest.json {n_samples, stride, c_in, c_out, weights, offsets?}
// with FMAP payloads.
void ldconv_save_spec(const std::filesystem::path& dir, const LdConvSpec& spec, const OffsetField* offsets = nullptr);
LdConvSpec ldconv_load_spec(const std::filesystem::path& dir);
std::optional<OffsetField> ldconv_load_offsets(const std::filesystem::path& dir);

}  // namespace uavdet
