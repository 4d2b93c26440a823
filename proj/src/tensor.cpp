#include "uavdet/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>

#include "uavdet/error.hpp"

namespace uavdet {

namespace {

void check_dims(std::size_t c, std::size_t h, std::size_t w) {
    if (c == 0 || h == 0 || w == 0) throw ValidationError("feature map dimensions must be >= 1");
}

void check_finite(std::span<const double> data) {
    for (double v : data)
        if (!std::isfinite(v)) throw ValidationError("feature map contains non-finite values");
}

std::string shape_str(std::size_t c, std::size_t h, std::size_t w) {
    return "(" + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
}

}  // namespace

FeatureMap::FeatureMap(std::size_t channels, std::size_t height, std::size_t width, double fill)
    : channels_(channels), height_(height), width_(width) {
    check_dims(channels, height, width);
    if (!std::isfinite(fill)) throw ValidationError("feature map fill value must be finite");
    data_.assign(channels * height * width, fill);
}

FeatureMap::FeatureMap(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> data)
    : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
    check_dims(channels, height, width);
    if (data_.size() != channels * height * width)
        throw ValidationError("feature map data length " + std::to_string(data_.size()) + " does not match shape " +
                              shape_str(channels, height, width));
    check_finite(data_);
}

FeatureVolume::FeatureVolume(std::size_t channels, std::size_t depth, std::size_t height, std::size_t width)
    : channels_(channels), depth_(depth), height_(height), width_(width) {
    if (channels == 0 || depth == 0 || height == 0 || width == 0)
        throw ValidationError("feature volume dimensions must be >= 1");
    data_.assign(channels * depth * height * width, 0.0);
}

FeatureVolume FeatureVolume::stack(std::span<const FeatureMap> levels) {
    if (levels.empty()) throw ValidationError("cannot stack zero feature maps");
    const FeatureMap& first = levels.front();
    FeatureVolume vol(first.channels(), levels.size(), first.height(), first.width());
    for (std::size_t d = 0; d < levels.size(); ++d) {
        if (!levels[d].same_shape(first)) throw ValidationError("stacked feature maps must share one shape");
        for (std::size_t c = 0; c < first.channels(); ++c)
            for (std::size_t y = 0; y < first.height(); ++y)
                for (std::size_t x = 0; x < first.width(); ++x) vol.at(c, d, y, x) = levels[d].at(c, y, x);
    }
    return vol;
}

FeatureMap FeatureVolume::slice(std::size_t d) const {
    if (d >= depth_) throw ValidationError("depth slice out of range");
    FeatureMap out(channels_, height_, width_);
    for (std::size_t c = 0; c < channels_; ++c)
        for (std::size_t y = 0; y < height_; ++y)
            for (std::size_t x = 0; x < width_; ++x) out.at(c, y, x) = at(c, d, y, x);
    return out;
}

WeightArray::WeightArray(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
    if (shape_.empty()) throw ValidationError("weight array needs at least one dimension");
    for (auto d : shape_)
        if (d == 0) throw ValidationError("weight array dimensions must be >= 1");
    data_.assign(std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>()), fill);
}

WeightArray::WeightArray(std::vector<std::size_t> shape, std::vector<double> data) : WeightArray(std::move(shape)) {
    if (data.size() != data_.size())
        throw ValidationError("weight array data length " + std::to_string(data.size()) + " does not match shape (" +
                              std::to_string(data_.size()) + " elements)");
    check_finite(data);
    data_ = std::move(data);
}

std::size_t WeightArray::offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw ValidationError("weight index rank mismatch");
    std::size_t off = 0;
    std::size_t i = 0;
    for (std::size_t v : idx) off = off * shape_[i++] + v;
    return off;
}

std::size_t default_kernel_radius(double sigma) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(3.0 * sigma)));
}

std::vector<double> gaussian_profile(double sigma, std::size_t radius) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("gaussian sigma must be positive");
    if (radius < 1) throw ValidationError("gaussian kernel radius must be >= 1");
    const int r = static_cast<int>(radius);
    std::vector<double> p(2 * radius + 1);
    for (int u = -r; u <= r; ++u) p[u + r] = std::exp(-(u * u) / (2.0 * sigma * sigma));
    const double sum = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& v : p) v /= sum;
    return p;
}

GaussianKernel gaussian_kernel(double sigma, std::size_t radius) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("gaussian sigma must be positive");
    if (radius < 1) throw ValidationError("gaussian kernel radius must be >= 1");
    const int r = static_cast<int>(radius);
    const std::size_t side = 2 * radius + 1;
    GaussianKernel k{sigma, radius, std::vector<double>(side * side)};
    // 1 / (2 pi sigma^2) cancels in the renormalization below.
    double sum = 0.0;
    for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x) {
            const double v = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma)) / (2.0 * std::numbers::pi * sigma * sigma);
            k.weights[(y + r) * side + (x + r)] = v;
            sum += v;
        }
    for (double& v : k.weights) v /= sum;
    return k;
}

namespace {

std::size_t clamp_index(long i, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<long>(i, 0, static_cast<long>(n) - 1));
}

}  // namespace

FeatureMap gaussian_smooth(const FeatureMap& fm, const GaussianKernel& k) {
    const long r = static_cast<long>(k.radius);
    FeatureMap out(fm.channels(), fm.height(), fm.width());
    for (std::size_t c = 0; c < fm.channels(); ++c)
        for (std::size_t i = 0; i < fm.height(); ++i)
            for (std::size_t j = 0; j < fm.width(); ++j) {
                double acc = 0.0;
                for (long u = -r; u <= r; ++u)
                    for (long v = -r; v <= r; ++v)
                        acc += fm.at(c, clamp_index(static_cast<long>(i) - u, fm.height()),
                                     clamp_index(static_cast<long>(j) - v, fm.width())) *
                               k.at(static_cast<int>(u), static_cast<int>(v));
                out.at(c, i, j) = acc;
            }
    return out;
}

FeatureMap gaussian_smooth_separable(const FeatureMap& fm, double sigma, std::size_t radius) {
    const auto p = gaussian_profile(sigma, radius);
    const long r = static_cast<long>(radius);
    FeatureMap tmp(fm.channels(), fm.height(), fm.width());
    FeatureMap out(fm.channels(), fm.height(), fm.width());
    for (std::size_t c = 0; c < fm.channels(); ++c) {
        for (std::size_t i = 0; i < fm.height(); ++i)
            for (std::size_t j = 0; j < fm.width(); ++j) {
                double acc = 0.0;
                for (long v = -r; v <= r; ++v)
                    acc += fm.at(c, i, clamp_index(static_cast<long>(j) - v, fm.width())) * p[v + r];
                tmp.at(c, i, j) = acc;
            }
        for (std::size_t i = 0; i < fm.height(); ++i)
            for (std::size_t j = 0; j < fm.width(); ++j) {
                double acc = 0.0;
                for (long u = -r; u <= r; ++u)
                    acc += tmp.at(c, clamp_index(static_cast<long>(i) - u, fm.height()), j) * p[u + r];
                out.at(c, i, j) = acc;
            }
    }
    return out;
}

FeatureMap upsample_nearest(const FeatureMap& fm, std::size_t factor) {
    if (factor < 1) throw ValidationError("upsample factor must be >= 1");
    FeatureMap out(fm.channels(), fm.height() * factor, fm.width() * factor);
    for (std::size_t c = 0; c < out.channels(); ++c)
        for (std::size_t y = 0; y < out.height(); ++y)
            for (std::size_t x = 0; x < out.width(); ++x) out.at(c, y, x) = fm.at(c, y / factor, x / factor);
    return out;
}

namespace {

// Pairwise summation; exact for 2^k copies of one value.
double pairwise_sum(std::span<const double> v) {
    if (v.size() == 1) return v[0];
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

}  // namespace

FeatureMap average_pool(const FeatureMap& fm, std::size_t factor) {
    if (factor < 1 || fm.height() % factor != 0 || fm.width() % factor != 0)
        throw ValidationError("average_pool factor must divide the map dimensions");
    FeatureMap out(fm.channels(), fm.height() / factor, fm.width() / factor);
    std::vector<double> block(factor * factor);
    for (std::size_t c = 0; c < out.channels(); ++c)
        for (std::size_t y = 0; y < out.height(); ++y)
            for (std::size_t x = 0; x < out.width(); ++x) {
                for (std::size_t dy = 0; dy < factor; ++dy)
                    for (std::size_t dx = 0; dx < factor; ++dx)
                        block[dy * factor + dx] = fm.at(c, y * factor + dy, x * factor + dx);
                out.at(c, y, x) = pairwise_sum(block) / static_cast<double>(block.size());
            }
    return out;
}

FeatureMap conv2d(const FeatureMap& fm, const WeightArray& weights, std::size_t stride, std::size_t padding) {
    if (weights.rank() != 4) throw ValidationError("conv2d weights must be rank 4 (C_out, C_in, k, k)");
    const std::size_t c_out = weights.dim(0), c_in = weights.dim(1), k = weights.dim(2);
    if (weights.dim(3) != k) throw ValidationError("conv2d kernel must be square");
    if (c_in != fm.channels())
        throw ValidationError("conv2d: weights expect " + std::to_string(c_in) + " input channels, map has " +
                              std::to_string(fm.channels()));
    if (stride < 1) throw ValidationError("conv2d stride must be >= 1");
    const long h_span = static_cast<long>(fm.height() + 2 * padding) - static_cast<long>(k);
    const long w_span = static_cast<long>(fm.width() + 2 * padding) - static_cast<long>(k);
    if (h_span < 0 || w_span < 0) throw ValidationError("conv2d output dimension would be < 1");
    const std::size_t h_out = static_cast<std::size_t>(h_span) / stride + 1;
    const std::size_t w_out = static_cast<std::size_t>(w_span) / stride + 1;

    FeatureMap out(c_out, h_out, w_out);
    const auto w = weights.data();
    for (std::size_t o = 0; o < c_out; ++o)
        for (std::size_t oy = 0; oy < h_out; ++oy)
            for (std::size_t ox = 0; ox < w_out; ++ox) {
                double acc = 0.0;
                for (std::size_t c = 0; c < c_in; ++c)
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const long y = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                        if (y < 0 || y >= static_cast<long>(fm.height())) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const long x = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                            if (x < 0 || x >= static_cast<long>(fm.width())) continue;
                            acc += w[((o * c_in + c) * k + ky) * k + kx] *
                                   fm.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                        }
                    }
                out.at(o, oy, ox) = acc;
            }
    return out;
}

FeatureMap conv3d_scale(const FeatureVolume& vol, const WeightArray& weights) {
    if (weights.rank() != 5) throw ValidationError("conv3d weights must be rank 5 (C_out, C_in, D, k, k)");
    const std::size_t c_out = weights.dim(0), c_in = weights.dim(1), depth = weights.dim(2), k = weights.dim(3);
    if (weights.dim(4) != k) throw ValidationError("conv3d kernel must be square");
    if (k % 2 == 0) throw ValidationError("conv3d kernel size must be odd to preserve spatial dims");
    if (c_in != vol.channels()) throw ValidationError("conv3d: channel mismatch between weights and volume");
    if (depth != vol.depth())
        throw ValidationError("conv3d: weight depth " + std::to_string(depth) + " does not match volume depth " +
                              std::to_string(vol.depth()));
    const long pad = static_cast<long>(k / 2);
    const long height = static_cast<long>(vol.height());
    const long width = static_cast<long>(vol.width());

    FeatureMap out(c_out, vol.height(), vol.width());
    const auto w = weights.data();
    for (std::size_t o = 0; o < c_out; ++o)
        for (long oy = 0; oy < height; ++oy)
            for (long ox = 0; ox < width; ++ox) {
                double acc = 0.0;
                for (std::size_t c = 0; c < c_in; ++c)
                    for (std::size_t d = 0; d < depth; ++d)
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            const long y = oy + static_cast<long>(ky) - pad;
                            if (y < 0 || y >= height) continue;
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long x = ox + static_cast<long>(kx) - pad;
                                if (x < 0 || x >= width) continue;
                                acc += w[(((o * c_in + c) * depth + d) * k + ky) * k + kx] *
                                       vol.at(c, d, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                            }
                        }
                out.at(o, static_cast<std::size_t>(oy), static_cast<std::size_t>(ox)) = acc;
            }
    return out;
}

namespace {

constexpr char kMagic[4] = {'F', 'M', 'A', 'P'};

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw ValidationError("FMAP file truncated in header");
    return std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 | std::uint32_t{b[3]} << 24;
}

void write_raw(const std::filesystem::path& path, std::size_t c, std::size_t h, std::size_t w,
               std::span<const double> data) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ValidationError("cannot open " + path.string() + " for writing");
    os.write(kMagic, 4);
    put_u32(os, static_cast<std::uint32_t>(c));
    put_u32(os, static_cast<std::uint32_t>(h));
    put_u32(os, static_cast<std::uint32_t>(w));
    for (double v : data) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    if (!os) throw ValidationError("failed writing " + path.string());
}

std::vector<double> read_raw(const std::filesystem::path& path, std::size_t& c, std::size_t& h, std::size_t& w) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open FMAP file " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw ValidationError(path.string() + ": bad FMAP magic");
    c = get_u32(is);
    h = get_u32(is);
    w = get_u32(is);
    const std::size_t n = c * h * w;
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        unsigned char b[4];
        if (!is.read(reinterpret_cast<char*>(b), 4))
            throw ValidationError(path.string() + ": FMAP payload shorter than " + shape_str(c, h, w));
        const std::uint32_t bits =
            std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 | std::uint32_t{b[3]} << 24;
        data[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    if (is.peek() != std::char_traits<char>::eof()) throw ValidationError(path.string() + ": trailing bytes after FMAP payload");
    return data;
}

}  // namespace

void write_fmap(const std::filesystem::path& path, const FeatureMap& fm) {
    write_raw(path, fm.channels(), fm.height(), fm.width(), fm.data());
}

FeatureMap read_fmap(const std::filesystem::path& path) {
    std::size_t c = 0, h = 0, w = 0;
    auto data = read_raw(path, c, h, w);
    return FeatureMap(c, h, w, std::move(data));
}

void write_weights(const std::filesystem::path& path, const WeightArray& w) {
    const auto& s = w.shape();
    const std::size_t d0 = s[0];
    const std::size_t d1 = s.size() > 1 ? s[1] : 1;
    const std::size_t rest = w.size() / (d0 * d1);
    write_raw(path, d0, d1, rest, w.data());
}

WeightArray read_weights(const std::filesystem::path& path, std::vector<std::size_t> shape) {
    std::size_t c = 0, h = 0, w = 0;
    auto data = read_raw(path, c, h, w);
    WeightArray out(std::move(shape));
    if (out.size() != data.size())
        throw ValidationError(path.string() + ": weight file holds " + std::to_string(data.size()) +
                              " values, expected " + std::to_string(out.size()));
    return WeightArray(out.shape(), std::move(data));
}

}  // namespace uavdet
