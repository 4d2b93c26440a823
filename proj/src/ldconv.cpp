#include "uavdet/ldconv.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include <json.hpp>

#include "uavdet/error.hpp"

namespace uavdet {

using nlohmann::json;

std::vector<SampleOffset> initial_coordinates(std::size_t n) {
    if (n < 1) throw ValidationError("initial_coordinates: n must be >= 1");
    std::size_t base = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
    while (base * base > n) --base;
    while ((base + 1) * (base + 1) <= n) ++base;
    const std::size_t full_rows = n / base;
    const std::size_t remainder = n - base * full_rows;
    const std::size_t rows = full_rows + (remainder > 0 ? 1 : 0);
    const int row_shift = static_cast<int>(rows / 2);
    const int col_shift = static_cast<int>(base / 2);

    std::vector<SampleOffset> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        out.push_back({static_cast<int>(i / base) - row_shift, static_cast<int>(i % base) - col_shift});
    return out;
}

void validate(const LdConvSpec& spec) {
    std::vector<std::string> problems;
    if (spec.n_samples < 1) problems.push_back("n_samples.positive: must be >= 1");
    if (spec.stride < 1) problems.push_back("stride.positive: must be >= 1");
    if (spec.c_in < 1 || spec.c_out < 1) problems.push_back("channels.positive: c_in and c_out must be >= 1");
    if (spec.weights.rank() != 3 || spec.weights.dim(0) != spec.c_out || spec.weights.dim(1) != spec.c_in ||
        spec.weights.dim(2) != spec.n_samples)
        problems.push_back("weights.shape: expected (c_out, c_in, n_samples) = (" + std::to_string(spec.c_out) + ", " +
                           std::to_string(spec.c_in) + ", " + std::to_string(spec.n_samples) + ")");
    if (!problems.empty()) throw ConfigError(std::move(problems));
}

OffsetField::OffsetField(std::size_t n_samples, std::size_t height, std::size_t width)
    : data_(2 * n_samples, height, width) {}

OffsetField::OffsetField(FeatureMap data) : data_(std::move(data)) {
    if (data_.channels() % 2 != 0) throw ValidationError("offset field needs an even channel count (2N)");
}

OffsetField random_offsets(std::size_t n_samples, std::size_t height, std::size_t width, double amplitude,
                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-amplitude, amplitude);
    OffsetField f(n_samples, height, width);
    for (std::size_t k = 0; k < n_samples; ++k)
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                f.dx(k, y, x) = u(rng);
                f.dy(k, y, x) = u(rng);
            }
    return f;
}

double bilinear_sample(const FeatureMap& fm, double x, double y, std::size_t c) {
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const double tx = x - fx;
    const double ty = y - fy;
    const long width = static_cast<long>(fm.width());
    const long height = static_cast<long>(fm.height());
    // Far outside: every neighbor is padding.
    if (fx < -1.0 || fy < -1.0 || fx > static_cast<double>(width) || fy > static_cast<double>(height)) return 0.0;
    const long x0 = static_cast<long>(fx);
    const long y0 = static_cast<long>(fy);

    auto value = [&](long yy, long xx) {
        if (xx < 0 || yy < 0 || xx >= width || yy >= height) return 0.0;
        return fm.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
    };
    double acc = 0.0;
    if (tx == 0.0 && ty == 0.0) return value(y0, x0);
    acc += (1.0 - ty) * (1.0 - tx) * value(y0, x0);
    acc += (1.0 - ty) * tx * value(y0, x0 + 1);
    acc += ty * (1.0 - tx) * value(y0 + 1, x0);
    acc += ty * tx * value(y0 + 1, x0 + 1);
    return acc;
}

std::size_t ldconv_output_extent(std::size_t extent, std::size_t stride) { return (extent + stride - 1) / stride; }

FeatureMap ldconv_forward(const FeatureMap& fm, const LdConvSpec& spec, const OffsetField& offsets) {
    validate(spec);
    if (spec.c_in != fm.channels())
        throw ValidationError("ldconv: spec expects " + std::to_string(spec.c_in) + " channels, map has " +
                              std::to_string(fm.channels()));
    const std::size_t h_out = ldconv_output_extent(fm.height(), spec.stride);
    const std::size_t w_out = ldconv_output_extent(fm.width(), spec.stride);
    if (offsets.n_samples() != spec.n_samples || offsets.height() != h_out || offsets.width() != w_out)
        throw ValidationError("ldconv: offset field shape (" + std::to_string(2 * offsets.n_samples()) + "," +
                              std::to_string(offsets.height()) + "," + std::to_string(offsets.width()) +
                              ") does not match expected (" + std::to_string(2 * spec.n_samples) + "," +
                              std::to_string(h_out) + "," + std::to_string(w_out) + ")");
    for (double v : offsets.as_map().data())
        if (!std::isfinite(v)) throw ValidationError("ldconv: offsets must be finite");

    const auto base = initial_coordinates(spec.n_samples);
    const auto w = spec.weights.data();
    const std::size_t n = spec.n_samples;
    FeatureMap out(spec.c_out, h_out, w_out);
    std::vector<double> samples(spec.c_in * n);
    for (std::size_t oy = 0; oy < h_out; ++oy)
        for (std::size_t ox = 0; ox < w_out; ++ox) {
            for (std::size_t k = 0; k < n; ++k) {
                const double x = static_cast<double>(ox * spec.stride) + base[k].col + offsets.dx(k, oy, ox);
                const double y = static_cast<double>(oy * spec.stride) + base[k].row + offsets.dy(k, oy, ox);
                for (std::size_t c = 0; c < spec.c_in; ++c) samples[c * n + k] = bilinear_sample(fm, x, y, c);
            }
            for (std::size_t o = 0; o < spec.c_out; ++o) {
                double acc = 0.0;
                for (std::size_t i = 0; i < spec.c_in * n; ++i) acc += w[o * spec.c_in * n + i] * samples[i];
                out.at(o, oy, ox) = acc;
            }
        }
    return out;
}

void ldconv_save_spec(const std::filesystem::path& dir, const LdConvSpec& spec, const OffsetField* offsets) {
    validate(spec);
    std::filesystem::create_directories(dir);
    json m{{"n_samples", spec.n_samples},
           {"stride", spec.stride},
           {"c_in", spec.c_in},
           {"c_out", spec.c_out},
           {"weights", "weights.fmap"}};
    write_weights(dir / "weights.fmap", spec.weights);
    if (offsets) {
        write_fmap(dir / "offsets.fmap", offsets->as_map());
        m["offsets"] = "offsets.fmap";
        m["offsets_shape"] = {2 * offsets->n_samples(), offsets->height(), offsets->width()};
    }
    std::ofstream os(dir / "manifest.json");
    os << m.dump(2) << "\n";
    if (!os) throw ValidationError("failed writing " + (dir / "manifest.json").string());
}

namespace {

json read_manifest(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw ValidationError("cannot open " + (dir / "manifest.json").string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ValidationError((dir / "manifest.json").string() + ": " + e.what());
    }
}

}  // namespace

LdConvSpec ldconv_load_spec(const std::filesystem::path& dir) {
    const json m = read_manifest(dir);
    LdConvSpec spec;
    try {
        spec.n_samples = m.at("n_samples").get<std::size_t>();
        spec.stride = m.at("stride").get<std::size_t>();
        spec.c_in = m.at("c_in").get<std::size_t>();
        spec.c_out = m.at("c_out").get<std::size_t>();
        if (spec.n_samples < 1 || spec.c_in < 1 || spec.c_out < 1)
            throw ValidationError(dir.string() + ": n_samples, c_in and c_out must be >= 1");
        spec.weights = read_weights(dir / m.at("weights").get<std::string>(), {spec.c_out, spec.c_in, spec.n_samples});
    } catch (const json::exception& e) {
        throw ValidationError(dir.string() + ": malformed ldconv manifest: " + e.what());
    }
    validate(spec);
    return spec;
}

std::optional<OffsetField> ldconv_load_offsets(const std::filesystem::path& dir) {
    const json m = read_manifest(dir);
    if (!m.contains("offsets")) return std::nullopt;
    OffsetField f(read_fmap(dir / m.at("offsets").get<std::string>()));
    if (m.contains("offsets_shape")) {
        const auto s = m["offsets_shape"].get<std::vector<std::size_t>>();
        if (s.size() != 3 || s[0] != 2 * f.n_samples() || s[1] != f.height() || s[2] != f.width())
            throw ValidationError(dir.string() + ": offsets file does not match offsets_shape");
    }
    return f;
}

}  // namespace uavdet
