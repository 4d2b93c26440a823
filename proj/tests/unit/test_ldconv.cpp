#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "uavdet/error.hpp"
#include "uavdet/ldconv.hpp"

namespace uavdet {
namespace {

FeatureMap random_map(std::mt19937_64& rng, std::size_t c, std::size_t h, std::size_t w) {
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> d(c * h * w);
    for (double& v : d) v = u(rng);
    return FeatureMap(c, h, w, std::move(d));
}

LdConvSpec random_spec(std::mt19937_64& rng, std::size_t n, std::size_t c_in, std::size_t c_out, std::size_t stride) {
    std::uniform_real_distribution<double> u(-1, 1);
    LdConvSpec s{n, c_in, c_out, stride, WeightArray({c_out, c_in, n})};
    for (double& v : s.weights.data()) v = u(rng);
    return s;
}

double max_abs_diff(const FeatureMap& a, const FeatureMap& b) {
    EXPECT_TRUE(a.same_shape(b));
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

TEST(InitialCoordinates, WorkedExamples) {
    EXPECT_EQ(initial_coordinates(1), (std::vector<SampleOffset>{{0, 0}}));
    std::vector<SampleOffset> nine;
    for (int r = -1; r <= 1; ++r)
        for (int c = -1; c <= 1; ++c) nine.push_back({r, c});
    EXPECT_EQ(initial_coordinates(9), nine);
    EXPECT_EQ(initial_coordinates(5), (std::vector<SampleOffset>{{-1, -1}, {-1, 0}, {0, -1}, {0, 0}, {1, -1}}));
    EXPECT_THROW(initial_coordinates(0), ValidationError);
}

TEST(InitialCoordinates, TotalDeterministicAndUnique) {
    for (std::size_t n = 1; n <= 64; ++n) {
        const auto a = initial_coordinates(n);
        EXPECT_EQ(a.size(), n);
        EXPECT_EQ(a, initial_coordinates(n));
        std::set<std::pair<int, int>> seen;
        for (const auto& p : a) seen.insert({p.row, p.col});
        EXPECT_EQ(seen.size(), n) << "duplicates for n=" << n;
    }
}

TEST(Bilinear, KnotsMidpointsAndPadding) {
    std::mt19937_64 rng(1);
    const auto fm = random_map(rng, 2, 4, 5);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 5; ++x) EXPECT_EQ(bilinear_sample(fm, x, y, 1), fm.at(1, y, x));
    EXPECT_DOUBLE_EQ(bilinear_sample(fm, 2.5, 1, 0), (fm.at(0, 1, 2) + fm.at(0, 1, 3)) / 2);
    EXPECT_EQ(bilinear_sample(fm, -50, 2, 0), 0.0);
    EXPECT_EQ(bilinear_sample(fm, 2, 1e6, 0), 0.0);
    // Half a pixel outside: one real neighbor, one padded.
    EXPECT_DOUBLE_EQ(bilinear_sample(fm, -0.5, 0, 0), 0.5 * fm.at(0, 0, 0));
}

TEST(LdConv, ZeroOffsetsMatchConv2d) {
    std::mt19937_64 rng(3);
    for (std::size_t n : {4u, 9u, 16u, 25u}) {
        const std::size_t side = static_cast<std::size_t>(std::sqrt(n));
        for (int trial = 0; trial < 5; ++trial) {
            const auto fm = random_map(rng, 3, 7 + trial, 9);
            const auto spec = random_spec(rng, n, 3, 2, 1);
            const OffsetField zero(n, fm.height(), fm.width());
            const auto got = ldconv_forward(fm, spec, zero);
            const WeightArray w4({2, 3, side, side},
                                 std::vector<double>(spec.weights.data().begin(), spec.weights.data().end()));
            const auto ref = conv2d(fm, w4, 1, side / 2);
            // Even kernels give one extra row/column; the leading window is the match.
            FeatureMap cropped(ref.channels(), fm.height(), fm.width());
            for (std::size_t c = 0; c < ref.channels(); ++c)
                for (std::size_t y = 0; y < fm.height(); ++y)
                    for (std::size_t x = 0; x < fm.width(); ++x) cropped.at(c, y, x) = ref.at(c, y, x);
            EXPECT_LE(max_abs_diff(got, cropped), 1e-6) << "n=" << n;
        }
    }
}

TEST(LdConv, SingleTapIdentity) {
    std::mt19937_64 rng(5);
    const auto fm = random_map(rng, 3, 6, 6);
    LdConvSpec spec{1, 3, 3, 1, WeightArray({3, 3, 1})};
    for (std::size_t c = 0; c < 3; ++c) spec.weights({c, c, 0}) = 1.0;
    EXPECT_EQ(ldconv_forward(fm, spec, OffsetField(1, 6, 6)), fm);
}

TEST(LdConv, IntegerOffsetsEqualDirectGather) {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> shift(-3, 3);
    for (std::size_t n : {3u, 5u, 9u, 11u}) {
        const auto fm = random_map(rng, 2, 8, 7);
        const auto spec = random_spec(rng, n, 2, 3, 2);
        const std::size_t ho = ldconv_output_extent(8, 2), wo = ldconv_output_extent(7, 2);
        OffsetField off(n, ho, wo);
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t y = 0; y < ho; ++y)
                for (std::size_t x = 0; x < wo; ++x) {
                    off.dx(k, y, x) = shift(rng);
                    off.dy(k, y, x) = shift(rng);
                }
        const auto base = initial_coordinates(n);
        FeatureMap ref(3, ho, wo);
        for (std::size_t o = 0; o < 3; ++o)
            for (std::size_t y = 0; y < ho; ++y)
                for (std::size_t x = 0; x < wo; ++x) {
                    double s = 0;
                    for (std::size_t c = 0; c < 2; ++c)
                        for (std::size_t k = 0; k < n; ++k) {
                            const long yy = static_cast<long>(2 * y) + base[k].row + static_cast<long>(off.dy(k, y, x));
                            const long xx = static_cast<long>(2 * x) + base[k].col + static_cast<long>(off.dx(k, y, x));
                            if (yy < 0 || xx < 0 || yy >= 8 || xx >= 7) continue;
                            s += spec.weights({o, c, k}) * fm.at(c, yy, xx);
                        }
                    ref.at(o, y, x) = s;
                }
        EXPECT_LE(max_abs_diff(ldconv_forward(fm, spec, off), ref), 1e-12);
    }
}

TEST(LdConv, LinearInInput) {
    std::mt19937_64 rng(9);
    const auto spec = random_spec(rng, 7, 2, 3, 1);
    const auto off = random_offsets(7, 6, 6, 1.5, 99);
    for (int t = 0; t < 10; ++t) {
        const auto a = random_map(rng, 2, 6, 6), b = random_map(rng, 2, 6, 6);
        const double alpha = 1.7, beta = -0.6;
        FeatureMap mix = a;
        for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] = alpha * a.data()[i] + beta * b.data()[i];
        const auto fa = ldconv_forward(a, spec, off), fb = ldconv_forward(b, spec, off);
        FeatureMap expect = fa;
        for (std::size_t i = 0; i < expect.size(); ++i) expect.data()[i] = alpha * fa.data()[i] + beta * fb.data()[i];
        EXPECT_LE(max_abs_diff(ldconv_forward(mix, spec, off), expect), 1e-9);
    }
}

TEST(LdConv, ContinuousInOffsets) {
    std::mt19937_64 rng(11);
    const auto fm = random_map(rng, 2, 8, 8);
    const auto spec = random_spec(rng, 6, 2, 2, 1);
    const auto off = random_offsets(6, 8, 8, 2.0, 5);
    OffsetField nudged = off;
    for (std::size_t k = 0; k < 6; ++k)
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 8; ++x) {
                nudged.dx(k, y, x) += 1e-6;
                nudged.dy(k, y, x) += 1e-6;
            }
    EXPECT_LE(max_abs_diff(ldconv_forward(fm, spec, off), ldconv_forward(fm, spec, nudged)), 1e-3);
}

TEST(LdConv, StrideShapesAndValidation) {
    std::mt19937_64 rng(13);
    const auto fm = random_map(rng, 2, 9, 10);
    const auto spec = random_spec(rng, 4, 2, 1, 3);
    EXPECT_EQ(ldconv_forward(fm, spec, OffsetField(4, 3, 4)).height(), 3u);
    EXPECT_THROW(ldconv_forward(fm, spec, OffsetField(4, 9, 10)), ValidationError);
    EXPECT_THROW(ldconv_forward(fm, spec, OffsetField(3, 3, 4)), ValidationError);
    EXPECT_THROW(ldconv_forward(random_map(rng, 3, 9, 10), spec, OffsetField(4, 3, 4)), ValidationError);
    LdConvSpec bad = spec;
    bad.weights = WeightArray({1, 2, 5});
    EXPECT_THROW(validate(bad), ConfigError);
}

TEST(LdConvFixture, SaveLoadRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "uavdet_ldconv_fixture";
    std::filesystem::remove_all(dir);
    std::mt19937_64 rng(17);
    auto spec = random_spec(rng, 5, 2, 3, 2);
    for (double& v : spec.weights.data()) v = static_cast<float>(v);
    auto off = random_offsets(5, 4, 4, 1.0, 3);
    FeatureMap rounded = off.as_map();
    for (double& v : rounded.data()) v = static_cast<float>(v);
    const OffsetField off32(rounded);
    ldconv_save_spec(dir, spec, &off32);
    const auto back = ldconv_load_spec(dir);
    EXPECT_EQ(back.n_samples, 5u);
    EXPECT_EQ(back.stride, 2u);
    EXPECT_EQ(back.weights, spec.weights);
    const auto off_back = ldconv_load_offsets(dir);
    ASSERT_TRUE(off_back);
    EXPECT_EQ(off_back->as_map(), off32.as_map());
}

}  // namespace
}  // namespace uavdet
