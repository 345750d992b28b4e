#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "riir/metrics.hpp"
#include "riir/synth.hpp"

using namespace riir;
using namespace riir::test;

namespace {

double mean_neighbor_difference(const DisplacementField& u) {
    double acc = 0;
    int n = 0;
    for (int r = 0; r < u.shape().height; ++r) {
        for (int c = 0; c + 1 < u.shape().width; ++c) {
            acc += std::hypot(u.row(r, c + 1) - u.row(r, c), u.col(r, c + 1) - u.col(r, c));
            ++n;
        }
    }
    return acc / n;
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("flat phantom is piecewise constant on its labels") {
    PhantomSpec ps;
    ps.texture_amplitude = 0.0;
    ps.noise_sigma = 0.0;
    ps.seed = 3;
    const Phantom p = generate_phantom(ps);
    for (std::size_t i = 0; i < p.image.size(); ++i) {
        CHECK(p.image[i] == msasha_signal(region_signal(p.labels[i]), phantom_reference_frame()));
    }
    std::size_t counts[3] = {0, 0, 0};
    for (auto l : p.labels.values()) ++counts[l];
    CHECK(counts[0] > 0);
    CHECK(counts[1] > 0);
    const double ring = std::numbers::pi * (ps.outer_radius * ps.outer_radius - ps.inner_radius * ps.inner_radius);
    CHECK(std::abs(static_cast<double>(counts[2]) - ring) <= 0.15 * ring);
}

TEST_CASE("phantom generation is seeded") {
    PhantomSpec ps;
    ps.seed = 9;
    const Phantom a = generate_phantom(ps), b = generate_phantom(ps);
    CHECK(a.image == b.image);
    CHECK(a.labels == b.labels);
    ps.seed = 10;
    CHECK_FALSE(generate_phantom(ps).image == a.image);
}

TEST_CASE("random_smooth_displacement scaling and smoothness") {
    const GridShape s{64, 64};
    const auto zero = random_smooth_displacement(s, {0.0, 8.0, 1});
    CHECK(zero == DisplacementField(s));
    const auto u = random_smooth_displacement(s, {3.0, 8.0, 1});
    CHECK(max_magnitude(u) == doctest::Approx(3.0).epsilon(1e-4 / 3.0));
    const auto rough = random_smooth_displacement(s, {3.0, 1.0, 1});
    CHECK(mean_neighbor_difference(u) < mean_neighbor_difference(rough));
    CHECK(u == random_smooth_displacement(s, {3.0, 8.0, 1}));
}

TEST_CASE("msasha_signal reductions") {
    const SignalParams p{1100.0, 45.0, 0.7};
    CHECK(msasha_signal(p, {500.0, 0.0, 0.0}) == doctest::Approx(0.7 * (1 - std::exp(-500.0 / 1100.0))).epsilon(1e-14));
    CHECK(msasha_signal(p, {110000.0, 0.0, 0.0}) == doctest::Approx(0.7).epsilon(1e-12));
    for (const auto& a : default_schedule(8)) CHECK(msasha_signal({1000, 50, 0.0}, a) == 0.0);
}

TEST_CASE("default schedule spans the documented ranges") {
    const auto sch = default_schedule(8);
    REQUIRE(sch.size() == 8);
    for (const auto& f : sch) {
        CHECK(f.ts >= 300.0);
        CHECK(f.ts <= 10000.0);
        CHECK((f.te == 0.0 || f.te == 30.0 || f.te == 60.0));
        CHECK(f.td >= 0.0);
        CHECK(f.td <= 600.0);
    }
    CHECK(sch.back().te == 0.0);
}

TEST_CASE("series generation") {
    PhantomSpec ps;
    ps.seed = 4;
    const auto sch = default_schedule(8);
    const ImageSeries still = generate_series(ps, {0.0, 8.0, 5}, sch);
    for (const auto& g : still.ground_truth) CHECK(g == DisplacementField(ps.shape));
    CHECK(series_pca(still.frames).d_pca1 == series_pca(still.reference).d_pca1);
    const ImageSeries moving = generate_series(ps, {3.0, 8.0, 5}, sch);
    CHECK(series_pca(moving.frames).d_pca1 > series_pca(moving.reference).d_pca1);
    CHECK_FALSE(moving.frames.front() == moving.frames.back());
    CHECK(moving.labels == still.labels);
    CHECK(moving.frames.size() == 8);
    CHECK(moving.ground_truth.back() == DisplacementField(ps.shape));
}

TEST_CASE("pair dataset") {
    PhantomSpec ps;
    ps.seed = 6;
    const auto still = generate_pair_dataset(3, ps, {0.0, 8.0, 7});
    for (const auto& p : still) {
        CHECK(*p.ground_truth == DisplacementField(ps.shape));
        CHECK(mse(p.mov, p.fixed) < 4 * ps.noise_sigma * ps.noise_sigma);
    }
    const auto pairs = generate_pair_dataset(4, ps, {3.0, 8.0, 7});
    for (const auto& p : pairs) {
        const Image w = warp_image(p.mov, *p.ground_truth);
        double acc = 0;
        int n = 0;
        for (int r = 8; r < 56; ++r) {
            for (int c = 8; c < 56; ++c) {
                acc += std::pow(w(r, c) - p.fixed(r, c), 2);
                ++n;
            }
        }
        CHECK(acc / n < 2 * ps.noise_sigma * ps.noise_sigma);
        CHECK(mse(p.mov, p.fixed) > 2 * ps.noise_sigma * ps.noise_sigma);
    }
    const auto again = generate_pair_dataset(4, ps, {3.0, 8.0, 7});
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CHECK(pairs[i].mov == again[i].mov);
        CHECK(pairs[i].fixed == again[i].fixed);
        CHECK(*pairs[i].ground_truth == *again[i].ground_truth);
        CHECK(pairs[i].id == again[i].id);
    }
}

TEST_CASE("percentile and clip_percentiles") {
    std::vector<double> v;
    for (int i = 0; i <= 100; ++i) v.push_back(i);
    CHECK(percentile(v, 1.0) == doctest::Approx(1.0));
    CHECK(percentile(v, 95.0) == doctest::Approx(95.0));
    CHECK(percentile({0.0, 10.0}, 25.0) == doctest::Approx(2.5));
    std::vector<double> w(v.begin(), v.end() - 1);
    const Image ramp({10, 10}, w);
    const double lo = percentile(w, 1.0), hi = percentile(w, 95.0);
    const Image clipped = clip_percentiles(ramp, 1.0, 95.0);
    for (double x : clipped.values()) {
        CHECK(x >= lo);
        CHECK(x <= hi);
    }
    CHECK(clip_percentiles(ramp, 0.0, 100.0) == ramp);
    const Image flat({4, 4}, 2.5);
    CHECK(clip_percentiles(flat, 5.0, 60.0) == flat);
}

TEST_CASE("gaussian_smooth preserves constants") {
    const Plane<double> flat({9, 9}, 1.5);
    const Plane<double> smoothed = gaussian_smooth(flat, 2.0);
    for (double v : smoothed.values()) CHECK(v == doctest::Approx(1.5).epsilon(1e-12));
}

}
