#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "riir/diffable.hpp"
#include "riir/metrics.hpp"
#include "riir/synth.hpp"

using namespace riir;
using namespace riir::test;

namespace {

// Local NCC by explicit window loops.
double ncc_oracle(const Image& a, const Image& b, int window) {
    const int half = window / 2;
    double sa = 0, sb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sa += a[i];
        sb += b[i];
    }
    const double ga = sa / a.size(), gb = sb / b.size();
    double va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        va += (a[i] - ga) * (a[i] - ga);
        vb += (b[i] - gb) * (b[i] - gb);
    }
    const double eps = kNccEpsilon * std::sqrt(va / a.size()) * std::sqrt(vb / b.size());
    double total = 0.0;
    for (int r = 0; r < a.height(); ++r) {
        for (int c = 0; c < a.width(); ++c) {
            double ma = 0, mb = 0, n = 0;
            for (int i = std::max(0, r - half); i <= std::min(a.height() - 1, r + half); ++i) {
                for (int j = std::max(0, c - half); j <= std::min(a.width() - 1, c + half); ++j) {
                    ma += a(i, j);
                    mb += b(i, j);
                    n += 1;
                }
            }
            ma /= n;
            mb /= n;
            double caa = 0, cbb = 0, cab = 0;
            for (int i = std::max(0, r - half); i <= std::min(a.height() - 1, r + half); ++i) {
                for (int j = std::max(0, c - half); j <= std::min(a.width() - 1, c + half); ++j) {
                    caa += (a(i, j) - ma) * (a(i, j) - ma);
                    cbb += (b(i, j) - mb) * (b(i, j) - mb);
                    cab += (a(i, j) - ma) * (b(i, j) - mb);
                }
            }
            const double d = std::sqrt(caa / n * cbb / n) + eps;
            total += d > 0 ? (cab / n) / d : 0.0;
        }
    }
    return total / a.size();
}

// Parzen NMI summing kernel products pixel by pixel, no histogram matrices.
double nmi_oracle(const Image& a, const Image& b, int bins, double sigma_bins) {
    const auto [alo, ahi] = std::minmax_element(a.values().begin(), a.values().end());
    const auto [blo, bhi] = std::minmax_element(b.values().begin(), b.values().end());
    const double s = sigma_bins / bins;
    std::vector<double> joint(static_cast<std::size_t>(bins * bins), 0.0);
    for (std::size_t x = 0; x < a.size(); ++x) {
        const double va = (a[x] - *alo) / (*ahi - *alo);
        const double vb = (b[x] - *blo) / (*bhi - *blo);
        for (int i = 0; i < bins; ++i) {
            for (int j = 0; j < bins; ++j) {
                const double di = va - (i + 0.5) / bins, dj = vb - (j + 0.5) / bins;
                joint[i * bins + j] += std::exp(-(di * di + dj * dj) / (2 * s * s));
            }
        }
    }
    const double total = std::accumulate(joint.begin(), joint.end(), 0.0);
    auto h = [](double p) { return -p * std::log(p + 1e-10); };
    double hab = 0, ha = 0, hb = 0;
    for (int i = 0; i < bins; ++i) {
        double pi = 0, pj = 0;
        for (int j = 0; j < bins; ++j) {
            hab += h(joint[i * bins + j] / total);
            pi += joint[i * bins + j] / total;
            pj += joint[j * bins + i] / total;
        }
        ha += h(pi);
        hb += h(pj);
    }
    return (ha + hb) / hab;
}

// Cyclic Jacobi eigenvalue iteration for symmetric matrices.
std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> m) {
    const std::size_t n = m.size();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += m[p][q] * m[p][q];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(m[p][q]) < 1e-300) continue;
                const double theta = (m[q][q] - m[p][p]) / (2 * m[p][q]);
                const double t = (theta >= 0 ? 1 : -1) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                const double c = 1 / std::sqrt(t * t + 1), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double mkp = m[k][p], mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double mpk = m[p][k], mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = m[i][i];
    std::sort(ev.rbegin(), ev.rend());
    return ev;
}

LabelMap label_points(GridShape s, std::initializer_list<std::pair<int, int>> pts) {
    LabelMap m(s);
    for (auto [r, c] : pts) m(r, c) = 1;
    return m;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("mse") {
    const Image a = random_image({8, 8}, 1), b = random_image({8, 8}, 2);
    CHECK(mse(a, a) == 0.0);
    CHECK(mse(Image({4, 4}, 0.0), Image({4, 4}, 2.0)) == 4.0);
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    CHECK(mse(a, b) == doctest::Approx(acc / a.size()).epsilon(1e-14));
    CHECK_THROWS_AS(mse(a, Image({8, 9})), ShapeError);
}

TEST_CASE("local_ncc self correlation, affine invariance, degenerate input") {
    const Image a = random_image({24, 24}, 3);
    CHECK(local_ncc(a, a, 9) == doctest::Approx(1.0).epsilon(1e-3));
    Image b(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) b[i] = 2.0 * a[i] + 5.0;
    CHECK(std::abs(local_ncc(a, b, 9) - local_ncc(a, a, 9)) <= 1e-6);
    CHECK(std::abs(local_ncc(Image(a.shape(), 0.7), a, 9)) <= 1e-6);
    CHECK_THROWS_AS(local_ncc(a, a, 4), std::invalid_argument);
}

TEST_CASE("local_ncc matches an explicit window loop") {
    const Image a = random_image({13, 17}, 4), b = smooth_image({13, 17}, 5, 1.0);
    for (int w : {1, 3, 9}) CHECK(local_ncc(a, b, w) == doctest::Approx(ncc_oracle(a, b, w)).epsilon(1e-10));
}

TEST_CASE("nmi_parzen limits") {
    const Image a = random_image({32, 32}, 6);
    CHECK(nmi_parzen(a, a, 32, kNmiKernelSigma) >= 1.8);
    Image shuffled = a;
    Rng rng(7);
    const auto perm = permutation(a.size(), rng);
    for (std::size_t i = 0; i < a.size(); ++i) shuffled[i] = a[perm[i]];
    CHECK(nmi_parzen(a, shuffled, 32, kNmiKernelSigma) <= 1.2);
    CHECK_THROWS_AS(nmi_parzen(Image(a.shape(), 1.0), a, 32, kNmiKernelSigma), NumericalError);
}

TEST_CASE("nmi_parzen matches a brute-force kernel sum on 8x8") {
    const Image a = random_image({8, 8}, 8), b = random_image({8, 8}, 9);
    CHECK(nmi_parzen(a, b, 32, 0.5) == doctest::Approx(nmi_oracle(a, b, 32, 0.5)).epsilon(1e-6));
    CHECK(nmi_parzen(a, a, 16, 0.8) == doctest::Approx(nmi_oracle(a, a, 16, 0.8)).epsilon(1e-6));
}

TEST_CASE("diffusion_regularizer") {
    const GridShape s{6, 7};
    CHECK(diffusion_regularizer(DisplacementField(s)) == 0.0);
    CHECK(diffusion_regularizer(constant_field(s, 3.0, -1.0)) == 0.0);
    DisplacementField u(s);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 7; ++c) u.row(r, c) = 0.1 * r;
    CHECK(diffusion_regularizer(u) == doctest::Approx(0.01).epsilon(1e-12));
    const DisplacementField v = random_field(s, 10, 1.0);
    double acc = 0;
    for (int r = 0; r < 6; ++r) {
        for (int c = 0; c < 7; ++c) {
            const int r0 = r < 5 ? r : r - 1, c0 = c < 6 ? c : c - 1;
            for (const Plane<double>* p : {&v.row, &v.col}) {
                acc += std::pow((*p)(r0 + 1, c) - (*p)(r0, c), 2) + std::pow((*p)(r, c0 + 1) - (*p)(r, c0), 2);
            }
        }
    }
    CHECK(diffusion_regularizer(v) == doctest::Approx(acc / 42).epsilon(1e-12));
}

TEST_CASE("inner_loss sign convention") {
    const Image a = random_image({16, 16}, 11);
    CHECK(inner_loss(SimilarityKind::mse(), a, a) == 0.0);
    CHECK(inner_loss(SimilarityKind::ncc(), a, a) == doctest::Approx(-1.0).epsilon(1e-3));
    CHECK(inner_loss(SimilarityKind::nmi(), a, a) == doctest::Approx(-2.0).epsilon(0.1));
}

TEST_CASE("inner_loss minimum at identity for self-registration") {
    const GridShape s{32, 32};
    const Image img = smooth_image(s, 12, 2.0);
    for (const auto& kind : {SimilarityKind::mse(), SimilarityKind::ncc(), SimilarityKind::nmi()}) {
        for (std::uint64_t seed : {1u, 2u, 3u}) {
            const DisplacementField u = random_smooth_displacement(s, {2.0, 6.0, seed});
            CHECK(inner_loss(kind, img, img) <= inner_loss(kind, warp_image(img, u), img) + 1e-6);
        }
    }
}

TEST_CASE("inner_loss_gradient is zero at the MSE optimum") {
    const Image a = random_image({8, 8}, 13);
    const DisplacementField g = inner_loss_gradient(SimilarityKind::mse(), a, a, DisplacementField(a.shape()));
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(g.row[i] == 0.0);
        CHECK(g.col[i] == 0.0);
    }
}

TEST_CASE("inner_loss_gradient passes central finite differences for every kind") {
    const GridShape s{16, 16};
    for (const auto& kind : {SimilarityKind::mse(), SimilarityKind::ncc(9), SimilarityKind::nmi(32)}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const Image mov = smooth_image(s, 100 + seed, 1.5), fixed = smooth_image(s, 200 + seed, 1.5);
            const DisplacementField u0 = kink_free_field(s, 300 + seed);
            const std::size_t n = s.size();
            auto unpack = [&](std::span<const double> x) {
                DisplacementField u(s);
                std::copy(x.begin(), x.begin() + n, u.row.values().begin());
                std::copy(x.begin() + n, x.end(), u.col.values().begin());
                return u;
            };
            DifferentiableFunction fn{
                [&](std::span<const double> x) { return inner_loss(kind, warp_image(mov, unpack(x)), fixed); },
                [&](std::span<const double> x) {
                    const DisplacementField g = inner_loss_gradient(kind, mov, fixed, unpack(x));
                    std::vector<double> out(g.row.values());
                    out.insert(out.end(), g.col.values().begin(), g.col.values().end());
                    return out;
                }};
            std::vector<double> x(u0.row.values());
            x.insert(x.end(), u0.col.values().begin(), u0.col.values().end());
            const auto rep = check_gradient(to_string(kind.type), fn, x, 1e-5, 1e-5);
            INFO(to_string(kind.type), " seed ", seed, " rel ", rep.relative_l2_error);
            CHECK(rep.pass);
            CHECK(rep.relative_l2_error <= 1e-5);
        }
    }
}

TEST_CASE("dice_score") {
    const GridShape s{3, 3};
    const LabelMap x = label_points(s, {{0, 0}, {0, 1}}), y = label_points(s, {{0, 1}, {1, 1}});
    const std::uint16_t one[] = {1};
    CHECK(dice_score(x, x, one) == 1.0);
    CHECK(dice_score(x, y, one) == 0.5);
    CHECK(dice_score(y, x, one) == 0.5);
    CHECK(dice_score(x, label_points(s, {{2, 2}}), one) == 0.0);
    LabelMap two = x;
    two(2, 2) = 2;
    const std::uint16_t both[] = {1, 2};
    CHECK(dice_score(two, y, both) == doctest::Approx(0.25));
    CHECK(foreground_labels(two, y) == std::vector<std::uint16_t>{1, 2});
}

TEST_CASE("hausdorff_distance") {
    const GridShape s{5, 5};
    const LabelMap x = label_points(s, {{0, 0}, {0, 4}});
    CHECK(hausdorff_distance(x, x, 1) == 0.0);
    CHECK(hausdorff_distance(label_points(s, {{0, 0}}), label_points(s, {{0, 3}}), 1) == 3.0);
    CHECK(hausdorff_distance(x, label_points(s, {{0, 0}}), 1) == 4.0);
    CHECK(hausdorff_distance(label_points(s, {{0, 0}}), x, 1) == 4.0);
    CHECK(hausdorff_distance(label_points(s, {{1, 1}}), label_points(s, {{4, 5 - 1}}), 1) ==
          doctest::Approx(std::sqrt(18.0)));
}

TEST_CASE("correlation_matrix") {
    const Image a = random_image({10, 10}, 14);
    const std::vector<Image> same{a, a, a};
    const Eigen::MatrixXd k = correlation_matrix(same);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(k(i, j) == doctest::Approx(1.0).epsilon(1e-12));
    Image neg = a;
    for (auto& v : neg.values()) v = -v;
    const std::vector<Image> pair{a, neg};
    CHECK(correlation_matrix(pair)(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));
    std::vector<Image> series;
    for (int i = 0; i < 6; ++i) series.push_back(random_image({10, 10}, 20 + i));
    const Eigen::MatrixXd r = correlation_matrix(series);
    CHECK((r - r.transpose()).cwiseAbs().maxCoeff() == 0.0);
    for (int i = 0; i < 6; ++i) CHECK(r(i, i) == doctest::Approx(1.0).epsilon(1e-12));
    const PcaReport rep = pca_divergences(r);
    double sum = 0;
    for (double e : rep.eigenvalues) {
        sum += e;
        CHECK(e >= -1e-8);
    }
    CHECK(sum == doctest::Approx(6.0).epsilon(1e-6));
}

TEST_CASE("pca_divergences worked examples") {
    const PcaReport ones = pca_divergences(Eigen::MatrixXd::Ones(3, 3), 4);
    CHECK(std::abs(ones.d_pca1) <= 1e-9);
    CHECK(ones.d_pca2 == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(ones.eigenvalues[0] == doctest::Approx(3.0));
    const PcaReport id = pca_divergences(Eigen::MatrixXd::Identity(2, 2), 4);
    CHECK(std::abs(id.d_pca1) <= 1e-9);
    CHECK(id.d_pca2 == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("pca_divergences agrees with an independent Jacobi eigensolver") {
    Rng rng(30);
    for (int trial = 0; trial < 3; ++trial) {
        const int n = 7;
        Eigen::MatrixXd b(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) b(i, j) = rng.normal();
        const Eigen::MatrixXd k = b * b.transpose();
        std::vector<std::vector<double>> m(n, std::vector<double>(n));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) m[i][j] = k(i, j);
        const auto ev = jacobi_eigenvalues(m);
        const double trace = k.trace();
        const double d1 = trace - (ev[0] + ev[1] + ev[2] + ev[3]);
        double d2 = 0;
        for (int j = 0; j < n; ++j) d2 += (j + 1) * ev[j];
        const PcaReport rep = pca_divergences(k, 4);
        CHECK(rep.d_pca1 == doctest::Approx(d1).epsilon(1e-6));
        CHECK(rep.d_pca2 == doctest::Approx(d2).epsilon(1e-6));
        CHECK(std::is_sorted(rep.eigenvalues.rbegin(), rep.eigenvalues.rend()));
    }
}

TEST_CASE("center_crop keeps the central region") {
    Image img({10, 10});
    for (int r = 0; r < 10; ++r)
        for (int c = 0; c < 10; ++c) img(r, c) = r * 10 + c;
    const Image c = center_crop(img, 0.7);
    CHECK(c.height() == 7);
    CHECK(c.width() == 7);
    CHECK(c(0, 0) == img(1, 1));
}

TEST_CASE("motion raises D_PCA1 above the motion-free series") {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
        PhantomSpec ps;
        ps.seed = seed;
        const auto schedule = default_schedule(8);
        const ImageSeries moving = generate_series(ps, {2.0, 8.0, seed + 100}, schedule);
        const double with_motion = series_pca(moving.frames).d_pca1;
        const double still = series_pca(moving.reference).d_pca1;
        CHECK(still < with_motion);
    }
}

}
