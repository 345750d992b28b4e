#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "riir/metrics.hpp"
#include "riir/solver.hpp"
#include "riir/synth.hpp"

using namespace riir;
using namespace riir::test;

namespace {

std::vector<RegistrationPair> small_pairs(int n, std::uint64_t seed, double amplitude = 2.0) {
    PhantomSpec ps;
    ps.shape = {24, 24};
    ps.outer_radius = 8;
    ps.inner_radius = 5;
    ps.center_jitter = 1;
    ps.seed = seed;
    return generate_pair_dataset(n, ps, {amplitude, 4.0, seed + 1});
}

}  // namespace

TEST_SUITE("solver") {

TEST_CASE("loss weights") {
    const auto e = loss_weights(WeightScheme::exponential, 6);
    const double expected[] = {1.0, 1.585, 2.512, 3.981, 6.310, 10.0};
    REQUIRE(e.size() == 6);
    for (int i = 0; i < 6; ++i) CHECK(e[i] == doctest::Approx(expected[i]).epsilon(1e-3));
    for (double w : loss_weights(WeightScheme::uniform, 4)) CHECK(w == 0.25);
    CHECK(loss_weights(WeightScheme::exponential, 1) == std::vector<double>{1.0});
    CHECK(parse_weight_scheme("exp") == WeightScheme::exponential);
    CHECK_THROWS_AS(parse_weight_scheme("cubic"), std::invalid_argument);
}

TEST_CASE("recurrent_infer telescopes constant increments") {
    const GridShape s{8, 8};
    const Image mov = random_image(s, 1), fixed = random_image(s, 2);
    const auto zero = recurrent_infer([&](int, const DisplacementField&, const VectorField&) { return DisplacementField(s); },
                                      SimilarityKind::mse(), mov, fixed, 4);
    CHECK(zero.steps.size() == 4);
    CHECK(zero.final_disp == DisplacementField(s));
    CHECK(warp_image(mov, zero.final_disp) == mov);
    const auto c = recurrent_infer([&](int, const DisplacementField&, const VectorField&) { return constant_field(s, 0.25, -0.5); },
                                   SimilarityKind::mse(), mov, fixed, 4);
    for (std::size_t i = 0; i < c.final_disp.size(); ++i) {
        CHECK(c.final_disp.row[i] == doctest::Approx(1.0));
        CHECK(c.final_disp.col[i] == doctest::Approx(-2.0));
    }
    CHECK(c.steps[0].u == DisplacementField(s));
    CHECK(c.steps[0].inner == doctest::Approx(mse(mov, fixed)));
    CHECK_THROWS_AS(recurrent_infer([&](int t, const DisplacementField&, const VectorField&) {
                        return constant_field(s, t == 2 ? NAN : 0.0, 0.0);
                    }, SimilarityKind::mse(), mov, fixed, 4),
                    NumericalError);
}

TEST_CASE("outer_loss reduces to the single-step objective and is linear in the weights") {
    const GridShape s{10, 10};
    const Image mov = random_image(s, 3), fixed = random_image(s, 4);
    const DisplacementField u = random_field(s, 5, 1.0);
    InferenceTrace one;
    one.steps.push_back({DisplacementField(s), 0.0, 0.0, 0.0});
    one.final_disp = u;
    const double lambda = 0.05;
    const double expected = mse(warp_image(mov, u), fixed) + lambda * diffusion_regularizer(u);
    CHECK(outer_loss(one, fixed, mov, SimilarityKind::mse(), loss_weights(WeightScheme::uniform, 1), lambda) ==
          doctest::Approx(expected).epsilon(1e-14));

    InferenceTrace same;
    for (int t = 0; t < 6; ++t) same.steps.push_back({t == 0 ? DisplacementField(s) : u, 0.0, 0.0, 0.0});
    same.final_disp = u;
    const auto wu = loss_weights(WeightScheme::uniform, 6), we = loss_weights(WeightScheme::exponential, 6);
    const double lu = outer_loss(same, fixed, mov, SimilarityKind::mse(), wu, lambda);
    const double le = outer_loss(same, fixed, mov, SimilarityKind::mse(), we, lambda);
    double mu = 0, me = 0;
    for (int i = 0; i < 6; ++i) {
        mu += wu[i] / 6;
        me += we[i] / 6;
    }
    CHECK(lu / le == doctest::Approx(mu / me).epsilon(1e-12));
}

TEST_CASE("adam_update identities") {
    ParameterStore<double> p;
    p.arrays().push_back({"x", {1}, {1.0}});
    auto state = AdamState<double>::zeros_like(p);
    adam_update(p, p.zeros_like(), state, 0.1, 0.9, 0.999);
    CHECK(p[0].data[0] == 1.0);
    CHECK(state.step == 1);

    ParameterStore<double> q = p;
    auto s2 = AdamState<double>::zeros_like(q);
    ParameterStore<double> g = q.zeros_like();
    g[0].data[0] = -3.7;
    adam_update(q, g, s2, 0.01, 0.9, 0.999);
    CHECK(q[0].data[0] == doctest::Approx(1.0 + 0.01).epsilon(1e-6));

    ParameterStore<double> bowl = p;
    auto s3 = AdamState<double>::zeros_like(bowl);
    for (int i = 0; i < 200; ++i) {
        ParameterStore<double> gr = bowl.zeros_like();
        gr[0].data[0] = 2.0 * bowl[0].data[0];
        adam_update(bowl, gr, s3, 0.1, 0.9, 0.999);
    }
    CHECK(std::abs(bowl[0].data[0]) < 1e-2);

    ParameterStore<double> bad = p.zeros_like();
    bad[0].data[0] = NAN;
    CHECK_THROWS_AS(adam_update(p, bad, state, 0.1, 0.9, 0.999), NumericalError);
}

TEST_CASE("clip_global_norm") {
    ParameterStore<double> g;
    g.arrays().push_back({"a", {2}, {3.0, 4.0}});
    CHECK(clip_global_norm(g, 10.0) == doctest::Approx(5.0));
    CHECK(g[0].data[0] == 3.0);
    CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
    CHECK(g[0].data[0] == doctest::Approx(0.6));
}

TEST_CASE("fraction_subset") {
    const auto s = fraction_subset(100, 0.05, 3);
    CHECK(s.size() == 5);
    CHECK(std::is_sorted(s.begin(), s.end()));
    CHECK(s == fraction_subset(100, 0.05, 3));
    CHECK(fraction_subset(10, 0.01, 0).size() == 1);
    CHECK(fraction_subset(10, 1.0, 0).size() == 10);
}

TEST_CASE("train is seed-deterministic and records the subset") {
    const auto pairs = small_pairs(6, 1);
    TrainConfig tc;
    tc.steps = 2;
    tc.epochs = 2;
    tc.batch = 3;
    tc.seed = 4;
    CellConfig cc;
    cc.hidden_channels = {8, 4};
    cc.io_channels = 4;
    const auto a = train(tc, cc, pairs, {pairs[0]});
    const auto b = train(tc, cc, pairs, {pairs[0]});
    CHECK_FALSE(a.diverged);
    CHECK(a.params == b.params);
    REQUIRE(a.log.size() == 2);
    for (int e = 0; e < 2; ++e) {
        CHECK(a.log[e].train_loss == b.log[e].train_loss);
        CHECK(a.log[e].val_loss == b.log[e].val_loss);
    }
    CHECK(a.train_ids.size() == 6);
    tc.data_fraction = 0.5;
    CHECK(train(tc, cc, pairs, {}).train_ids.size() == 3);
}

TEST_CASE("training on identical pairs leaves the field near zero") {
    auto pairs = small_pairs(4, 2);
    for (auto& p : pairs) {
        p.fixed = p.mov;
        p.ground_truth = DisplacementField(p.mov.shape());
    }
    TrainConfig tc;
    tc.steps = 3;
    tc.epochs = 3;
    tc.batch = 2;
    CellConfig cc;
    cc.hidden_channels = {8, 4};
    cc.io_channels = 4;
    const auto r = train(tc, cc, pairs, pairs);
    REQUIRE(r.log.size() == 3);
    CHECK(std::abs(r.log.back().val_loss - r.log.front().val_loss) <= 0.05 * std::abs(r.log.front().val_loss) + 1e-12);
    const auto trace = recurrent_infer(cc, r.params, tc.inner, pairs[0].mov, pairs[0].fixed, tc.steps);
    CHECK(mean_magnitude(trace.final_disp) <= 0.5);
}

TEST_CASE("classical_register") {
    const GridShape s{32, 32};
    const Image img = smooth_image(s, 6, 3.0);
    const auto still = classical_register(img, img, SimilarityKind::mse(), 0.05, 50, 1.0);
    CHECK(still.final_disp == DisplacementField(s));

    // 2 px translation of a smooth blob.
    Image blob(s), moved(s);
    for (int r = 0; r < 32; ++r) {
        for (int c = 0; c < 32; ++c) {
            blob(r, c) = std::exp(-((r - 16.0) * (r - 16.0) + (c - 16.0) * (c - 16.0)) / 40.0);
            moved(r, c) = std::exp(-((r - 18.0) * (r - 18.0) + (c - 16.0) * (c - 16.0)) / 40.0);
        }
    }
    const auto t = classical_register(moved, blob, SimilarityKind::mse(), 0.05, 3000, 2.0);
    CHECK(t.final_inner <= 0.1 * mse(moved, blob));

    const auto free = classical_register(moved, blob, SimilarityKind::mse(), 0.0, 300, 1.0);
    const auto stiff = classical_register(moved, blob, SimilarityKind::mse(), 1e3, 300, 1e-4);
    CHECK(max_magnitude(stiff.final_disp) <= max_magnitude(free.final_disp));

    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const Image a = smooth_image(s, 40 + seed), b = smooth_image(s, 50 + seed);
        const auto tr = classical_register(a, b, SimilarityKind::mse(), 0.0, 20, 0.5);
        for (std::size_t k = 1; k < tr.steps.size(); ++k) CHECK(tr.steps[k].inner < tr.steps[k - 1].inner);
        CHECK(tr.final_inner < tr.steps.back().inner);
    }
}

TEST_CASE("evaluate_pairs rows") {
    const auto pairs = small_pairs(2, 3);
    const Registrar identity = [](const Image& mov, const Image& fixed) {
        return recurrent_infer([&](int, const DisplacementField&, const VectorField&) { return DisplacementField(mov.shape()); },
                               SimilarityKind::mse(), mov, fixed, 3);
    };
    const auto rows = evaluate_pairs(identity, SimilarityKind::mse(), pairs);
    int seen = 0;
    for (const auto& r : rows) {
        if (r.before && r.after) {
            CHECK(*r.before == doctest::Approx(*r.after).epsilon(1e-12));
            ++seen;
        }
    }
    CHECK(seen > 0);

    const Registrar oracle = [&](const Image& mov, const Image& fixed) {
        const auto& gt = *pairs[0].ground_truth;
        return recurrent_infer([&](int t, const DisplacementField&, const VectorField&) {
                                   return t == 0 ? gt : DisplacementField(mov.shape());
                               },
                               SimilarityKind::mse(), mov, fixed, 1);
    };
    for (const auto& r : evaluate_pairs(oracle, SimilarityKind::mse(), {pairs[0]})) {
        if (r.metric == "endpoint_error") CHECK(*r.after == 0.0);
    }

    RegistrationPair bare = pairs[0];
    bare.labels_mov.reset();
    bare.labels_fixed.reset();
    bool dice = false, epe = false;
    for (const auto& r : evaluate_pairs(identity, SimilarityKind::mse(), {bare})) {
        dice |= r.metric.rfind("dice", 0) == 0 || r.metric.rfind("hausdorff", 0) == 0;
        epe |= r.metric == "endpoint_error";
    }
    CHECK_FALSE(dice);
    CHECK(epe);
}

}
