#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "riir/diffable.hpp"
#include "riir/metrics.hpp"
#include "riir/net.hpp"
#include "riir/solver.hpp"

using namespace riir;
using namespace riir::test;

namespace {

template <typename T>
FeatureMap<T> random_map(int c, int h, int w, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    FeatureMap<T> m(c, h, w);
    for (auto& v : m.data) v = static_cast<T>(scale * rng.uniform(-1.0, 1.0));
    return m;
}

std::vector<double> flatten(const ParameterStore<double>& p) {
    std::vector<double> out;
    for (const auto& a : p.arrays()) out.insert(out.end(), a.data.begin(), a.data.end());
    return out;
}

ParameterStore<double> unflatten(const ParameterStore<double>& like, std::span<const double> x) {
    ParameterStore<double> p = like;
    std::size_t k = 0;
    for (auto& a : p.arrays())
        for (auto& v : a.data) v = x[k++];
    return p;
}

}  // namespace

TEST_SUITE("net") {

TEST_CASE("conv_gru_step with zero parameters halves the hidden state") {
    const int c = 3, cin = 2, k = 3;
    const std::vector<double> wx(static_cast<std::size_t>(c * cin * k * k), 0.0), wh(static_cast<std::size_t>(c * c * k * k), 0.0),
        b(c, 0.0);
    const GruWeights<double> w{wx, wh, b, wx, wh, b, wx, wh, b, c, k};
    const auto x = random_map<double>(cin, 5, 6, 1);
    const auto h = random_map<double>(c, 5, 6, 2);
    const auto out = conv_gru_step(x, h, w);
    for (std::size_t i = 0; i < h.data.size(); ++i) CHECK(out.data[i] == 0.5 * h.data[i]);

    const CellConfig cfg;
    const auto p = init_parameters<double>(cfg, 3);
    const std::vector<double> zb(static_cast<std::size_t>(cfg.hidden_channels[0]), 0.0);
    const GruWeights<double> rw{p[2].data, p[3].data, zb, p[5].data, p[6].data, zb, p[8].data, p[9].data, zb,
                                cfg.hidden_channels[0], 3};
    const auto zero = conv_gru_step(FeatureMap<double>(cfg.io_channels, 4, 4),
                                    FeatureMap<double>(cfg.hidden_channels[0], 4, 4), rw);
    for (double v : zero.data) CHECK(v == 0.0);
}

TEST_CASE("init_parameters is seeded and sized") {
    const CellConfig cfg;
    const auto a = init_parameters<float>(cfg, 1);
    CHECK(a == init_parameters<float>(cfg, 1));
    CHECK_FALSE(a == init_parameters<float>(cfg, 2));
    MESSAGE("default parameter count: ", a.total_count());
    CHECK(a.total_count() >= 30000);
    CHECK(a.total_count() <= 120000);
    const auto layout = parameter_layout(cfg);
    REQUIRE(layout.size() == a.size());
    for (std::size_t i = 0; i < layout.size(); ++i) CHECK(layout[i].name == a[i].name);
    CHECK(a.find("out_conv.weight") != nullptr);
    CHECK(a.find("missing") == nullptr);
}

TEST_CASE("assemble_input channel contents") {
    const GridShape s{8, 8};
    const Image img = random_image(s, 4);
    const DisplacementField zero(s);
    const auto grad = inner_loss_gradient(SimilarityKind::mse(), img, img, zero);
    const auto g = assemble_input<double>(InputMode::gradient, zero, img, img, grad);
    CHECK(g.channels == 4);
    for (int c = 2; c < 4; ++c)
        for (double v : g.channel(c)) CHECK(v == 0.0);
    const Image other = random_image(s, 5);
    const auto e = assemble_input<double>(InputMode::explicit_warp, zero, img, other, grad);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(e.channel(2)[i] == img[i]);
    const auto i1 = assemble_input<double>(InputMode::implicit, zero, img, other, grad);
    const auto i2 = assemble_input<double>(InputMode::implicit, random_field(s, 6, 2.0), img, other, grad);
    for (int c = 2; c < 4; ++c)
        for (std::size_t i = 0; i < img.size(); ++i) CHECK(i1.channel(c)[i] == i2.channel(c)[i]);
}

TEST_CASE("riir_cell_forward contracts") {
    const GridShape s{12, 12};
    const Image mov = random_image(s, 7), fixed = random_image(s, 8);
    const DisplacementField u = random_field(s, 9, 1.0);
    const auto grad = inner_loss_gradient(SimilarityKind::mse(), mov, fixed, u);
    CellConfig cfg;
    auto p = init_parameters<double>(cfg, 10);
    const auto h0 = HiddenState<double>::zeros(cfg, s);

    const auto a = riir_cell_forward(cfg, p, u, mov, fixed, grad, h0);
    const auto b = riir_cell_forward(cfg, p, u, mov, fixed, grad, h0);
    CHECK(a.delta == b.delta);
    CHECK(a.hidden == b.hidden);

    for (const char* name : {"out_conv.weight", "out_conv.bias"}) {
        for (auto& arr : p.arrays())
            if (arr.name == name) std::fill(arr.data.begin(), arr.data.end(), 0.0);
    }
    const auto z = riir_cell_forward(cfg, p, u, mov, fixed, grad, h0);
    for (double v : z.delta.data) CHECK(v == 0.0);

    CellConfig off = cfg;
    off.hidden_enabled = {false, false};
    const auto po = init_parameters<double>(off, 11);
    const auto o = riir_cell_forward(off, po, u, mov, fixed, grad, a.hidden);
    for (double v : o.hidden.h1.data) CHECK(v == 0.0);
    for (double v : o.hidden.h2.data) CHECK(v == 0.0);
    CHECK(po.total_count() < p.total_count());
}

TEST_CASE("initial model stays near identity") {
    const GridShape s{32, 32};
    const Image mov = smooth_image(s, 12), fixed = smooth_image(s, 13);
    const CellConfig cfg;
    const auto p = init_parameters<float>(cfg, 0);
    const auto trace = recurrent_infer(cfg, p, SimilarityKind::mse(), mov, fixed, 6);
    CHECK(max_magnitude(trace.final_disp) <= 1e-2);
}

TEST_CASE("cell is translation equivariant away from the border") {
    const CellConfig cfg;
    const auto p = init_parameters<double>(cfg, 14);
    const int big = 30, win = 20, dr = 2, dc = 3;
    const auto field = random_map<double>(4, big, big, 15);
    const auto h = random_map<double>(cfg.hidden_channels[0], big, big, 16, 0.5);
    const auto h2 = random_map<double>(cfg.hidden_channels[1], big, big, 17, 0.5);
    auto crop = [&](const FeatureMap<double>& m, int r0, int c0) {
        FeatureMap<double> out(m.channels, win, win);
        for (int c = 0; c < m.channels; ++c)
            for (int r = 0; r < win; ++r)
                for (int q = 0; q < win; ++q) out.at(c, r, q) = m.at(c, r0 + r, c0 + q);
        return out;
    };
    const RiirCell<double> cell(cfg, p);
    const auto a = cell.forward(crop(field, 0, 0), {crop(h, 0, 0), crop(h2, 0, 0)});
    const auto b = cell.forward(crop(field, dr, dc), {crop(h, dr, dc), crop(h2, dr, dc)});
    const int margin = 6;  // receptive-field radius of the cell plus one
    double worst = 0.0;
    for (int c = 0; c < 2; ++c)
        for (int r = margin + dr; r < win - margin; ++r)
            for (int q = margin + dc; q < win - margin; ++q)
                worst = std::max(worst, std::abs(a.delta.at(c, r, q) - b.delta.at(c, r - dr, q - dc)));
    CHECK(worst <= 1e-4);
}

TEST_CASE("BPTT parameter gradients pass finite differences on a small cell") {
    CellConfig cfg;
    cfg.hidden_channels = {4, 3};
    cfg.io_channels = 3;
    const GridShape s{10, 10};
    const Image mov = smooth_image(s, 18, 1.5), fixed = smooth_image(s, 19, 1.5);
    auto p = init_parameters<double>(cfg, 20);
    for (auto& a : p.arrays())
        if (a.name.rfind("out_conv", 0) == 0)
            for (auto& v : a.data) v *= 300.0;
    for (const auto& inner : {SimilarityKind::mse(), SimilarityKind::ncc(5)}) {
        TrainConfig tc;
        tc.steps = 2;
        tc.inner = inner;
        tc.outer = inner;
        std::vector<VectorField> frozen;
        outer_loss_gradient<double>(cfg, p, tc, mov, fixed, nullptr, &frozen);
        DifferentiableFunction fn{
            [&](std::span<const double> x) { return pair_outer_loss<double>(cfg, unflatten(p, x), tc, mov, fixed, &frozen); },
            [&](std::span<const double> x) {
                return flatten(outer_loss_gradient<double>(cfg, unflatten(p, x), tc, mov, fixed, &frozen).grads);
            }};
        const auto rep = check_gradient("bptt", fn, flatten(p), 1e-6, 1e-5, 300, 1);
        INFO(to_string(inner.type), " rel ", rep.relative_l2_error, " max ", rep.max_relative_error);
        CHECK(rep.pass);
    }
}

}
