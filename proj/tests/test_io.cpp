#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>

#include "helpers.hpp"
#include "riir/errors.hpp"
#include "riir/io.hpp"
#include "riir/solver.hpp"

using namespace riir;
using namespace riir::test;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("riir_io_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

FormatError::Kind decode_kind(std::string_view bytes) {
    try {
        decode_array(bytes);
    } catch (const FormatError& e) {
        return e.kind();
    }
    FAIL("decode_array accepted corrupt input");
    return FormatError::Kind::malformed;
}

Checkpoint small_checkpoint() {
    Checkpoint ck;
    ck.cell.hidden_channels = {6, 4};
    ck.cell.io_channels = 4;
    ck.train.steps = 3;
    ck.train.seed = 42;
    ck.params = init_parameters<float>(ck.cell, 5);
    ck.log_tail = {{1, 0.5, 0.25, 3.0}, {2, 0.4, NAN, 2.0}};
    return ck;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("array round-trips are bit-exact for every dtype") {
    const ArrayFile f32{{2, 2}, "img", std::vector<float>{1.5f, -0.0f, 3e-38f, 7.25f}};
    CHECK(decode_array(encode_array(f32)) == f32);
    const ArrayFile f64{{3}, "x", std::vector<double>{std::numbers::pi, -1e300, 5e-324}};
    const ArrayFile back = decode_array(encode_array(f64));
    CHECK(std::memcmp(std::get<std::vector<double>>(back.values).data(),
                      std::get<std::vector<double>>(f64.values).data(), 3 * sizeof(double)) == 0);
    const ArrayFile u16{{2, 3}, "labels", std::vector<std::uint16_t>{0, 1, 2, 65535, 4, 5}};
    CHECK(decode_array(encode_array(u16)) == u16);
    CHECK(encode_array(f32).substr(0, 5) == "RIIR1");

    const fs::path dir = scratch("arrays");
    write_array(dir / "a.riir", f32);
    CHECK(read_array(dir / "a.riir") == f32);
}

TEST_CASE("array decoding errors") {
    const std::string good = encode_array({{2, 2}, "t", std::vector<float>{1, 2, 3, 4}});
    CHECK(decode_kind(good.substr(0, good.size() - 3)) == FormatError::Kind::truncated_payload);
    CHECK(decode_kind(good.substr(0, 7)) == FormatError::Kind::truncated_payload);
    std::string magic = good;
    magic[0] = 'X';
    CHECK(decode_kind(magic) == FormatError::Kind::bad_magic);
    std::string flipped = good;
    flipped.back() ^= 0x01;
    CHECK(decode_kind(flipped) == FormatError::Kind::checksum_mismatch);
    CHECK(decode_kind(good + "x") == FormatError::Kind::malformed);
}

TEST_CASE("image, field and label conversions") {
    const Image img = random_image({5, 7}, 1);
    CHECK(array_to_image(decode_array(encode_array(image_to_array(img)))) == img);
    const DisplacementField u = random_field({5, 7}, 2, 3.0);
    const ArrayFile fa = field_to_array(u);
    CHECK(fa.shape == std::vector<int>{2, 5, 7});
    CHECK(array_to_field(fa) == u);
    LabelMap l({3, 3});
    l(1, 1) = 2;
    CHECK(array_to_labels(labels_to_array(l)) == l);
    CHECK_THROWS_AS(array_to_field(image_to_array(img)), FormatError);
}

TEST_CASE("checkpoint round-trip gives identical traces") {
    const Checkpoint ck = small_checkpoint();
    const fs::path dir = scratch("ckpt");
    save_checkpoint(dir / "m.ckpt", ck);
    const Checkpoint back = load_checkpoint(dir / "m.ckpt");
    CHECK(back.params == ck.params);
    CHECK(back.cell == ck.cell);
    CHECK(back.train.steps == 3);
    CHECK(back.train.seed == 42);
    REQUIRE(back.log_tail.size() == 2);
    CHECK(std::isnan(back.log_tail[1].val_loss));
    CHECK(encode_checkpoint(back) == encode_checkpoint(ck));

    const Image mov = smooth_image({16, 16}, 3), fixed = smooth_image({16, 16}, 4);
    const auto a = recurrent_infer(ck.cell, ck.params, ck.train.inner, mov, fixed, 3);
    const auto b = recurrent_infer(back.cell, back.params, back.train.inner, mov, fixed, 3);
    CHECK(a.final_disp == b.final_disp);
    for (std::size_t t = 0; t < a.steps.size(); ++t) CHECK(a.steps[t].inner == b.steps[t].inner);
}

TEST_CASE("checkpoint corruption is refused") {
    const std::string bytes = encode_checkpoint(small_checkpoint());
    std::string bad = bytes;
    bad[bad.size() / 2] ^= 0x10;
    try {
        decode_checkpoint(bad);
        FAIL("corrupted checkpoint accepted");
    } catch (const FormatError& e) {
        CHECK(e.kind() == FormatError::Kind::checksum_mismatch);
    }

    Checkpoint mismatch = small_checkpoint();
    mismatch.cell.hidden_enabled = {false, true};
    try {
        decode_checkpoint(encode_checkpoint(mismatch));
        FAIL("mismatched checkpoint accepted");
    } catch (const FormatError& e) {
        CHECK(e.kind() == FormatError::Kind::malformed);
        CHECK(std::string(e.what()).find("configuration mismatch") != std::string::npos);
    }

    Checkpoint future = small_checkpoint();
    future.version = 99;
    try {
        decode_checkpoint(encode_checkpoint(future));
        FAIL("future version accepted");
    } catch (const FormatError& e) {
        CHECK(e.kind() == FormatError::Kind::version_mismatch);
    }
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/riir.ckpt"), DataError);
}

TEST_CASE("parse_config") {
    const RunConfig d = parse_config("");
    CHECK(d.train.steps == 6);
    CHECK(d.train.learning_rate == doctest::Approx(8e-4));
    CHECK(d.train.weights == WeightScheme::exponential);
    CHECK(d.cell.hidden_enabled == std::array<bool, 2>{true, true});

    const RunConfig c = parse_config("# comment\nhidden1 = false\nsteps = 4  # trailing\ninner_sim = ncc\n"
                                     "weight_scheme = uniform\nlambda = 0.2\ninput_mode = explicit\n");
    CHECK(c.cell.hidden_enabled == std::array<bool, 2>{false, true});
    CHECK(c.train.steps == 4);
    CHECK(c.train.inner.type == SimilarityType::ncc);
    CHECK(c.train.weights == WeightScheme::uniform);
    CHECK(*c.train.lambda == 0.2);
    CHECK(c.cell.input_mode == InputMode::explicit_warp);

    CHECK_THROWS_AS(parse_config("steps = -1"), ConfigError);
    CHECK_THROWS_AS(parse_config("steps = 2\nsteps = 3"), ConfigError);
    CHECK_THROWS_AS(parse_config("colour = blue"), ConfigError);
    CHECK_THROWS_AS(parse_config("lr = fast"), ConfigError);
    CHECK_THROWS_AS(parse_config("just words"), ConfigError);
    try {
        parse_config("steps = 2\n\nbogus = 1\n");
    } catch (const ConfigError& e) {
        CHECK(e.line() == 3);
    }

    const RunConfig round = parse_config(format_config(c));
    CHECK(round.cell == c.cell);
    CHECK(round.train.steps == c.train.steps);
    CHECK(round.train.inner == c.train.inner);
    CHECK(*round.train.lambda == *c.train.lambda);
}

TEST_CASE("metrics report format") {
    const std::vector<MetricsRow> one{{"pair_0000", "dice", 0.5, 0.75, std::nullopt}};
    const std::string text = format_metrics_report(one);
    CHECK(text == "id,metric,before,after,step\npair_0000,dice,0.5,0.75,\n");

    const std::vector<MetricsRow> rows{{"a", "endpoint_error", 1.2345678, 0.1234567, std::nullopt},
                                       {"a", "inner_loss_step", std::nullopt, 0.001, 3},
                                       {"b", "hausdorff_myocardium", 2.0, std::nullopt, std::nullopt}};
    const fs::path dir = scratch("report");
    write_metrics_report(rows, dir / "r.csv");
    const auto back = read_metrics_report(dir / "r.csv");
    REQUIRE(back.size() == 3);
    CHECK(*back[0].before == doctest::Approx(1.2345678).epsilon(1e-6));
    CHECK(*back[0].after == doctest::Approx(0.1234567).epsilon(1e-6));
    CHECK(*back[1].step == 3);
    CHECK_FALSE(back[1].before.has_value());
    CHECK_FALSE(back[2].after.has_value());
    CHECK(format_metrics_report(back) == format_metrics_report(rows));
}

TEST_CASE("pair and series directories round-trip") {
    PhantomSpec ps;
    ps.shape = {20, 20};
    ps.outer_radius = 7;
    ps.inner_radius = 4;
    const auto pair = generate_pair_dataset(1, ps, {2.0, 4.0, 1}).front();
    const fs::path dir = scratch("pairs");
    save_pair(dir / pair.id, pair);
    const auto p = load_pair(dir / pair.id);
    CHECK(p.mov == pair.mov);
    CHECK(p.fixed == pair.fixed);
    CHECK(*p.labels_mov == *pair.labels_mov);
    CHECK(*p.ground_truth == *pair.ground_truth);

    const auto s = generate_series(ps, {2.0, 4.0, 2}, default_schedule(4), "series_0000");
    save_series(dir / s.id, s);
    const auto t = load_series(dir / s.id);
    CHECK(t.frames == s.frames);
    CHECK(t.reference == s.reference);
    CHECK(t.ground_truth == s.ground_truth);
    CHECK(*t.labels == *s.labels);

    write_pgm(dir / "img.pgm", pair.mov);
    const std::string pgm = read_file(dir / "img.pgm");
    CHECK(pgm.rfind("P5\n20 20\n255\n", 0) == 0);
    CHECK(pgm.size() == std::string("P5\n20 20\n255\n").size() + 400);
    CHECK_THROWS_AS(load_pair(dir / "missing"), DataError);
}

}
