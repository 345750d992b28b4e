#include "riir/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "riir/errors.hpp"
#include "riir/field.hpp"
#include "riir/random.hpp"

namespace riir {

namespace {

Plane<double> white_noise(GridShape shape, Rng& rng) {
    Plane<double> f(shape);
    for (double& v : f.values()) v = rng.normal();
    return f;
}

// Smoothed white noise drawn on a domain padded by the kernel radius, then
// cropped, so the border statistics match the interior.
Plane<double> smooth_noise(GridShape shape, double sigma, Rng& rng) {
    const int pad = static_cast<int>(std::ceil(3.0 * sigma));
    const GridShape big{shape.height + 2 * pad, shape.width + 2 * pad};
    const Plane<double> f = gaussian_smooth(white_noise(big, rng), sigma);
    Plane<double> out(shape);
    for (int r = 0; r < shape.height; ++r)
        for (int c = 0; c < shape.width; ++c) out(r, c) = f(r + pad, c + pad);
    return out;
}

// Smooth field scaled to max |value| = 1 (zero if degenerate).
Plane<double> unit_smooth_noise(GridShape shape, double sigma, Rng& rng) {
    Plane<double> f = smooth_noise(shape, sigma, rng);
    double m = 0.0;
    for (double v : f.values()) m = std::max(m, std::abs(v));
    if (m > 0.0)
        for (double& v : f.values()) v /= m;
    return f;
}

}  // namespace

void validate(const PhantomSpec& spec) {
    validate(spec.shape);
    const double limit = std::min(spec.shape.height, spec.shape.width) / 2.0;
    if (!(spec.inner_radius > 0.0 && spec.inner_radius < spec.outer_radius && spec.outer_radius < limit)) {
        throw std::invalid_argument("phantom radii must satisfy 0 < inner < outer < min(H,W)/2");
    }
    if (!(spec.center_jitter >= 0.0)) throw std::invalid_argument("center jitter must be >= 0");
    if (!(spec.texture_amplitude >= 0.0 && spec.texture_amplitude < 1.0)) {
        throw std::invalid_argument("texture amplitude must be in [0, 1)");
    }
    if (!(spec.texture_sigma > 0.0)) throw std::invalid_argument("texture sigma must be > 0");
    if (!(spec.noise_sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
}

void validate(const MotionSpec& spec) {
    if (!(spec.amplitude >= 0.0)) throw std::invalid_argument("motion amplitude must be >= 0");
    if (!(spec.sigma > 0.0)) throw std::invalid_argument("motion sigma must be > 0");
}

AcquisitionParams phantom_reference_frame() { return {10000.0, 0.0, 0.0}; }

SignalParams region_signal(std::uint16_t label) {
    switch (label) {
        case kBloodPoolLabel:
            return {1600.0, 250.0, 1.0};
        case kRingLabel:
            return {1100.0, 45.0, 0.7};
        default:
            return {800.0, 40.0, 0.45};
    }
}

Plane<double> gaussian_smooth(const Plane<double>& f, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_smooth: sigma must be > 0");
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * i * i / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    const int h = f.height();
    const int w = f.width();
    Plane<double> tmp(f.shape());
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                acc += k[static_cast<std::size_t>(i + radius)] * f(r, std::clamp(c + i, 0, w - 1));
            }
            tmp(r, c) = acc;
        }
    }
    Plane<double> out(f.shape());
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                acc += k[static_cast<std::size_t>(i + radius)] * tmp(std::clamp(r + i, 0, h - 1), c);
            }
            out(r, c) = acc;
        }
    }
    return out;
}

Phantom generate_phantom(const PhantomSpec& spec) {
    validate(spec);
    Rng rng(derive_seed(spec.seed, 0x9a47));
    const GridShape s = spec.shape;
    const double cr = (s.height - 1) / 2.0 + rng.uniform(-spec.center_jitter, spec.center_jitter);
    const double cc = (s.width - 1) / 2.0 + rng.uniform(-spec.center_jitter, spec.center_jitter);
    const Plane<double> n_a = unit_smooth_noise(s, spec.texture_sigma, rng);
    const Plane<double> n_t1 = unit_smooth_noise(s, spec.texture_sigma, rng);
    const Plane<double> n_t2 = unit_smooth_noise(s, spec.texture_sigma, rng);

    Phantom p{Image(s), LabelMap(s), {Plane<double>(s), Plane<double>(s), Plane<double>(s)}};
    const double amp = spec.texture_amplitude;
    for (int r = 0; r < s.height; ++r) {
        for (int c = 0; c < s.width; ++c) {
            const double d = std::hypot(r - cr, c - cc);
            std::uint16_t label = kBackgroundLabel;
            if (d < spec.inner_radius) {
                label = kBloodPoolLabel;
            } else if (d < spec.outer_radius) {
                label = kRingLabel;
            }
            const SignalParams base = region_signal(label);
            p.labels(r, c) = label;
            p.params.a(r, c) = base.a * (1.0 + amp * n_a(r, c));
            p.params.t1(r, c) = base.t1 * (1.0 + 0.5 * amp * n_t1(r, c));
            p.params.t2(r, c) = base.t2 * (1.0 + 0.5 * amp * n_t2(r, c));
        }
    }
    p.image = render_frame(p.params, phantom_reference_frame());
    return p;
}

Image add_noise(const Image& img, double sigma, std::uint64_t seed) {
    Image out = img;
    if (sigma == 0.0) return out;
    Rng rng(seed);
    for (double& v : out.values()) v += sigma * rng.normal();
    return out;
}

DisplacementField random_smooth_displacement(GridShape shape, const MotionSpec& motion) {
    validate(shape);
    validate(motion);
    DisplacementField u{Plane<double>(shape), Plane<double>(shape)};
    if (motion.amplitude == 0.0) return u;
    Rng rng(derive_seed(motion.seed, 0x30710));
    u.row = smooth_noise(shape, motion.sigma, rng);
    u.col = smooth_noise(shape, motion.sigma, rng);
    const double m = max_magnitude(u);
    if (m == 0.0) return u;
    return (motion.amplitude / m) * u;
}

double msasha_signal(const SignalParams& p, const AcquisitionParams& a) {
    if (!(p.t1 > 0.0) || !(p.t2 > 0.0)) throw std::invalid_argument("msasha_signal: T1 and T2 must be positive");
    const double sat = 1.0 - std::exp(-a.ts / p.t1);
    const double prep = 1.0 - sat * std::exp(-a.te / p.t2);
    return p.a * (1.0 - prep * std::exp(-a.td / p.t1));
}

Image render_frame(const SignalMaps& maps, const AcquisitionParams& a) {
    Image out(maps.a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = msasha_signal({maps.t1[i], maps.t2[i], maps.a[i]}, a);
    return out;
}

std::vector<AcquisitionParams> default_schedule(int frames) {
    if (frames < 2) throw std::invalid_argument("a series needs at least 2 frames");
    std::vector<AcquisitionParams> out;
    const double te_cycle[3] = {0.0, 30.0, 60.0};
    for (int k = 0; k < frames - 1; ++k) {
        const double f = frames > 2 ? static_cast<double>(k) / (frames - 2) : 0.0;
        AcquisitionParams a;
        a.ts = 300.0 * std::pow(10000.0 / 300.0, f);
        a.te = te_cycle[k % 3];
        a.td = 600.0 * static_cast<double>(k % 4) / 3.0;
        out.push_back(a);
    }
    out.push_back({10000.0, 0.0, 0.0});
    return out;
}

ImageSeries generate_series(const PhantomSpec& spec, const MotionSpec& motion,
                            const std::vector<AcquisitionParams>& schedule, const std::string& id) {
    if (schedule.size() < 2) throw std::invalid_argument("a series needs at least 2 frames");
    const Phantom ph = generate_phantom(spec);
    ImageSeries s;
    s.id = id;
    s.labels = ph.labels;
    const std::size_t n = schedule.size();
    for (std::size_t k = 0; k < n; ++k) {
        const Image clean = render_frame(ph.params, schedule[k]);
        const std::uint64_t noise_seed = derive_seed(spec.seed, 0x7000 + k);
        DisplacementField gt{Plane<double>(spec.shape), Plane<double>(spec.shape)};
        Image moved = clean;
        if (k + 1 < n) {
            MotionSpec m = motion;
            m.seed = derive_seed(motion.seed, k);
            gt = random_smooth_displacement(spec.shape, m);
            if (m.amplitude > 0.0) moved = warp_image(clean, invert_displacement(gt));
        }
        s.frames.push_back(clip_percentiles(add_noise(moved, spec.noise_sigma, noise_seed), 1.0, 95.0));
        s.reference.push_back(clip_percentiles(add_noise(clean, spec.noise_sigma, noise_seed), 1.0, 95.0));
        s.ground_truth.push_back(std::move(gt));
    }
    return s;
}

std::vector<ImageSeries> generate_series_dataset(int count, const PhantomSpec& spec, const MotionSpec& motion,
                                                 const std::vector<AcquisitionParams>& schedule) {
    if (count < 1) throw std::invalid_argument("series count must be >= 1");
    std::vector<ImageSeries> out;
    for (int i = 0; i < count; ++i) {
        PhantomSpec ps = spec;
        ps.seed = derive_seed(spec.seed, 0x10000 + static_cast<std::uint64_t>(i));
        MotionSpec ms = motion;
        ms.seed = derive_seed(motion.seed, 0x20000 + static_cast<std::uint64_t>(i));
        char id[32];
        std::snprintf(id, sizeof id, "series_%04d", i);
        out.push_back(generate_series(ps, ms, schedule, id));
    }
    return out;
}

std::vector<RegistrationPair> generate_pair_dataset(int count, const PhantomSpec& spec, const MotionSpec& motion) {
    if (count < 1) throw std::invalid_argument("pair count must be >= 1");
    validate(spec);
    validate(motion);
    std::vector<RegistrationPair> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const auto idx = static_cast<std::uint64_t>(i);
        PhantomSpec ps = spec;
        ps.seed = derive_seed(spec.seed, 0x30000 + idx);
        MotionSpec ms = motion;
        ms.seed = derive_seed(motion.seed, 0x40000 + idx);
        const Phantom ph = generate_phantom(ps);
        const DisplacementField gt = random_smooth_displacement(spec.shape, ms);
        RegistrationPair p;
        char id[32];
        std::snprintf(id, sizeof id, "pair_%04d", i);
        p.id = id;
        p.mov = clip_percentiles(add_noise(ph.image, spec.noise_sigma, derive_seed(ps.seed, 1)), 1.0, 99.0);
        p.fixed = clip_percentiles(add_noise(warp_image(ph.image, gt), spec.noise_sigma, derive_seed(ps.seed, 2)),
                                   1.0, 99.0);
        p.labels_mov = ph.labels;
        p.labels_fixed = warp_labels(ph.labels, gt);
        p.ground_truth = gt;
        out.push_back(std::move(p));
    }
    return out;
}

double percentile(std::vector<double> values, double pct) {
    if (values.empty()) throw std::invalid_argument("percentile of an empty set");
    if (!(pct >= 0.0 && pct <= 100.0)) throw std::invalid_argument("percentile must be in [0, 100]");
    std::sort(values.begin(), values.end());
    const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

Image clip_percentiles(const Image& img, double lo, double hi) {
    if (!(lo >= 0.0 && lo < hi && hi <= 100.0)) {
        throw std::invalid_argument("clip_percentiles: require 0 <= lo < hi <= 100");
    }
    const double vlo = percentile(img.values(), lo);
    const double vhi = percentile(img.values(), hi);
    Image out = img;
    for (double& v : out.values()) v = std::clamp(v, vlo, vhi);
    return out;
}

}  // namespace riir
