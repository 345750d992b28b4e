#pragma once

#include <cstdint>
#include <vector>

#include "riir/data.hpp"
#include "riir/grid.hpp"

namespace riir {

struct PhantomSpec {
    GridShape shape{64, 64};
    double outer_radius = 18.0;
    double inner_radius = 13.0;
    double center_jitter = 3.0;
    double texture_amplitude = 0.5;
    double texture_sigma = 3.0;  // px, smoothing scale of the texture field
    double noise_sigma = 0.02;
    std::uint64_t seed = 0;
};

void validate(const PhantomSpec& spec);

struct MotionSpec {
    double amplitude = 3.0;  // px, max displacement magnitude
    double sigma = 8.0;      // px, Gaussian smoothing scale
    std::uint64_t seed = 0;
};

void validate(const MotionSpec& spec);

// Times in ms for one frame.
struct AcquisitionParams {
    double ts = 0.0;
    double te = 0.0;
    double td = 0.0;
};

struct SignalParams {
    double t1 = 1000.0;
    double t2 = 50.0;
    double a = 1.0;
};

struct SignalMaps {
    Plane<double> t1;
    Plane<double> t2;
    Plane<double> a;
};

struct Phantom {
    Image image;  // noiseless rendering, see phantom_reference_frame
    LabelMap labels;
    SignalMaps params;
};

inline constexpr std::uint16_t kBackgroundLabel = 0;
inline constexpr std::uint16_t kBloodPoolLabel = 1;
inline constexpr std::uint16_t kRingLabel = 2;

// Frame used to render Phantom::image: long saturation recovery, no T2 prep.
AcquisitionParams phantom_reference_frame();

// Region values before per-pixel texture.
SignalParams region_signal(std::uint16_t label);

// Concentric rings: background 0, blood pool 1, myocardium 2. Texture scales
// a smooth random field into A, T1 and T2; zero texture gives flat regions.
Phantom generate_phantom(const PhantomSpec& spec);

// Adds N(0, sigma^2) noise drawn from `seed`.
Image add_noise(const Image& img, double sigma, std::uint64_t seed);

// Separable Gaussian smoothing with clamped borders; kernel radius ceil(3 sigma).
Plane<double> gaussian_smooth(const Plane<double>& f, double sigma);

DisplacementField random_smooth_displacement(GridShape shape, const MotionSpec& motion);

// A {1 - [1 - (1 - exp(-TS/T1)) exp(-TE/T2)] exp(-TD/T1)}
double msasha_signal(const SignalParams& p, const AcquisitionParams& a);

Image render_frame(const SignalMaps& maps, const AcquisitionParams& a);

// N frames: TS log-spaced over [300, 10000] ms, TE cycling {0, 30, 60} ms,
// TD stepping over [0, 600] ms. The last frame is a long TS, TE = 0 frame.
std::vector<AcquisitionParams> default_schedule(int frames);

ImageSeries generate_series(const PhantomSpec& spec, const MotionSpec& motion,
                            const std::vector<AcquisitionParams>& schedule, const std::string& id = "series");

std::vector<ImageSeries> generate_series_dataset(int count, const PhantomSpec& spec, const MotionSpec& motion,
                                                 const std::vector<AcquisitionParams>& schedule);

// Pair i uses phantom and motion seeds derived from the base seeds and i.
std::vector<RegistrationPair> generate_pair_dataset(int count, const PhantomSpec& spec, const MotionSpec& motion);

// Percentile with linear interpolation between order statistics.
double percentile(std::vector<double> values, double pct);

Image clip_percentiles(const Image& img, double lo, double hi);

}  // namespace riir
