#pragma once

#include "promptir/rng.hpp"
#include "promptir/tensor.hpp"

#include <string>
#include <vector>

namespace promptir {

enum class DegradationKind { kGaussianNoise, kSpatiallyVariantNoise, kRain, kHaze };

const char* degradation_kind_name(DegradationKind kind);
DegradationKind degradation_kind_from_name(const std::string& name);

struct RainSpec {
    int num_streaks = 60;
    double length = 12.0; // px
    double angle_min_deg = -30.0, angle_max_deg = 30.0; // from vertical
    double intensity = 0.6;
};

struct HazeSpec {
    double atmospheric_light = 0.9; // A in [0.7, 1.0]
    double t_min = 0.4, t_max = 0.8;
};

struct DegradationSpec {
    DegradationKind kind = DegradationKind::kGaussianNoise;
    double sigma = 25.0;                           // 8-bit units
    std::vector<double> sigma_levels{0, 15, 25, 50}; // spatially-variant
    RainSpec rain;
    HazeSpec haze;
    std::uint64_t seed = 0;
    void validate() const;
};

// All generators are pure functions of (inputs, spec, seed). Images are
// [3,H,W] in [0,1]; outputs are clamped back into [0,1].
Tensor add_gaussian_noise(const Tensor& img, double sigma, std::uint64_t seed);

struct VariantNoiseResult {
    Tensor noisy;
    Tensor sigma_map; // [1,H,W], 8-bit units, one level per quadrant
};
VariantNoiseResult spatially_variant_noise(const Tensor& img, const std::vector<double>& sigma_levels,
                                           std::uint64_t seed);

struct RainStreak {
    double cy = 0, cx = 0;   // center
    double angle_rad = 0;    // from vertical
    double length = 0;
};

struct RainResult {
    Tensor rainy;
    Tensor streak_layer; // [1,H,W] in [0,1]
    std::vector<RainStreak> streaks; // rasterized geometry, for audits
};
RainResult synth_rain(const Tensor& img, const RainSpec& spec, std::uint64_t seed);

struct HazeResult {
    Tensor hazy;
    Tensor t_map; // [1,H,W] transmission in [t_min, t_max]
};
HazeResult synth_haze(const Tensor& img, const HazeSpec& spec, std::uint64_t seed);

Tensor apply_degradation(const Tensor& img, const DegradationSpec& spec, std::uint64_t seed);

// Procedural clean image: gradient background, soft rectangles, a little
// band-limited noise. No dataset download needed.
Tensor make_clean_image(int height, int width, std::uint64_t seed);

struct Sample {
    Tensor degraded;
    Tensor clean;
    std::string task; // label kept for evaluation only, never fed to the model
};

// Clean-image source: procedural canvas by default; when images is
// non-empty the generator cycles through them instead.
struct ImageSource {
    int height = 64, width = 64;
    std::vector<Tensor> images;
};

// Round-robin interleaving over the task mix; sample i uses mix[i % K]
// and the per-sample stream hash(seed, i).
std::vector<Sample> make_dataset(const std::vector<DegradationSpec>& mix, int count,
                                 const ImageSource& source, std::uint64_t seed);

} // namespace promptir
