#include "promptir/degrade.hpp"

#include "promptir/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace promptir {

namespace {

constexpr double kDegToRad = 0.017453292519943295;

void require_image(const Tensor& img, const char* op) {
    if (img.ndim() != 3 || img.dim(0) != 3) {
        throw std::invalid_argument(std::string(op) + ": expected [3,H,W] image, got " +
                                    shape_str(img.shape()));
    }
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

} // namespace

const char* degradation_kind_name(DegradationKind kind) {
    switch (kind) {
        case DegradationKind::kGaussianNoise: return "gaussian_noise";
        case DegradationKind::kSpatiallyVariantNoise: return "spatially_variant_noise";
        case DegradationKind::kRain: return "rain";
        case DegradationKind::kHaze: return "haze";
    }
    return "unknown";
}

DegradationKind degradation_kind_from_name(const std::string& name) {
    if (name == "gaussian_noise" || name == "gaussian" || name == "noise")
        return DegradationKind::kGaussianNoise;
    if (name == "spatially_variant_noise" || name == "spatially_variant")
        return DegradationKind::kSpatiallyVariantNoise;
    if (name == "rain") return DegradationKind::kRain;
    if (name == "haze") return DegradationKind::kHaze;
    throw std::invalid_argument("unknown degradation '" + name +
                                "' (expected gaussian|spatially_variant|rain|haze)");
}

void DegradationSpec::validate() const {
    if (sigma < 0.0) throw std::invalid_argument("degradation: sigma must be >= 0, got " + std::to_string(sigma));
    if (sigma_levels.empty()) throw std::invalid_argument("degradation: sigma_levels must be non-empty");
    for (double s : sigma_levels) {
        if (s < 0.0) throw std::invalid_argument("degradation: sigma_levels entries must be >= 0");
    }
    if (rain.num_streaks < 0) throw std::invalid_argument("degradation: num_streaks must be >= 0");
    if (rain.length <= 0.0) throw std::invalid_argument("degradation: rain length must be > 0");
    if (rain.intensity < 0.0 || rain.intensity > 1.0) {
        throw std::invalid_argument("degradation: rain intensity must be in [0,1], got " +
                                    std::to_string(rain.intensity));
    }
    if (rain.angle_min_deg > rain.angle_max_deg) {
        throw std::invalid_argument("degradation: rain angle range is inverted");
    }
    if (haze.atmospheric_light < 0.7 || haze.atmospheric_light > 1.0) {
        throw std::invalid_argument("degradation: atmospheric light must be in [0.7,1.0], got " +
                                    std::to_string(haze.atmospheric_light));
    }
    if (!(haze.t_min > 0.0 && haze.t_min <= 1.0 && haze.t_max > 0.0 && haze.t_max <= 1.0)) {
        throw std::invalid_argument("degradation: transmission bounds must be in (0,1]");
    }
    if (haze.t_min > haze.t_max) throw std::invalid_argument("degradation: t_min must be <= t_max");
}

Tensor add_gaussian_noise(const Tensor& img, double sigma, std::uint64_t seed) {
    require_image(img, "add_gaussian_noise");
    if (sigma < 0.0) throw std::invalid_argument("add_gaussian_noise: sigma must be >= 0");
    if (sigma == 0.0) return Tensor::from_data(img.shape(), {img.data().begin(), img.data().end()});
    Rng rng = Rng::stream(seed, 0x6e6f6973ull);
    const double s = sigma / 255.0;
    std::vector<double> out(img.data().begin(), img.data().end());
    for (double& v : out) v = clamp01(v + s * rng.normal());
    return Tensor::from_data(img.shape(), std::move(out));
}

VariantNoiseResult spatially_variant_noise(const Tensor& img, const std::vector<double>& sigma_levels,
                                           std::uint64_t seed) {
    require_image(img, "spatially_variant_noise");
    if (sigma_levels.empty()) throw std::invalid_argument("spatially_variant_noise: no sigma levels");
    const int h = img.dim(1), w = img.dim(2);

    // One level per 2x2 block quadrant; the assignment is a seeded
    // permutation (cycling when fewer than four levels are given).
    Rng rng = Rng::stream(seed, 0x76617269ull);
    std::array<int, 4> perm{0, 1, 2, 3};
    for (int i = 3; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)],
                                          perm[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
    std::array<double, 4> quad_sigma{};
    for (int q = 0; q < 4; ++q) {
        quad_sigma[static_cast<std::size_t>(q)] =
            sigma_levels[static_cast<std::size_t>(perm[static_cast<std::size_t>(q)]) % sigma_levels.size()];
    }

    std::vector<double> map(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int q = (y >= h / 2 ? 2 : 0) + (x >= w / 2 ? 1 : 0);
            map[static_cast<std::size_t>(y) * w + x] = quad_sigma[static_cast<std::size_t>(q)];
        }

    std::vector<double> out(img.data().begin(), img.data().end());
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double s = map[static_cast<std::size_t>(y) * w + x] / 255.0;
                const std::size_t i = (static_cast<std::size_t>(c) * h + y) * w + x;
                out[i] = clamp01(out[i] + s * rng.normal());
            }

    VariantNoiseResult r;
    r.noisy = Tensor::from_data(img.shape(), std::move(out));
    r.sigma_map = Tensor::from_data({1, h, w}, std::move(map));
    return r;
}

RainResult synth_rain(const Tensor& img, const RainSpec& spec, std::uint64_t seed) {
    require_image(img, "synth_rain");
    if (spec.intensity < 0.0 || spec.intensity > 1.0) {
        throw std::invalid_argument("synth_rain: intensity must be in [0,1]");
    }
    const int h = img.dim(1), w = img.dim(2);
    Rng rng = Rng::stream(seed, 0x7261696eull);
    std::vector<double> layer(static_cast<std::size_t>(h) * w, 0.0);

    // Anti-aliased segments, bilinear splats of 0.5 mass every half pixel,
    // so a streak deposits ~1.0 per unit length. Centers keep the whole
    // streak inside the frame when it fits.
    std::vector<RainStreak> streaks;
    const double half = spec.length / 2.0;
    for (int s = 0; s < spec.num_streaks; ++s) {
        const double margin = std::min({half + 1.0, h / 2.0, w / 2.0});
        const double cy = rng.uniform(margin, h - margin);
        const double cx = rng.uniform(margin, w - margin);
        const double ang = rng.uniform(spec.angle_min_deg, spec.angle_max_deg) * kDegToRad;
        streaks.push_back({cy, cx, ang, spec.length});
        const double dy = std::cos(ang), dx = std::sin(ang);
        const int steps = static_cast<int>(std::ceil(spec.length / 0.5));
        for (int i = 0; i <= steps; ++i) {
            const double t = -half + spec.length * i / steps;
            const double mass = 0.5 * (i == 0 || i == steps ? 0.5 : 1.0);
            const double py = cy + dy * t, px = cx + dx * t;
            const int y0 = static_cast<int>(std::floor(py)), x0 = static_cast<int>(std::floor(px));
            const double fy = py - y0, fx = px - x0;
            const double wgt[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
            const int yy[4] = {y0, y0, y0 + 1, y0 + 1};
            const int xx[4] = {x0, x0 + 1, x0, x0 + 1};
            for (int k = 0; k < 4; ++k) {
                if (yy[k] < 0 || yy[k] >= h || xx[k] < 0 || xx[k] >= w) continue;
                layer[static_cast<std::size_t>(yy[k]) * w + xx[k]] += mass * wgt[k];
            }
        }
    }
    for (double& v : layer) v = std::min(v, 1.0);

    std::vector<double> out(img.data().begin(), img.data().end());
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < layer.size(); ++i) {
            const std::size_t j = static_cast<std::size_t>(c) * layer.size() + i;
            out[j] = clamp01(out[j] + spec.intensity * layer[i]);
        }

    RainResult r;
    r.rainy = Tensor::from_data(img.shape(), std::move(out));
    r.streak_layer = Tensor::from_data({1, h, w}, std::move(layer));
    r.streaks = std::move(streaks);
    return r;
}

HazeResult synth_haze(const Tensor& img, const HazeSpec& spec, std::uint64_t seed) {
    require_image(img, "synth_haze");
    if (!(spec.t_min > 0.0 && spec.t_min <= spec.t_max && spec.t_max <= 1.0)) {
        throw std::invalid_argument("synth_haze: need 0 < t_min <= t_max <= 1");
    }
    const int h = img.dim(1), w = img.dim(2);
    Rng rng = Rng::stream(seed, 0x68617a65ull);

    // Smooth transmission field: 4x4 uniform grid upsampled bilinearly.
    std::vector<double> grid(16);
    for (double& v : grid) v = rng.uniform();
    Tensor t_small = Tensor::from_data({1, 1, 4, 4}, std::move(grid));
    NoGradGuard guard;
    Tensor t_big = bilinear_resize(t_small, h, w);
    std::vector<double> tmap(t_big.data().begin(), t_big.data().end());
    for (double& v : tmap) v = spec.t_min + (spec.t_max - spec.t_min) * v;

    const double a = spec.atmospheric_light;
    std::vector<double> out(img.data().begin(), img.data().end());
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < tmap.size(); ++i) {
            const std::size_t j = static_cast<std::size_t>(c) * tmap.size() + i;
            out[j] = clamp01(out[j] * tmap[i] + a * (1.0 - tmap[i]));
        }

    HazeResult r;
    r.hazy = Tensor::from_data(img.shape(), std::move(out));
    r.t_map = Tensor::from_data({1, h, w}, std::move(tmap));
    return r;
}

Tensor apply_degradation(const Tensor& img, const DegradationSpec& spec, std::uint64_t seed) {
    spec.validate();
    switch (spec.kind) {
        case DegradationKind::kGaussianNoise:
            return add_gaussian_noise(img, spec.sigma, seed);
        case DegradationKind::kSpatiallyVariantNoise:
            return spatially_variant_noise(img, spec.sigma_levels, seed).noisy;
        case DegradationKind::kRain:
            return synth_rain(img, spec.rain, seed).rainy;
        case DegradationKind::kHaze:
            return synth_haze(img, spec.haze, seed).hazy;
    }
    throw std::invalid_argument("apply_degradation: unknown kind");
}

Tensor make_clean_image(int height, int width, std::uint64_t seed) {
    if (height < 1 || width < 1) throw std::invalid_argument("make_clean_image: dims must be >= 1");
    Rng rng = Rng::stream(seed, 0x636c6561ull);
    std::vector<double> img(static_cast<std::size_t>(3) * height * width);

    // Gradient background between two random colors.
    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
        c0[c] = rng.uniform();
        c1[c] = rng.uniform();
    }
    const double ang = rng.uniform(0.0, 6.283185307179586477);
    const double gx = std::cos(ang), gy = std::sin(ang);
    const double diag = std::sqrt(static_cast<double>(height) * height + static_cast<double>(width) * width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double t = 0.5 + (gx * (x - width / 2.0) + gy * (y - height / 2.0)) / diag;
            for (int c = 0; c < 3; ++c)
                img[(static_cast<std::size_t>(c) * height + y) * width + x] = c0[c] + (c1[c] - c0[c]) * t;
        }

    // Soft rectangles.
    const int rects = 2 + rng.uniform_int(4);
    for (int r = 0; r < rects; ++r) {
        const int rw = 2 + rng.uniform_int(std::max(1, width / 2));
        const int rh = 2 + rng.uniform_int(std::max(1, height / 2));
        const int x0 = rng.uniform_int(std::max(1, width - rw));
        const int y0 = rng.uniform_int(std::max(1, height - rh));
        double col[3];
        for (int c = 0; c < 3; ++c) col[c] = rng.uniform();
        const double alpha = rng.uniform(0.4, 0.9);
        for (int y = y0; y < std::min(height, y0 + rh); ++y)
            for (int x = x0; x < std::min(width, x0 + rw); ++x)
                for (int c = 0; c < 3; ++c) {
                    double& v = img[(static_cast<std::size_t>(c) * height + y) * width + x];
                    v = (1 - alpha) * v + alpha * col[c];
                }
    }

    // Band-limited texture: low-resolution noise upsampled.
    const int gh = std::max(2, height / 8), gw = std::max(2, width / 8);
    std::vector<double> grid(static_cast<std::size_t>(gh) * gw);
    for (double& v : grid) v = rng.uniform(-1.0, 1.0);
    NoGradGuard guard;
    Tensor tex = bilinear_resize(Tensor::from_data({1, 1, gh, gw}, std::move(grid)), height, width);
    const double* tx = tex.data().data();
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < static_cast<std::size_t>(height) * width; ++i)
            img[static_cast<std::size_t>(c) * height * width + i] += 0.05 * tx[i];

    for (double& v : img) v = clamp01(v);
    return Tensor::from_data({3, height, width}, std::move(img));
}

std::vector<Sample> make_dataset(const std::vector<DegradationSpec>& mix, int count,
                                 const ImageSource& source, std::uint64_t seed) {
    if (mix.empty()) throw std::invalid_argument("make_dataset: task mix is empty");
    if (count < 1) throw std::invalid_argument("make_dataset: count must be >= 1");
    for (const auto& spec : mix) spec.validate();

    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const DegradationSpec& spec = mix[static_cast<std::size_t>(i) % mix.size()];
        const std::uint64_t sample_seed = Rng::stream(seed, static_cast<std::uint64_t>(i)).next_u64();
        Sample s;
        if (source.images.empty()) {
            s.clean = make_clean_image(source.height, source.width, sample_seed);
        } else {
            s.clean = source.images[static_cast<std::size_t>(i) % source.images.size()];
        }
        s.degraded = apply_degradation(s.clean, spec, sample_seed);
        s.task = degradation_kind_name(spec.kind);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace promptir
