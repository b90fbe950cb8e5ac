#include "promptir/metrics.hpp"

#include "promptir/ops.hpp"

#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace promptir {

double psnr(const Tensor& a, const Tensor& b, double peak) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("psnr: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
    if (peak <= 0.0) throw std::invalid_argument("psnr: peak must be > 0");
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double mse = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const double d = pa[i] - pb[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(size) * size);
    const int half = size / 2;
    double total = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double dy = y - half, dx = x - half;
            const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            w[static_cast<std::size_t>(y) * size + x] = v;
            total += v;
        }
    for (double& v : w) v /= total;
    return w;
}

double ssim_plane(const double* a, const double* b, int h, int w, double c1, double c2) {
    static const std::vector<double> win = gaussian_window(11, 1.5);
    const int k = 11;
    double acc = 0.0;
    std::int64_t n = 0;
    for (int y = 0; y + k <= h; ++y) {
        for (int x = 0; x + k <= w; ++x) {
            double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
            for (int wy = 0; wy < k; ++wy)
                for (int wx = 0; wx < k; ++wx) {
                    const double wv = win[static_cast<std::size_t>(wy) * k + wx];
                    const double va = a[static_cast<std::int64_t>(y + wy) * w + (x + wx)];
                    const double vb = b[static_cast<std::int64_t>(y + wy) * w + (x + wx)];
                    mu_a += wv * va;
                    mu_b += wv * vb;
                    aa += wv * va * va;
                    bb += wv * vb * vb;
                    ab += wv * va * vb;
                }
            const double var_a = aa - mu_a * mu_a;
            const double var_b = bb - mu_b * mu_b;
            const double cov = ab - mu_a * mu_b;
            acc += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                   ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            ++n;
        }
    }
    return acc / static_cast<double>(n);
}

} // namespace

double ssim(const Tensor& a, const Tensor& b, double peak) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("ssim: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
    int channels, h, w;
    if (a.ndim() == 3) {
        channels = a.dim(0);
        h = a.dim(1);
        w = a.dim(2);
    } else if (a.ndim() == 2) {
        channels = 1;
        h = a.dim(0);
        w = a.dim(1);
    } else {
        throw std::invalid_argument("ssim: expected [C,H,W] or [H,W], got " + shape_str(a.shape()));
    }
    if (h < 11 || w < 11) {
        throw std::invalid_argument("ssim: images must be at least 11x11, got " + std::to_string(h) +
                                    "x" + std::to_string(w));
    }
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
        acc += ssim_plane(a.data().data() + static_cast<std::int64_t>(c) * h * w,
                          b.data().data() + static_cast<std::int64_t>(c) * h * w, h, w, c1, c2);
    }
    return acc / channels;
}

std::string MetricReport::to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(26) << "task" << std::setw(16) << "PSNR/SSIM"
       << "images\n";
    auto cell = [](double p, double s) {
        std::ostringstream c;
        c << std::fixed << std::setprecision(2) << p << "/" << std::setprecision(3) << s;
        return c.str();
    };
    for (const auto& [task, m] : per_task) {
        os << std::left << std::setw(26) << task << std::setw(16) << cell(m.psnr_db, m.ssim)
           << m.count << "\n";
    }
    int total = 0;
    for (const auto& [task, m] : per_task) total += m.count;
    os << std::left << std::setw(26) << "average" << std::setw(16) << cell(psnr_db, ssim) << total
       << "\n";
    return os.str();
}

namespace {

MetricReport aggregate(const std::vector<Sample>& set,
                       const std::function<Tensor(const Sample&)>& restore) {
    if (set.empty()) throw std::invalid_argument("evaluate: empty test set");
    MetricReport report;
    for (const auto& sample : set) {
        Tensor out = restore(sample);
        const double p = psnr(out, sample.clean);
        const double s = ssim(out, sample.clean);
        auto& tm = report.per_task[sample.task];
        tm.psnr_db += p;
        tm.ssim += s;
        tm.count += 1;
        report.psnr_db += p;
        report.ssim += s;
    }
    report.psnr_db /= static_cast<double>(set.size());
    report.ssim /= static_cast<double>(set.size());
    for (auto& [task, m] : report.per_task) {
        m.psnr_db /= m.count;
        m.ssim /= m.count;
    }
    return report;
}

} // namespace

MetricReport evaluate(const PromptIRModel& model, const std::vector<Sample>& test_set) {
    NoGradGuard guard;
    return aggregate(test_set, [&model](const Sample& s) {
        const auto& sh = s.degraded.shape();
        Tensor batch = reshape(s.degraded, {1, sh[0], sh[1], sh[2]});
        return reshape(model.forward(batch), {sh[0], sh[1], sh[2]});
    });
}

MetricReport evaluate_identity(const std::vector<Sample>& test_set) {
    return aggregate(test_set, [](const Sample& s) { return s.degraded; });
}

} // namespace promptir
