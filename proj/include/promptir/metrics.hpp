#pragma once

#include "promptir/degrade.hpp"
#include "promptir/network.hpp"

#include <map>
#include <string>

namespace promptir {

// 10*log10(peak^2 / MSE); identical inputs (and anything above) cap at
// the 100 dB sentinel.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// Single-scale SSIM: 11x11 Gaussian window sigma 1.5, K1=0.01 K2=0.03,
// mean over valid window positions, channel-averaged. Needs dims >= 11.
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

struct TaskMetrics {
    double psnr_db = 0.0;
    double ssim = 0.0;
    int count = 0;
};

struct MetricReport {
    double psnr_db = 0.0;
    double ssim = 0.0;
    std::map<std::string, TaskMetrics> per_task;
    std::string to_table() const; // paper-style PSNR/SSIM cells
};

// Forward on full images (no cropping), aggregated per task and overall.
MetricReport evaluate(const PromptIRModel& model, const std::vector<Sample>& test_set);

// Same aggregation for the degraded inputs themselves (no model).
MetricReport evaluate_identity(const std::vector<Sample>& test_set);

} // namespace promptir
