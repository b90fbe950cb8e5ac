#pragma once

#include "promptir/degrade.hpp"
#include "promptir/network.hpp"

#include <map>
#include <string>
#include <vector>

namespace promptir {

struct TrainConfig {
    int batch_size = 8;
    int patch_size = 32;
    double lr = 2e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int steps = 2000;
    std::uint64_t seed = 0;
    bool augment = true;
    int checkpoint_every = 1000;
    int eval_every = 250;

    // Synthetic dataset recipe (regenerated deterministically on resume).
    std::string tasks = "gaussian,rain,haze";
    double sigma = 25.0;
    int samples_per_task = 200;
    int image_size = 64;

    void validate() const;
};

std::vector<std::pair<std::string, std::string>> train_config_to_kv(const TrainConfig& cfg);
TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv);

// Bias-corrected Adam. m/v follow ParamStore order.
struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::int64_t t = 0;
    void init(const ParamStore& params);
};

// Applies one update from the accumulated gradients, then clears them.
void adam_step(ParamStore& params, AdamState& state, const TrainConfig& cfg);

// Seeded pixel-aligned crops / flips applied identically to both images.
struct ImagePair {
    Tensor degraded, clean;
};
ImagePair random_crop(const ImagePair& pair, int patch_size, Rng& rng);
ImagePair augment_flips(const ImagePair& pair, Rng& rng);
Tensor flip_image(const Tensor& img, bool horizontal, bool vertical);
Tensor center_crop(const Tensor& img, int patch_size);

// Task mix for a comma-separated list of degradation names.
std::vector<DegradationSpec> parse_task_mix(const std::string& tasks, double sigma);
std::vector<Sample> build_training_data(const TrainConfig& cfg);

struct DatasetSplit {
    std::vector<Sample> train, holdout;
};
// Last `fraction` of each task's samples becomes the held-out set.
DatasetSplit split_holdout(const std::vector<Sample>& all, double fraction = 0.1);

struct TrainOutcome {
    int final_step = 0;
    double final_loss = 0.0;
    std::vector<double> loss_history; // one entry per executed step
    // Held-out center-crop PSNR per task, restored vs untouched input.
    std::map<std::string, double> restored_psnr;
    std::map<std::string, double> degraded_psnr;
};

// The training loop: per step, assemble a seeded batch (crop + optional
// flips), forward, L1 loss, backward, Adam. Deterministic given cfg.seed;
// checkpoints land in out_dir (empty: keep everything in memory).
TrainOutcome train_model(PromptIRModel& model, AdamState& adam, const DatasetSplit& data,
                         const TrainConfig& cfg, int start_step = 0,
                         const std::string& out_dir = "");

} // namespace promptir
