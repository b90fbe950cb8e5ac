#pragma once

#include "promptir/degrade.hpp"
#include "promptir/network.hpp"
#include "promptir/train.hpp"

#include <memory>
#include <string>
#include <vector>

namespace promptir {

std::uint64_t fnv1a64(const void* data, std::size_t bytes);

// Binary PPM (P6), 8-bit, values mapped to [0,1] by /255. Saving clamps
// then quantizes with round-half-up.
Tensor load_ppm(const std::string& path);
void save_ppm(const Tensor& img, const std::string& path);

// A checkpoint is a directory holding manifest.txt (format version,
// configs, step, ordered parameter table with offsets and checksums) and
// blob.bin (little-endian float64 slices in manifest order). Model
// parameters come first, then Adam first/second moments.
void save_checkpoint(const std::string& dir, const PromptIRModel& model, const AdamState& adam,
                     const TrainConfig& train_cfg, int step);

struct LoadedCheckpoint {
    ModelConfig model_config;
    TrainConfig train_config;
    int step = 0;
    std::unique_ptr<PromptIRModel> model;
    AdamState adam;
};
LoadedCheckpoint load_checkpoint(const std::string& dir);

// Degraded/clean pairs as PPM files plus a line-delimited manifest with
// task labels and per-file checksums.
void save_dataset_dir(const std::string& dir, const std::vector<Sample>& samples,
                      const std::vector<std::pair<std::string, std::string>>& header);
std::vector<Sample> load_dataset_dir(const std::string& dir);

} // namespace promptir
