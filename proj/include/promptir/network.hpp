#pragma once

#include "promptir/prompt.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

namespace promptir {

enum class PgmMode { kDynamic, kFixed };

const char* pgm_mode_name(PgmMode mode);
PgmMode pgm_mode_from_name(const std::string& name);

// Architecture hyperparameters. Level l runs at base_channels * 2^(l-1)
// channels and 1/2^(l-1) resolution. Defaults are the desk-scale
// configuration; paper_scale() gives the full-size variant.
struct ModelConfig {
    int base_channels = 8;
    std::array<int, 4> blocks_per_level{1, 1, 1, 1};
    std::array<int, 4> heads_per_level{1, 1, 2, 2};
    int refinement_blocks = 1;
    int num_prompt_components = 3;
    std::set<int> prompt_levels{2, 3, 4}; // decoder levels carrying a prompt block
    PgmMode pgm_mode = PgmMode::kDynamic;
    int prompt_canvas = 8;  // stored spatial size of prompt components
    double expansion = 2.66; // GDFN hidden = round(expansion * C)
    int pim_heads = 1;
    bool qk_norm = true;

    static ModelConfig paper_scale();
    void validate() const;
    int level_channels(int level) const; // level in 1..4
};

std::vector<std::pair<std::string, std::string>> model_config_to_kv(const ModelConfig& cfg);
ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv);

// 4-level encoder-decoder with channel-attention transformer blocks,
// decoder-side prompt blocks, a refinement stage at 2C, and a global
// residual output head. Accepts any H,W >= 8 (reflect-padded to a
// multiple of 8 internally, cropped back).
class PromptIRModel {
public:
    PromptIRModel(ModelConfig cfg, std::uint64_t init_seed);

    struct ForwardResult {
        Tensor restored;                    // B,3,H,W matching the input
        std::map<int, Tensor> prompt_weights; // level -> [B, N]
    };

    Tensor forward(const Tensor& images) const;
    ForwardResult forward_with_prompts(const Tensor& images) const;
    // Value-only forward returning just the per-level prompt weights.
    std::map<int, Tensor> dump_prompt_weights(const Tensor& images) const;

    std::int64_t count_parameters() const { return params_.total_elements(); }
    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

private:
    ModelConfig cfg_;
    ParamStore params_;

    ConvParam input_proj_;
    std::array<std::vector<TransformerBlockParams>, 4> encoder_; // levels 1..4 (level 4 = latent)
    std::array<ResampleParams, 3> down_;                         // 1->2, 2->3, 3->4
    std::array<ResampleParams, 3> up_;                           // 4->3, 3->2, 2->1
    ConvParam fuse3_, fuse2_;                                    // 1x1 skip reducers
    std::array<std::vector<TransformerBlockParams>, 3> decoder_; // levels 3, 2, 1
    std::map<int, PromptBlockParams> prompt_blocks_;             // keyed by decoder level
    std::vector<TransformerBlockParams> refinement_;
    ConvParam output_proj_;
};

} // namespace promptir
