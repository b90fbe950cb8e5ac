#pragma once

#include "promptir/blocks.hpp"

namespace promptir {

// Drop-in prompt block: a bank of learnable prompt components mixed by
// input-conditioned weights (PGM), fused into the feature map through one
// transformer block over the concatenated channels (PIM).
struct PromptBlockParams {
    bool dynamic = true;   // false: uniform 1/N weights, input ignored
    int num_components = 1;
    int in_channels = 1;
    int prompt_channels = 1;
    Tensor components;     // [N, Cp, canvas, canvas]
    Tensor weight_proj_w;  // [N, Cin] dense map on the pooled feature vector
    Tensor weight_proj_b;  // [N]
    ConvParam pgm_conv;    // 3x3, Cp -> Cp
    TransformerBlockParams pim_block; // over Cin + Cp channels
    ConvParam pim_conv;    // 3x3, (Cin + Cp) -> Cin
};

PromptBlockParams make_prompt_block(ParamStore& ps, const std::string& prefix, int in_channels,
                                    int prompt_channels, int num_components, int canvas,
                                    int pim_heads, double gamma, bool qk_norm, bool dynamic,
                                    Rng& rng);

struct PgmResult {
    Tensor prompt;  // [B, Cp, H, W], spatially matched to the input features
    Tensor weights; // [B, N] softmax mixture (uniform in fixed mode)
};
PgmResult pgm(const Tensor& features, const PromptBlockParams& p);

Tensor pim(const Tensor& features, const Tensor& prompt, const PromptBlockParams& p);

struct PromptBlockResult {
    Tensor features; // same shape as the input features
    Tensor weights;  // [B, N]
};
PromptBlockResult prompt_block(const Tensor& features, const PromptBlockParams& p);

} // namespace promptir
