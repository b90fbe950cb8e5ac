#pragma once

#include "promptir/ops.hpp"
#include "promptir/rng.hpp"
#include "promptir/tensor.hpp"

#include <string>

namespace promptir {

inline constexpr double kLayerNormEps = 1e-5;

// Registers a conv weight (uniform(-b,b), b = sqrt(1/fan_in)) and, when
// requested, a zero bias.
struct ConvParam {
    Tensor weight;
    Tensor bias; // undefined when bias-free
};
ConvParam make_conv(ParamStore& ps, const std::string& name, int out_ch, int in_ch, int k,
                    int groups, bool with_bias, Rng& rng);

struct LayerNormParam {
    Tensor scale;
    Tensor shift;
};
LayerNormParam make_layer_norm(ParamStore& ps, const std::string& name, int channels);

// Multi-Dconv-head transposed attention: channel-wise self-attention with
// a C/heads x C/heads attention map per head, linear in spatial size.
struct MDTAParams {
    int heads = 1;
    bool qk_norm = true; // L2-normalize Q,K rows before the dot product
    LayerNormParam ln;
    Tensor qkv_pw; // [3C, C, 1, 1]
    Tensor qkv_dw; // [3C, 1, 3, 3], groups = 3C
    Tensor out_pw; // [C, C, 1, 1]
    Tensor alpha;  // [heads], logits divided by alpha
};
MDTAParams make_mdta(ParamStore& ps, const std::string& prefix, int channels, int heads,
                     bool qk_norm, Rng& rng);
// attn_out, when non-null, receives the softmaxed attention map
// [B*heads, C/heads, C/heads].
Tensor mdta_forward(const Tensor& x, const MDTAParams& p, Tensor* attn_out = nullptr);

// Gated-Dconv feed-forward: two expanded depthwise-conv paths, one GELU
// gated, merged by elementwise product.
struct GDFNParams {
    int hidden = 1;
    LayerNormParam ln;
    Tensor w1_pw, w1_dw; // gate path
    Tensor w2_pw, w2_dw; // value path
    Tensor w0_pw;        // hidden -> C
};
GDFNParams make_gdfn(ParamStore& ps, const std::string& prefix, int channels, double gamma, Rng& rng);
Tensor gdfn_forward(const Tensor& y, const GDFNParams& p);

struct TransformerBlockParams {
    MDTAParams mdta;
    GDFNParams gdfn;
};
TransformerBlockParams make_transformer_block(ParamStore& ps, const std::string& prefix, int channels,
                                              int heads, double gamma, bool qk_norm, Rng& rng);
Tensor transformer_block(const Tensor& x, const TransformerBlockParams& p);

// Inter-level resampling: 3x3 conv then pixel (un)shuffle.
// downsample: B,C,H,W -> B,2C,H/2,W/2; upsample: B,C,H,W -> B,C/2,2H,2W.
struct ResampleParams {
    ConvParam conv;
};
ResampleParams make_downsample(ParamStore& ps, const std::string& prefix, int channels, Rng& rng);
Tensor downsample(const Tensor& x, const ResampleParams& p);
ResampleParams make_upsample(ParamStore& ps, const std::string& prefix, int channels, Rng& rng);
Tensor upsample(const Tensor& x, const ResampleParams& p);

} // namespace promptir
