#include "promptir/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace promptir {

ConvParam make_conv(ParamStore& ps, const std::string& name, int out_ch, int in_ch, int k,
                    int groups, bool with_bias, Rng& rng) {
    const int fan_in = (in_ch / groups) * k * k;
    const double bound = std::sqrt(1.0 / fan_in);
    std::vector<double> w(static_cast<std::size_t>(out_ch) * (in_ch / groups) * k * k);
    for (double& v : w) v = rng.uniform(-bound, bound);
    ConvParam p;
    p.weight = ps.add(name + ".weight", Tensor::from_data({out_ch, in_ch / groups, k, k}, std::move(w), true));
    if (with_bias) p.bias = ps.add(name + ".bias", Tensor::zeros({out_ch}, true));
    return p;
}

LayerNormParam make_layer_norm(ParamStore& ps, const std::string& name, int channels) {
    LayerNormParam p;
    p.scale = ps.add(name + ".scale", Tensor::full({channels}, 1.0, true));
    p.shift = ps.add(name + ".shift", Tensor::zeros({channels}, true));
    return p;
}

MDTAParams make_mdta(ParamStore& ps, const std::string& prefix, int channels, int heads,
                     bool qk_norm, Rng& rng) {
    if (heads < 1 || channels % heads != 0) {
        throw std::invalid_argument("mdta: channels " + std::to_string(channels) +
                                    " not divisible by heads " + std::to_string(heads));
    }
    MDTAParams p;
    p.heads = heads;
    p.qk_norm = qk_norm;
    p.ln = make_layer_norm(ps, prefix + ".ln", channels);
    p.qkv_pw = make_conv(ps, prefix + ".qkv_pw", 3 * channels, channels, 1, 1, false, rng).weight;
    p.qkv_dw = make_conv(ps, prefix + ".qkv_dw", 3 * channels, 3 * channels, 3, 3 * channels, false, rng).weight;
    p.out_pw = make_conv(ps, prefix + ".out_pw", channels, channels, 1, 1, false, rng).weight;
    p.alpha = ps.add(prefix + ".alpha", Tensor::full({heads}, 1.0, true));
    return p;
}

Tensor mdta_forward(const Tensor& x, const MDTAParams& p, Tensor* attn_out) {
    const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c % p.heads != 0) {
        throw std::invalid_argument("mdta_forward: " + std::to_string(c) + " channels, " +
                                    std::to_string(p.heads) + " heads");
    }
    const int ch = c / p.heads;
    const int hw = h * w;

    Tensor y = layer_norm_channel(x, p.ln.scale, p.ln.shift, kLayerNormEps);
    Tensor qkv = conv2d(y, p.qkv_pw, Tensor(), 1, 0, 1);
    qkv = conv2d(qkv, p.qkv_dw, Tensor(), 1, 1, 3 * c);

    Tensor q = reshape(slice_channels(qkv, 0, c), {batch * p.heads, ch, hw});
    Tensor k = reshape(slice_channels(qkv, c, 2 * c), {batch * p.heads, ch, hw});
    Tensor v = reshape(slice_channels(qkv, 2 * c, 3 * c), {batch * p.heads, ch, hw});
    if (p.qk_norm) {
        q = l2_normalize_last(q);
        k = l2_normalize_last(k);
    }

    Tensor logits = div_per_head(bmm(k, q, false, true), p.alpha, p.heads);
    Tensor attn = softmax(logits, 2);
    if (attn_out) *attn_out = attn;

    Tensor out = reshape(bmm(attn, v), {batch, c, h, w});
    out = conv2d(out, p.out_pw, Tensor(), 1, 0, 1);
    return add(out, x);
}

GDFNParams make_gdfn(ParamStore& ps, const std::string& prefix, int channels, double gamma, Rng& rng) {
    const int hidden = std::max(1, static_cast<int>(std::llround(gamma * channels)));
    GDFNParams p;
    p.hidden = hidden;
    p.ln = make_layer_norm(ps, prefix + ".ln", channels);
    p.w1_pw = make_conv(ps, prefix + ".w1_pw", hidden, channels, 1, 1, false, rng).weight;
    p.w1_dw = make_conv(ps, prefix + ".w1_dw", hidden, hidden, 3, hidden, false, rng).weight;
    p.w2_pw = make_conv(ps, prefix + ".w2_pw", hidden, channels, 1, 1, false, rng).weight;
    p.w2_dw = make_conv(ps, prefix + ".w2_dw", hidden, hidden, 3, hidden, false, rng).weight;
    p.w0_pw = make_conv(ps, prefix + ".w0_pw", channels, hidden, 1, 1, false, rng).weight;
    return p;
}

Tensor gdfn_forward(const Tensor& y, const GDFNParams& p) {
    Tensor z = layer_norm_channel(y, p.ln.scale, p.ln.shift, kLayerNormEps);
    Tensor a = conv2d(z, p.w1_pw, Tensor(), 1, 0, 1);
    a = conv2d(a, p.w1_dw, Tensor(), 1, 1, p.hidden);
    Tensor b = conv2d(z, p.w2_pw, Tensor(), 1, 0, 1);
    b = conv2d(b, p.w2_dw, Tensor(), 1, 1, p.hidden);
    Tensor gated = mul(gelu(a), b);
    Tensor out = conv2d(gated, p.w0_pw, Tensor(), 1, 0, 1);
    return add(out, y);
}

TransformerBlockParams make_transformer_block(ParamStore& ps, const std::string& prefix, int channels,
                                              int heads, double gamma, bool qk_norm, Rng& rng) {
    TransformerBlockParams p;
    p.mdta = make_mdta(ps, prefix + ".mdta", channels, heads, qk_norm, rng);
    p.gdfn = make_gdfn(ps, prefix + ".gdfn", channels, gamma, rng);
    return p;
}

Tensor transformer_block(const Tensor& x, const TransformerBlockParams& p) {
    return gdfn_forward(mdta_forward(x, p.mdta), p.gdfn);
}

ResampleParams make_downsample(ParamStore& ps, const std::string& prefix, int channels, Rng& rng) {
    if (channels % 2 != 0) {
        throw std::invalid_argument("downsample: channels " + std::to_string(channels) + " must be even");
    }
    ResampleParams p;
    p.conv = make_conv(ps, prefix + ".conv", channels / 2, channels, 3, 1, true, rng);
    return p;
}

Tensor downsample(const Tensor& x, const ResampleParams& p) {
    if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
        throw std::invalid_argument("downsample: spatial dims " + std::to_string(x.dim(2)) + "x" +
                                    std::to_string(x.dim(3)) + " must be even");
    }
    return pixel_unshuffle(conv2d(x, p.conv.weight, p.conv.bias, 1, 1, 1), 2);
}

ResampleParams make_upsample(ParamStore& ps, const std::string& prefix, int channels, Rng& rng) {
    if (channels % 2 != 0) {
        throw std::invalid_argument("upsample: channels " + std::to_string(channels) + " must be even");
    }
    ResampleParams p;
    p.conv = make_conv(ps, prefix + ".conv", 2 * channels, channels, 3, 1, true, rng);
    return p;
}

Tensor upsample(const Tensor& x, const ResampleParams& p) {
    return pixel_shuffle(conv2d(x, p.conv.weight, p.conv.bias, 1, 1, 1), 2);
}

} // namespace promptir
