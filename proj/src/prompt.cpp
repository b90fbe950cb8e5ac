#include "promptir/prompt.hpp"

#include <stdexcept>

namespace promptir {

PromptBlockParams make_prompt_block(ParamStore& ps, const std::string& prefix, int in_channels,
                                    int prompt_channels, int num_components, int canvas,
                                    int pim_heads, double gamma, bool qk_norm, bool dynamic,
                                    Rng& rng) {
    if (num_components < 1 || canvas < 1) {
        throw std::invalid_argument("prompt block needs >= 1 component and a positive canvas");
    }
    PromptBlockParams p;
    p.dynamic = dynamic;
    p.num_components = num_components;
    p.in_channels = in_channels;
    p.prompt_channels = prompt_channels;

    std::vector<double> comp(static_cast<std::size_t>(num_components) * prompt_channels * canvas * canvas);
    for (double& v : comp) v = rng.uniform() * 0.1;
    p.components = ps.add(prefix + ".components",
                          Tensor::from_data({num_components, prompt_channels, canvas, canvas},
                                            std::move(comp), true));

    const double bound = std::sqrt(1.0 / in_channels);
    std::vector<double> w(static_cast<std::size_t>(num_components) * in_channels);
    for (double& v : w) v = rng.uniform(-bound, bound);
    p.weight_proj_w = ps.add(prefix + ".weight_proj.weight",
                             Tensor::from_data({num_components, in_channels}, std::move(w), true));
    p.weight_proj_b = ps.add(prefix + ".weight_proj.bias", Tensor::zeros({num_components}, true));

    p.pgm_conv = make_conv(ps, prefix + ".pgm_conv", prompt_channels, prompt_channels, 3, 1, true, rng);
    p.pim_block = make_transformer_block(ps, prefix + ".pim_block", in_channels + prompt_channels,
                                         pim_heads, gamma, qk_norm, rng);
    p.pim_conv = make_conv(ps, prefix + ".pim_conv", in_channels, in_channels + prompt_channels, 3, 1,
                           true, rng);
    return p;
}

PgmResult pgm(const Tensor& features, const PromptBlockParams& p) {
    if (features.ndim() != 4 || features.dim(1) != p.in_channels) {
        throw std::invalid_argument("pgm: expected [B," + std::to_string(p.in_channels) +
                                    ",H,W] features, got " + shape_str(features.shape()));
    }
    const int batch = features.dim(0);
    const int h = features.dim(2), w = features.dim(3);

    Tensor weights;
    if (p.dynamic) {
        Tensor pooled = global_avg_pool(features);
        Tensor logits = linear(pooled, p.weight_proj_w, p.weight_proj_b);
        weights = softmax(logits, 1);
    } else {
        weights = Tensor::full({batch, p.num_components}, 1.0 / p.num_components);
    }

    const auto& cs = p.components.shape();
    Tensor flat = reshape(p.components, {cs[0], cs[1] * cs[2] * cs[3]});
    Tensor mixed = reshape(matmul(weights, flat), {batch, cs[1], cs[2], cs[3]});
    Tensor resized = bilinear_resize(mixed, h, w);
    Tensor prompt = conv2d(resized, p.pgm_conv.weight, p.pgm_conv.bias, 1, 1, 1);
    return {prompt, weights};
}

Tensor pim(const Tensor& features, const Tensor& prompt, const PromptBlockParams& p) {
    if (prompt.dim(0) != features.dim(0) || prompt.dim(2) != features.dim(2) ||
        prompt.dim(3) != features.dim(3)) {
        // The resize in PGM guarantees matching spatial dims; a mismatch
        // here means the block was wired wrong.
        throw std::invalid_argument("pim: prompt " + shape_str(prompt.shape()) +
                                    " does not align with features " + shape_str(features.shape()));
    }
    Tensor cat = concat({features, prompt}, 1);
    Tensor mixed = transformer_block(cat, p.pim_block);
    return conv2d(mixed, p.pim_conv.weight, p.pim_conv.bias, 1, 1, 1);
}

PromptBlockResult prompt_block(const Tensor& features, const PromptBlockParams& p) {
    PgmResult g = pgm(features, p);
    Tensor out = pim(features, g.prompt, p);
    return {out, g.weights};
}

} // namespace promptir
