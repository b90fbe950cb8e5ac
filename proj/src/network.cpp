#include "promptir/network.hpp"

#include <sstream>
#include <stdexcept>

namespace promptir {

const char* pgm_mode_name(PgmMode mode) {
    return mode == PgmMode::kDynamic ? "dynamic" : "fixed";
}

PgmMode pgm_mode_from_name(const std::string& name) {
    if (name == "dynamic") return PgmMode::kDynamic;
    if (name == "fixed") return PgmMode::kFixed;
    throw std::invalid_argument("unknown pgm mode '" + name + "' (expected dynamic|fixed)");
}

ModelConfig ModelConfig::paper_scale() {
    ModelConfig cfg;
    cfg.base_channels = 48;
    cfg.blocks_per_level = {4, 6, 6, 8};
    cfg.heads_per_level = {1, 2, 4, 8};
    cfg.refinement_blocks = 4;
    cfg.num_prompt_components = 5;
    cfg.prompt_canvas = 16;
    return cfg;
}

int ModelConfig::level_channels(int level) const {
    return base_channels << (level - 1);
}

void ModelConfig::validate() const {
    if (base_channels < 2 || base_channels % 2 != 0) {
        throw std::invalid_argument("base_channels must be an even value >= 2, got " +
                                    std::to_string(base_channels));
    }
    for (int l = 1; l <= 4; ++l) {
        if (blocks_per_level[static_cast<std::size_t>(l - 1)] < 1) {
            throw std::invalid_argument("blocks_per_level entries must be >= 1");
        }
        const int heads = heads_per_level[static_cast<std::size_t>(l - 1)];
        if (heads < 1 || level_channels(l) % heads != 0) {
            throw std::invalid_argument("level " + std::to_string(l) + " channels " +
                                        std::to_string(level_channels(l)) +
                                        " not divisible by heads " + std::to_string(heads));
        }
    }
    for (int level : prompt_levels) {
        if (level < 2 || level > 4) {
            throw std::invalid_argument("prompt_levels must be a subset of {2,3,4}");
        }
        if ((2 * level_channels(level)) % pim_heads != 0) {
            throw std::invalid_argument("prompt level " + std::to_string(level) +
                                        " concatenated channels not divisible by pim_heads");
        }
    }
    if (refinement_blocks < 0) throw std::invalid_argument("refinement_blocks must be >= 0");
    if (num_prompt_components < 1) throw std::invalid_argument("num_prompt_components must be >= 1");
    if (prompt_canvas < 1) throw std::invalid_argument("prompt_canvas must be >= 1");
    if (expansion <= 0.0) throw std::invalid_argument("expansion must be positive");
    if (pim_heads < 1) throw std::invalid_argument("pim_heads must be >= 1");
}

std::vector<std::pair<std::string, std::string>> model_config_to_kv(const ModelConfig& cfg) {
    auto join = [](const std::array<int, 4>& a) {
        std::ostringstream os;
        for (int i = 0; i < 4; ++i) {
            if (i) os << ',';
            os << a[static_cast<std::size_t>(i)];
        }
        return os.str();
    };
    std::ostringstream levels;
    bool first = true;
    for (int level : cfg.prompt_levels) {
        if (!first) levels << ',';
        levels << level;
        first = false;
    }
    std::ostringstream gamma;
    gamma.precision(17);
    gamma << cfg.expansion;
    return {
        {"base_channels", std::to_string(cfg.base_channels)},
        {"blocks_per_level", join(cfg.blocks_per_level)},
        {"heads_per_level", join(cfg.heads_per_level)},
        {"refinement_blocks", std::to_string(cfg.refinement_blocks)},
        {"num_prompt_components", std::to_string(cfg.num_prompt_components)},
        {"prompt_levels", levels.str()},
        {"pgm_mode", pgm_mode_name(cfg.pgm_mode)},
        {"prompt_canvas", std::to_string(cfg.prompt_canvas)},
        {"expansion", gamma.str()},
        {"pim_heads", std::to_string(cfg.pim_heads)},
        {"qk_norm", cfg.qk_norm ? "1" : "0"},
    };
}

namespace {

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stoi(tok));
    }
    return out;
}

const std::string& kv_get(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument("model config missing key '" + key + "'");
    return it->second;
}

} // namespace

ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig cfg;
    cfg.base_channels = std::stoi(kv_get(kv, "base_channels"));
    auto blocks = parse_int_list(kv_get(kv, "blocks_per_level"));
    auto heads = parse_int_list(kv_get(kv, "heads_per_level"));
    if (blocks.size() != 4 || heads.size() != 4) {
        throw std::invalid_argument("blocks_per_level / heads_per_level need 4 entries");
    }
    std::copy(blocks.begin(), blocks.end(), cfg.blocks_per_level.begin());
    std::copy(heads.begin(), heads.end(), cfg.heads_per_level.begin());
    cfg.refinement_blocks = std::stoi(kv_get(kv, "refinement_blocks"));
    cfg.num_prompt_components = std::stoi(kv_get(kv, "num_prompt_components"));
    cfg.prompt_levels.clear();
    for (int level : parse_int_list(kv_get(kv, "prompt_levels"))) cfg.prompt_levels.insert(level);
    cfg.pgm_mode = pgm_mode_from_name(kv_get(kv, "pgm_mode"));
    cfg.prompt_canvas = std::stoi(kv_get(kv, "prompt_canvas"));
    cfg.expansion = std::stod(kv_get(kv, "expansion"));
    cfg.pim_heads = std::stoi(kv_get(kv, "pim_heads"));
    cfg.qk_norm = kv_get(kv, "qk_norm") == "1";
    cfg.validate();
    return cfg;
}

PromptIRModel::PromptIRModel(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng = Rng::stream(init_seed, 0x70726d74ull); // construction-order init stream

    const int c1 = cfg_.level_channels(1);
    input_proj_ = make_conv(params_, "input_proj", c1, 3, 3, 1, true, rng);

    for (int l = 1; l <= 4; ++l) {
        const int ch = cfg_.level_channels(l);
        const int heads = cfg_.heads_per_level[static_cast<std::size_t>(l - 1)];
        auto& blocks = encoder_[static_cast<std::size_t>(l - 1)];
        for (int b = 0; b < cfg_.blocks_per_level[static_cast<std::size_t>(l - 1)]; ++b) {
            blocks.push_back(make_transformer_block(
                params_, "enc" + std::to_string(l) + ".block" + std::to_string(b), ch, heads,
                cfg_.expansion, cfg_.qk_norm, rng));
        }
        if (l < 4) {
            down_[static_cast<std::size_t>(l - 1)] =
                make_downsample(params_, "down" + std::to_string(l), ch, rng);
        }
    }

    // Decoder, deepest first. A prompt block sits on a level's features
    // before the upsampler feeding the next level.
    for (int level = 4; level >= 2; --level) {
        const int ch = cfg_.level_channels(level);
        if (cfg_.prompt_levels.count(level)) {
            prompt_blocks_.emplace(level, make_prompt_block(
                params_, "prompt" + std::to_string(level), ch, ch, cfg_.num_prompt_components,
                cfg_.prompt_canvas, cfg_.pim_heads, cfg_.expansion, cfg_.qk_norm,
                cfg_.pgm_mode == PgmMode::kDynamic, rng));
        }
        up_[static_cast<std::size_t>(4 - level)] =
            make_upsample(params_, "up" + std::to_string(level), ch, rng);
        const int target = level - 1; // decoder level reached by this upsampler
        if (target >= 2) {
            const int tch = cfg_.level_channels(target);
            ConvParam fuse = make_conv(params_, "fuse" + std::to_string(target), tch, 2 * tch, 1, 1,
                                       true, rng);
            if (target == 3) fuse3_ = fuse;
            else fuse2_ = fuse;
        }
        const int dec_ch = target == 1 ? 2 * c1 : cfg_.level_channels(target);
        const int heads = cfg_.heads_per_level[static_cast<std::size_t>(target - 1)];
        auto& blocks = decoder_[static_cast<std::size_t>(target - 1)];
        for (int b = 0; b < cfg_.blocks_per_level[static_cast<std::size_t>(target - 1)]; ++b) {
            blocks.push_back(make_transformer_block(
                params_, "dec" + std::to_string(target) + ".block" + std::to_string(b), dec_ch, heads,
                cfg_.expansion, cfg_.qk_norm, rng));
        }
    }

    for (int b = 0; b < cfg_.refinement_blocks; ++b) {
        refinement_.push_back(make_transformer_block(
            params_, "refine.block" + std::to_string(b), 2 * c1,
            cfg_.heads_per_level[0], cfg_.expansion, cfg_.qk_norm, rng));
    }

    output_proj_ = make_conv(params_, "output_proj", 3, 2 * c1, 3, 1, true, rng);
}

PromptIRModel::ForwardResult PromptIRModel::forward_with_prompts(const Tensor& images) const {
    if (images.ndim() != 4 || images.dim(1) != 3) {
        throw std::invalid_argument("forward: expected [B,3,H,W], got " + shape_str(images.shape()));
    }
    const int h = images.dim(2), w = images.dim(3);
    if (h < 8 || w < 8) {
        throw std::invalid_argument("forward: spatial dims must be >= 8, got " + std::to_string(h) +
                                    "x" + std::to_string(w));
    }
    const int pad_h = (8 - h % 8) % 8;
    const int pad_w = (8 - w % 8) % 8;
    Tensor x = (pad_h || pad_w) ? reflect_pad2d(images, pad_h, pad_w) : images;

    Tensor feat = conv2d(x, input_proj_.weight, input_proj_.bias, 1, 1, 1);
    std::array<Tensor, 3> skips;
    for (int l = 1; l <= 4; ++l) {
        for (const auto& block : encoder_[static_cast<std::size_t>(l - 1)]) {
            feat = transformer_block(feat, block);
        }
        if (l < 4) {
            skips[static_cast<std::size_t>(l - 1)] = feat;
            feat = downsample(feat, down_[static_cast<std::size_t>(l - 1)]);
        }
    }

    ForwardResult result;
    for (int level = 4; level >= 2; --level) {
        auto pb = prompt_blocks_.find(level);
        if (pb != prompt_blocks_.end()) {
            PromptBlockResult pr = prompt_block(feat, pb->second);
            feat = pr.features;
            result.prompt_weights.emplace(level, pr.weights);
        }
        feat = upsample(feat, up_[static_cast<std::size_t>(4 - level)]);
        const int target = level - 1;
        feat = concat({feat, skips[static_cast<std::size_t>(target - 1)]}, 1);
        if (target == 3) feat = conv2d(feat, fuse3_.weight, fuse3_.bias, 1, 0, 1);
        else if (target == 2) feat = conv2d(feat, fuse2_.weight, fuse2_.bias, 1, 0, 1);
        // level 1 keeps the plain concat: deep features stay at 2C
        for (const auto& block : decoder_[static_cast<std::size_t>(target - 1)]) {
            feat = transformer_block(feat, block);
        }
    }

    for (const auto& block : refinement_) feat = transformer_block(feat, block);

    Tensor residual = conv2d(feat, output_proj_.weight, output_proj_.bias, 1, 1, 1);
    Tensor restored = add(x, residual);
    if (pad_h || pad_w) restored = crop2d(restored, 0, h, 0, w);
    result.restored = restored;
    return result;
}

Tensor PromptIRModel::forward(const Tensor& images) const {
    return forward_with_prompts(images).restored;
}

std::map<int, Tensor> PromptIRModel::dump_prompt_weights(const Tensor& images) const {
    NoGradGuard guard;
    return forward_with_prompts(images).prompt_weights;
}

} // namespace promptir
