#include "promptir/network.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace promptir;
using testutil::bits_equal;
using testutil::probe_loss;
using testutil::random_tensor;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.base_channels = 4;
    cfg.blocks_per_level = {1, 1, 1, 1};
    cfg.heads_per_level = {1, 1, 1, 1};
    cfg.refinement_blocks = 1;
    cfg.num_prompt_components = 2;
    cfg.prompt_canvas = 4;
    return cfg;
}

// Independent per-layer enumeration of the architecture's parameter
// shapes, written directly from the wiring contract.
std::int64_t expected_parameter_count(const ModelConfig& cfg) {
    auto conv = [](int out, int in, int k, int groups, bool bias) {
        return static_cast<std::int64_t>(out) * (in / groups) * k * k + (bias ? out : 0);
    };
    auto block = [&](int c, int heads) {
        const int hidden = std::max(1, static_cast<int>(std::llround(cfg.expansion * c)));
        std::int64_t n = 2 * c;                 // mdta ln
        n += conv(3 * c, c, 1, 1, false);       // qkv point-wise
        n += conv(3 * c, 3 * c, 3, 3 * c, false); // qkv depth-wise
        n += conv(c, c, 1, 1, false);           // output projection
        n += heads;                             // alpha
        n += 2 * c;                             // gdfn ln
        n += 2 * conv(hidden, c, 1, 1, false);  // two expansion paths
        n += 2 * conv(hidden, hidden, 3, hidden, false);
        n += conv(c, hidden, 1, 1, false);
        return n;
    };
    auto prompt = [&](int c) {
        std::int64_t n = static_cast<std::int64_t>(cfg.num_prompt_components) * c *
                         cfg.prompt_canvas * cfg.prompt_canvas;
        n += static_cast<std::int64_t>(cfg.num_prompt_components) * c + cfg.num_prompt_components;
        n += conv(c, c, 3, 1, true);            // pgm output conv
        n += block(2 * c, cfg.pim_heads);       // pim transformer
        n += conv(c, 2 * c, 3, 1, true);        // pim output conv
        return n;
    };

    const int c1 = cfg.base_channels, c2 = 2 * c1, c3 = 4 * c1, c4 = 8 * c1;
    std::int64_t total = conv(c1, 3, 3, 1, true); // input projection
    const int ch[4] = {c1, c2, c3, c4};
    for (int l = 0; l < 4; ++l) {
        total += static_cast<std::int64_t>(cfg.blocks_per_level[static_cast<std::size_t>(l)]) *
                 block(ch[l], cfg.heads_per_level[static_cast<std::size_t>(l)]);
    }
    total += conv(c1 / 2, c1, 3, 1, true) + conv(c2 / 2, c2, 3, 1, true) + conv(c3 / 2, c3, 3, 1, true);
    for (int level = 4; level >= 2; --level) {
        const int c = ch[level - 1];
        if (cfg.prompt_levels.count(level)) total += prompt(c);
        total += conv(2 * c, c, 3, 1, true); // upsampler
        const int target = level - 1;
        if (target >= 2) total += conv(ch[target - 1], 2 * ch[target - 1], 1, 1, true); // skip fusion
        const int dec_c = target == 1 ? 2 * c1 : ch[target - 1];
        total += static_cast<std::int64_t>(cfg.blocks_per_level[static_cast<std::size_t>(target - 1)]) *
                 block(dec_c, cfg.heads_per_level[static_cast<std::size_t>(target - 1)]);
    }
    total += static_cast<std::int64_t>(cfg.refinement_blocks) * block(2 * c1, cfg.heads_per_level[0]);
    total += conv(3, 2 * c1, 3, 1, true); // output projection
    return total;
}

} // namespace

TEST_CASE("forward preserves input shape, including non-multiples of 8") {
    PromptIRModel model(tiny_config(), 7);
    Rng rng(1);
    for (auto [h, w] : {std::pair{16, 16}, {24, 40}, {13, 19}}) {
        Tensor x = random_tensor({1, 3, h, w}, rng, 0, 1);
        Tensor y = model.forward(x);
        CHECK(y.shape() == Shape{1, 3, h, w});
    }
    CHECK_THROWS_AS(model.forward(random_tensor({1, 3, 7, 16}, rng)), std::invalid_argument);
    CHECK_THROWS_AS(model.forward(random_tensor({1, 4, 16, 16}, rng)), std::invalid_argument);
}

TEST_CASE("zero output head makes the model the identity (global residual)") {
    PromptIRModel model(tiny_config(), 3);
    Tensor head_w = model.params().at("output_proj.weight");
    Tensor head_b = model.params().at("output_proj.bias");
    for (double& v : head_w.data_mut()) v = 0.0;
    for (double& v : head_b.data_mut()) v = 0.0;
    Rng rng(2);
    for (auto [h, w] : {std::pair{16, 16}, {13, 19}}) {
        Tensor x = random_tensor({2, 3, h, w}, rng, 0, 1);
        CHECK(bits_equal(model.forward(x), x));
    }
}

TEST_CASE("parameter count matches the layer-enumeration oracle") {
    SUBCASE("spec'd configuration: C=8, singles, N=3, refinement 1, prompts {2,3,4}") {
        ModelConfig cfg;
        cfg.base_channels = 8;
        cfg.blocks_per_level = {1, 1, 1, 1};
        cfg.heads_per_level = {1, 1, 1, 1};
        cfg.num_prompt_components = 3;
        cfg.refinement_blocks = 1;
        PromptIRModel model(cfg, 0);
        CHECK(model.count_parameters() == expected_parameter_count(cfg));
    }
    SUBCASE("other head / level combinations") {
        ModelConfig cfg = tiny_config();
        cfg.heads_per_level = {1, 2, 4, 4};
        cfg.prompt_levels = {4};
        PromptIRModel model(cfg, 0);
        CHECK(model.count_parameters() == expected_parameter_count(cfg));
    }
}

TEST_CASE("parameter count: additivity in blocks and prompt components") {
    ModelConfig one = tiny_config();
    ModelConfig two = tiny_config();
    two.blocks_per_level = {2, 2, 2, 2};
    const std::int64_t diff = PromptIRModel(two, 0).count_parameters() -
                              PromptIRModel(one, 0).count_parameters();
    CHECK(diff == expected_parameter_count(two) - expected_parameter_count(one));

    ModelConfig n2 = tiny_config();
    ModelConfig n4 = tiny_config();
    n4.num_prompt_components = 4;
    // per prompt level: extra components plus their mixing-projection rows
    std::int64_t per_level = 0;
    for (int level : n2.prompt_levels) {
        const int c = n2.level_channels(level);
        per_level += 2 * (static_cast<std::int64_t>(c) * n2.prompt_canvas * n2.prompt_canvas + c + 1);
    }
    CHECK(PromptIRModel(n4, 0).count_parameters() - PromptIRModel(n2, 0).count_parameters() ==
          per_level);
}

TEST_CASE("prompt level subsets from the ablation axis all construct and run") {
    Rng rng(4);
    Tensor x = random_tensor({1, 3, 16, 16}, rng, 0, 1);
    for (const auto& levels : {std::set<int>{4}, {4, 3}, {4, 3, 2}}) {
        ModelConfig cfg = tiny_config();
        cfg.prompt_levels = levels;
        PromptIRModel model(cfg, 5);
        auto result = model.forward_with_prompts(x);
        CHECK(result.restored.shape() == x.shape());
        CHECK(result.prompt_weights.size() == levels.size());
        for (int level : levels) CHECK(result.prompt_weights.count(level) == 1);
    }
}

TEST_CASE("dump_prompt_weights") {
    Rng rng(5);
    Tensor x = random_tensor({2, 3, 16, 16}, rng, 0, 1);
    SUBCASE("fixed mode gives uniform vectors at every level") {
        ModelConfig cfg = tiny_config();
        cfg.pgm_mode = PgmMode::kFixed;
        PromptIRModel model(cfg, 6);
        auto weights = model.dump_prompt_weights(x);
        REQUIRE(weights.size() == 3);
        for (const auto& [level, w] : weights) {
            REQUIRE(w.shape() == Shape{2, cfg.num_prompt_components});
            for (double v : w.data()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
        }
    }
    SUBCASE("dynamic vectors have length N and sum to 1") {
        PromptIRModel model(tiny_config(), 6);
        auto weights = model.dump_prompt_weights(x);
        for (const auto& [level, w] : weights) {
            REQUIRE(w.shape() == Shape{2, 2});
            for (int b = 0; b < 2; ++b) {
                const double s = w.data()[static_cast<std::size_t>(b) * 2] +
                                 w.data()[static_cast<std::size_t>(b) * 2 + 1];
                CHECK(std::abs(s - 1.0) <= 1e-9);
            }
        }
    }
}

TEST_CASE("forward is deterministic and init is seed-reproducible") {
    ModelConfig cfg = tiny_config();
    PromptIRModel a(cfg, 42), b(cfg, 42), c(cfg, 43);
    REQUIRE(a.count_parameters() == b.count_parameters());
    const auto& ia = a.params().items();
    const auto& ib = b.params().items();
    bool same = true, diff_seed_differs = false;
    for (std::size_t i = 0; i < ia.size(); ++i) {
        same = same && bits_equal(ia[i].second, ib[i].second);
        diff_seed_differs = diff_seed_differs || !bits_equal(ia[i].second, c.params().items()[i].second);
    }
    CHECK(same);
    CHECK(diff_seed_differs);

    Rng rng(6);
    Tensor x = random_tensor({1, 3, 16, 16}, rng, 0, 1);
    CHECK(bits_equal(a.forward(x), a.forward(x)));
    CHECK(bits_equal(a.forward(x), b.forward(x)));
}

TEST_CASE("gradients reach every parameter") {
    ModelConfig cfg = tiny_config();
    PromptIRModel model(cfg, 9);
    Rng rng(7);
    Tensor x = random_tensor({2, 3, 16, 16}, rng, 0, 1);
    Tensor out = model.forward(x);
    backward(probe_loss(out, 71));
    for (const auto& [name, t] : model.params().items()) {
        bool nonzero = false;
        for (double g : t.grad()) nonzero = nonzero || g != 0.0;
        INFO("parameter ", name);
        CHECK(nonzero);
    }
}

TEST_CASE("config validation and serialization round trip") {
    ModelConfig cfg = tiny_config();
    cfg.heads_per_level = {3, 1, 1, 1};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument); // 4 % 3 != 0

    ModelConfig bad = tiny_config();
    bad.prompt_levels = {1};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    ModelConfig good = tiny_config();
    good.pgm_mode = PgmMode::kFixed;
    good.qk_norm = false;
    auto kv_list = model_config_to_kv(good);
    std::map<std::string, std::string> kv(kv_list.begin(), kv_list.end());
    ModelConfig back = model_config_from_kv(kv);
    CHECK(back.base_channels == good.base_channels);
    CHECK(back.blocks_per_level == good.blocks_per_level);
    CHECK(back.heads_per_level == good.heads_per_level);
    CHECK(back.prompt_levels == good.prompt_levels);
    CHECK(back.pgm_mode == good.pgm_mode);
    CHECK(back.qk_norm == good.qk_norm);
    CHECK(back.expansion == good.expansion);

    ModelConfig paper = ModelConfig::paper_scale();
    paper.validate();
    CHECK(paper.base_channels == 48);
    CHECK(paper.blocks_per_level == std::array<int, 4>{4, 6, 6, 8});
    CHECK(paper.num_prompt_components == 5);
}
