#include "promptir/io.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace promptir;
using testutil::bits_equal;
using testutil::random_tensor;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.base_channels = 4;
    cfg.heads_per_level = {1, 1, 1, 1};
    cfg.num_prompt_components = 2;
    cfg.prompt_canvas = 4;
    return cfg;
}

} // namespace

TEST_CASE("ppm: quantized images round-trip bit-identically") {
    auto dir = temp_dir("promptir_ppm_test");
    Rng rng(1);
    // start from already-quantized values k/255
    std::vector<double> data(3 * 9 * 7);
    for (double& v : data) v = rng.uniform_int(256) / 255.0;
    Tensor img = Tensor::from_data({3, 9, 7}, std::move(data));
    save_ppm(img, (dir / "a.ppm").string());
    Tensor back = load_ppm((dir / "a.ppm").string());
    CHECK(bits_equal(img, back));
}

TEST_CASE("ppm: black and white map to 0.0 and 1.0; 0.5 rounds half-up to 128") {
    auto dir = temp_dir("promptir_ppm_bw");
    save_ppm(Tensor::zeros({3, 4, 4}), (dir / "black.ppm").string());
    save_ppm(Tensor::full({3, 4, 4}, 1.0), (dir / "white.ppm").string());
    Tensor black = load_ppm((dir / "black.ppm").string());
    Tensor white = load_ppm((dir / "white.ppm").string());
    for (double v : black.data()) CHECK(v == 0.0);
    for (double v : white.data()) CHECK(v == 1.0);

    save_ppm(Tensor::full({3, 4, 4}, 0.5), (dir / "mid.ppm").string());
    Tensor mid = load_ppm((dir / "mid.ppm").string());
    for (double v : mid.data()) CHECK(v == doctest::Approx(128.0 / 255.0).epsilon(1e-15));

    // out-of-range values clamp before quantizing
    save_ppm(Tensor::full({3, 4, 4}, 1.7), (dir / "over.ppm").string());
    Tensor over = load_ppm((dir / "over.ppm").string());
    for (double v : over.data()) CHECK(v == 1.0);
}

TEST_CASE("ppm: malformed files carry byte-offset diagnostics") {
    auto dir = temp_dir("promptir_ppm_bad");
    {
        std::ofstream f(dir / "notppm.ppm", std::ios::binary);
        f << "P5\n2 2\n255\n";
    }
    CHECK_THROWS_WITH_AS(load_ppm((dir / "notppm.ppm").string()), doctest::Contains("byte 0"),
                         std::runtime_error);
    {
        std::ofstream f(dir / "trunc.ppm", std::ios::binary);
        f << "P6\n4 4\n255\n";
        f << "only-a-few-bytes";
    }
    CHECK_THROWS_WITH_AS(load_ppm((dir / "trunc.ppm").string()), doctest::Contains("truncated"),
                         std::runtime_error);
    {
        std::ofstream f(dir / "maxval.ppm", std::ios::binary);
        f << "P6\n2 2\n65535\n";
        for (int i = 0; i < 24; ++i) f.put('\0');
    }
    CHECK_THROWS_WITH_AS(load_ppm((dir / "maxval.ppm").string()), doctest::Contains("maxval"),
                         std::runtime_error);
    {
        std::ofstream f(dir / "comment.ppm", std::ios::binary);
        f << "P6\n# a comment\n2 1 255\n";
        for (int i = 0; i < 6; ++i) f.put(static_cast<char>(200));
    }
    CHECK(load_ppm((dir / "comment.ppm").string()).dim(2) == 2);
}

TEST_CASE("checkpoint: save/load reproduces forward bit-exactly") {
    auto dir = temp_dir("promptir_ckpt_test");
    PromptIRModel model(tiny_config(), 9);
    AdamState adam;
    adam.init(model.params());
    adam.t = 17;
    Rng rng(2);
    for (auto& mi : adam.m)
        for (double& v : mi) v = rng.uniform(-1, 1);
    for (auto& vi : adam.v)
        for (double& v : vi) v = rng.uniform(0, 1);

    TrainConfig tcfg;
    tcfg.seed = 123;
    save_checkpoint((dir / "ckpt").string(), model, adam, tcfg, 17);

    auto loaded = load_checkpoint((dir / "ckpt").string());
    CHECK(loaded.step == 17);
    CHECK(loaded.adam.t == 17);
    CHECK(loaded.adam.m == adam.m);
    CHECK(loaded.adam.v == adam.v);
    CHECK(loaded.train_config.seed == 123);

    Tensor x = random_tensor({1, 3, 16, 16}, rng, 0, 1);
    NoGradGuard guard;
    CHECK(bits_equal(model.forward(x), loaded.model->forward(x)));
}

TEST_CASE("checkpoint: manifest offsets are the prefix sums of the byte lengths") {
    auto dir = temp_dir("promptir_ckpt_offsets");
    PromptIRModel model(tiny_config(), 1);
    AdamState adam;
    adam.init(model.params());
    TrainConfig tcfg;
    save_checkpoint((dir / "ckpt").string(), model, adam, tcfg, 0);

    std::ifstream mf(dir / "ckpt" / "manifest.txt");
    std::string line;
    std::uint64_t expected = 0;
    int rows = 0;
    while (std::getline(mf, line)) {
        if (line.rfind("param ", 0) != 0) continue;
        std::uint64_t offset = 0, bytes = 0;
        std::size_t shape_elems = 1;
        std::stringstream ss(line);
        std::string tok;
        Shape shape;
        while (ss >> tok) {
            if (tok.rfind("offset=", 0) == 0) offset = std::stoull(tok.substr(7));
            if (tok.rfind("bytes=", 0) == 0) bytes = std::stoull(tok.substr(6));
            if (tok.rfind("shape=", 0) == 0) {
                std::stringstream sh(tok.substr(6));
                std::string d;
                while (std::getline(sh, d, ',')) shape_elems *= static_cast<std::size_t>(std::stoi(d));
            }
        }
        CHECK(offset == expected);
        CHECK(bytes == shape_elems * 8);
        expected += bytes;
        ++rows;
    }
    CHECK(rows == static_cast<int>(model.params().size()) * 3);
    CHECK(std::filesystem::file_size(dir / "ckpt" / "blob.bin") == expected);
}

TEST_CASE("checkpoint: corruption and version mismatches are rejected by name") {
    auto dir = temp_dir("promptir_ckpt_corrupt");
    PromptIRModel model(tiny_config(), 3);
    AdamState adam;
    adam.init(model.params());
    TrainConfig tcfg;
    save_checkpoint((dir / "ckpt").string(), model, adam, tcfg, 5);

    SUBCASE("flipping one blob byte names the corrupt parameter") {
        auto blob_path = dir / "ckpt" / "blob.bin";
        std::fstream f(blob_path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(40); // inside the first parameter's slice
        char c;
        f.seekg(40);
        f.get(c);
        f.seekp(40);
        f.put(static_cast<char>(c ^ 0x5a));
        f.close();
        CHECK_THROWS_WITH_AS(load_checkpoint((dir / "ckpt").string()),
                             doctest::Contains("input_proj.weight"), std::runtime_error);
    }
    SUBCASE("version mismatch refuses to load") {
        auto manifest_path = dir / "ckpt" / "manifest.txt";
        std::ifstream in(manifest_path);
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        const auto at = content.find("format_version=1");
        REQUIRE(at != std::string::npos);
        content.replace(at, 16, "format_version=9");
        std::ofstream out(manifest_path, std::ios::trunc);
        out << content;
        out.close();
        CHECK_THROWS_WITH_AS(load_checkpoint((dir / "ckpt").string()),
                             doctest::Contains("version"), std::runtime_error);
    }
}

TEST_CASE("dataset directory round trip with checksums") {
    auto dir = temp_dir("promptir_dataset_dir");
    DegradationSpec g, r;
    r.kind = DegradationKind::kRain;
    ImageSource src;
    src.height = src.width = 16;
    auto samples = make_dataset({g, r}, 4, src, 3);
    save_dataset_dir((dir / "set").string(), samples, {{"seed", "3"}});

    auto loaded = load_dataset_dir((dir / "set").string());
    REQUIRE(loaded.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(loaded[i].task == samples[i].task);
        CHECK(loaded[i].degraded.shape() == samples[i].degraded.shape());
    }

    SUBCASE("tampered image fails its checksum") {
        auto img_path = dir / "set" / "degraded_00001.ppm";
        std::fstream f(img_path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(-1, std::ios::end);
        f.put('\x7f');
        f.close();
        CHECK_THROWS_WITH_AS(load_dataset_dir((dir / "set").string()),
                             doctest::Contains("checksum"), std::runtime_error);
    }
}
