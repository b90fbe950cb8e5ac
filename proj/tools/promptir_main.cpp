// Command-line front end: dataset generation, training, inference,
// evaluation, prompt-weight dumps, and ablation sweeps.

#include "promptir/io.hpp"
#include "promptir/metrics.hpp"
#include "promptir/network.hpp"
#include "promptir/train.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

using namespace promptir;

namespace {

// key=value config file support: file values fill in every option the
// command line left untouched, so precedence is defaults < file < flags.
class FlagRegistry {
public:
    template <typename T>
    void reg(CLI::Option* opt, T& var) {
        std::string key = opt->get_lnames().front();
        entries_.push_back({std::move(key), opt, [&var](const std::string& s) { var = parse_value<T>(s); }});
    }

    void apply(const std::string& path) const {
        std::ifstream f(path);
        if (!f) throw std::runtime_error(path + ": cannot open config file");
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
            std::size_t start = 0;
            while (start < line.size() && std::isspace(static_cast<unsigned char>(line[start]))) ++start;
            if (start >= line.size()) continue;
            const auto eq = line.find('=', start);
            if (eq == std::string::npos) {
                throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
            }
            const std::string key = line.substr(start, eq - start);
            const std::string value = line.substr(eq + 1);
            const auto* entry = find(key);
            if (!entry) {
                throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
            }
            if (entry->opt->count() == 0) entry->set(value);
        }
    }

private:
    struct Entry {
        std::string key;
        CLI::Option* opt;
        std::function<void(const std::string&)> set;
    };

    template <typename T>
    static T parse_value(const std::string& s) {
        if constexpr (std::is_same_v<T, std::string>) return s;
        else if constexpr (std::is_same_v<T, bool>) return s == "1" || s == "true" || s == "on";
        else if constexpr (std::is_same_v<T, int>) return std::stoi(s);
        else if constexpr (std::is_same_v<T, double>) return std::stod(s);
        else if constexpr (std::is_same_v<T, std::uint64_t>) return std::stoull(s);
        else static_assert(!sizeof(T*), "unhandled config value type");
    }

    const Entry* find(const std::string& key) const {
        for (const auto& e : entries_) {
            if (e.key == key) return &e;
        }
        return nullptr;
    }

    std::vector<Entry> entries_;
};

struct ModelFlags {
    int channels = 8;
    std::string blocks = "1,1,1,1";
    std::string heads = "1,1,2,2";
    int refinement = 1;
    int components = 3;
    std::string prompt_levels = "2,3,4";
    std::string pgm_mode = "dynamic";
    int canvas = 8;
    double expansion = 2.66;
    int pim_heads = 1;
    bool qk_norm = true;

    void add_options(CLI::App* cmd, FlagRegistry& reg) {
        reg.reg(cmd->add_option("--channels", channels, "Base channel count C"), channels);
        reg.reg(cmd->add_option("--blocks", blocks, "Transformer blocks per level, e.g. 1,1,1,1"), blocks);
        reg.reg(cmd->add_option("--heads", heads, "Attention heads per level"), heads);
        reg.reg(cmd->add_option("--refinement", refinement, "Refinement blocks at 2C"), refinement);
        reg.reg(cmd->add_option("--prompt-components", components, "Prompt components N"), components);
        reg.reg(cmd->add_option("--prompt-levels", prompt_levels, "Decoder levels with prompt blocks"),
                prompt_levels);
        reg.reg(cmd->add_option("--pgm-mode", pgm_mode, "dynamic|fixed prompt weighting")
                    ->check(CLI::IsMember({"dynamic", "fixed"})),
                pgm_mode);
        reg.reg(cmd->add_option("--canvas", canvas, "Stored prompt component size"), canvas);
        reg.reg(cmd->add_option("--expansion", expansion, "GDFN expansion factor"), expansion);
        reg.reg(cmd->add_option("--pim-heads", pim_heads, "Attention heads inside PIM"), pim_heads);
        reg.reg(cmd->add_flag("--qk-norm,!--no-qk-norm", qk_norm, "L2-normalize Q/K rows"), qk_norm);
    }

    ModelConfig to_config() const {
        ModelConfig cfg;
        cfg.base_channels = channels;
        auto parse4 = [](const std::string& s, std::array<int, 4>& out, const char* what) {
            std::stringstream ss(s);
            std::string tok;
            std::size_t i = 0;
            while (std::getline(ss, tok, ',')) {
                if (i >= 4) break;
                out[i++] = std::stoi(tok);
            }
            if (i != 4) throw CLI::ValidationError(std::string(what) + " needs 4 comma-separated values");
        };
        parse4(blocks, cfg.blocks_per_level, "--blocks");
        parse4(heads, cfg.heads_per_level, "--heads");
        cfg.refinement_blocks = refinement;
        cfg.num_prompt_components = components;
        cfg.prompt_levels.clear();
        {
            std::stringstream ss(prompt_levels);
            std::string tok;
            while (std::getline(ss, tok, ','))
                if (!tok.empty()) cfg.prompt_levels.insert(std::stoi(tok));
        }
        cfg.pgm_mode = pgm_mode_from_name(pgm_mode);
        cfg.prompt_canvas = canvas;
        cfg.expansion = expansion;
        cfg.pim_heads = pim_heads;
        cfg.qk_norm = qk_norm;
        cfg.validate();
        return cfg;
    }
};

struct TrainFlags {
    TrainConfig cfg;
    bool all_in_one = false;
    std::string task;

    void add_options(CLI::App* cmd, FlagRegistry& reg) {
        reg.reg(cmd->add_option("--steps", cfg.steps, "Optimizer steps"), cfg.steps);
        reg.reg(cmd->add_option("--batch", cfg.batch_size, "Batch size"), cfg.batch_size);
        reg.reg(cmd->add_option("--patch", cfg.patch_size, "Training crop size"), cfg.patch_size);
        reg.reg(cmd->add_option("--lr", cfg.lr, "Adam learning rate"), cfg.lr);
        reg.reg(cmd->add_option("--beta1", cfg.beta1, "Adam beta1"), cfg.beta1);
        reg.reg(cmd->add_option("--beta2", cfg.beta2, "Adam beta2"), cfg.beta2);
        reg.reg(cmd->add_option("--eps", cfg.eps, "Adam epsilon"), cfg.eps);
        reg.reg(cmd->add_option("--seed", cfg.seed, "Run seed"), cfg.seed);
        reg.reg(cmd->add_flag("--augment,!--no-augment", cfg.augment, "Random flips"), cfg.augment);
        reg.reg(cmd->add_option("--checkpoint-every", cfg.checkpoint_every, "Checkpoint interval (steps)"),
                cfg.checkpoint_every);
        reg.reg(cmd->add_option("--eval-every", cfg.eval_every, "Held-out eval interval (steps)"),
                cfg.eval_every);
        reg.reg(cmd->add_option("--sigma", cfg.sigma, "Gaussian noise level (8-bit units)"), cfg.sigma);
        reg.reg(cmd->add_option("--samples-per-task", cfg.samples_per_task, "Generated samples per task"),
                cfg.samples_per_task);
        reg.reg(cmd->add_option("--image-size", cfg.image_size, "Generated image size"), cfg.image_size);
        auto* aio = cmd->add_flag("--all-in-one", all_in_one, "Train on the noise+rain+haze mix");
        reg.reg(aio, all_in_one);
        reg.reg(cmd->add_option("--task", task, "Single-task training (degradation name)")->excludes(aio),
                task);
    }

    TrainConfig to_config() const {
        TrainConfig out = cfg;
        if (!task.empty()) out.tasks = task;
        else out.tasks = "gaussian,rain,haze"; // the all-in-one mix
        out.validate();
        return out;
    }
};

void echo_kv(std::ostream& os, const std::string& prefix,
             const std::vector<std::pair<std::string, std::string>>& kv) {
    for (const auto& [k, v] : kv) os << prefix << k << "=" << v << "\n";
}

void echo_config(const std::string& command, const ModelConfig* mcfg, const TrainConfig* tcfg,
                 const std::vector<std::pair<std::string, std::string>>& extra) {
    std::cout << "[resolved config]\n";
    std::cout << "command=" << command << "\n";
    for (const auto& [k, v] : extra) std::cout << k << "=" << v << "\n";
    if (mcfg) echo_kv(std::cout, "model.", model_config_to_kv(*mcfg));
    if (tcfg) echo_kv(std::cout, "train.", train_config_to_kv(*tcfg));
    std::cout << "[/resolved config]\n";
}

std::vector<Tensor> load_images(const std::vector<std::string>& paths) {
    std::vector<Tensor> out;
    for (const auto& p : paths) out.push_back(load_ppm(p));
    return out;
}

ImageSource source_from_dir(const std::string& dir, int height, int width) {
    ImageSource src;
    src.height = height;
    src.width = width;
    if (dir.empty()) return src;
    std::vector<std::string> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".ppm") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error(dir + ": no .ppm images found");
    src.images = load_images(files);
    return src;
}

// ---------------------------------------------------------------------------

int run_degrade(const std::string& tasks, int count, std::uint64_t seed, const std::string& out_dir,
                int height, int width, const std::string& src_dir, DegradationSpec proto) {
    std::vector<DegradationSpec> mix;
    {
        std::stringstream ss(tasks);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (tok.empty()) continue;
            DegradationSpec spec = proto;
            spec.kind = degradation_kind_from_name(tok);
            spec.validate();
            mix.push_back(spec);
        }
    }
    if (mix.empty()) throw std::runtime_error("degrade: no tasks given");

    echo_config("degrade", nullptr, nullptr,
                {{"tasks", tasks},
                 {"count", std::to_string(count)},
                 {"seed", std::to_string(seed)},
                 {"out", out_dir},
                 {"height", std::to_string(height)},
                 {"width", std::to_string(width)},
                 {"sigma", std::to_string(proto.sigma)},
                 {"rain.num_streaks", std::to_string(proto.rain.num_streaks)},
                 {"rain.length", std::to_string(proto.rain.length)},
                 {"rain.intensity", std::to_string(proto.rain.intensity)},
                 {"haze.atmospheric_light", std::to_string(proto.haze.atmospheric_light)},
                 {"haze.t_min", std::to_string(proto.haze.t_min)},
                 {"haze.t_max", std::to_string(proto.haze.t_max)}});

    ImageSource src = source_from_dir(src_dir, height, width);
    auto samples = make_dataset(mix, count, src, seed);
    save_dataset_dir(out_dir, samples,
                     {{"tasks", tasks}, {"seed", std::to_string(seed)}, {"sigma", std::to_string(proto.sigma)}});
    std::cout << "wrote " << samples.size() << " pairs to " << out_dir << "\n";
    return 0;
}

int run_train(const ModelFlags& mflags, const TrainFlags& tflags, const std::string& out_dir,
              const std::string& resume, int steps_override) {
    TrainConfig tcfg = tflags.to_config();
    std::unique_ptr<PromptIRModel> model;
    AdamState adam;
    int start_step = 0;

    if (!resume.empty()) {
        auto ckpt = load_checkpoint(resume);
        model = std::move(ckpt.model);
        adam = std::move(ckpt.adam);
        start_step = ckpt.step;
        tcfg = ckpt.train_config; // the recipe is part of the run identity
        if (steps_override >= 0) tcfg.steps = steps_override;
        echo_config("train", &model->config(), &tcfg,
                    {{"out", out_dir}, {"resume", resume}, {"start_step", std::to_string(start_step)}});
    } else {
        ModelConfig mcfg = mflags.to_config();
        echo_config("train", &mcfg, &tcfg, {{"out", out_dir}});
        model = std::make_unique<PromptIRModel>(mcfg, tcfg.seed);
        adam.init(model->params());
    }

    auto split = split_holdout(build_training_data(tcfg));
    std::cout << "dataset: " << split.train.size() << " train / " << split.holdout.size()
              << " held-out samples; model parameters: " << model->count_parameters() << "\n";

    TrainOutcome outcome = train_model(*model, adam, split, tcfg, start_step, out_dir);
    std::cout << "finished at step " << outcome.final_step << ", loss " << outcome.final_loss << "\n";
    for (const auto& [atask, v] : outcome.restored_psnr) {
        std::cout << "held-out " << atask << ": restored " << std::fixed << std::setprecision(2) << v
                  << " dB vs input " << outcome.degraded_psnr.at(atask) << " dB\n";
    }
    std::cout << "checkpoint: " << out_dir << "/final\n";
    return 0;
}

int run_infer(const std::string& ckpt, const std::vector<std::string>& inputs,
              const std::string& out_dir) {
    auto loaded = load_checkpoint(ckpt);
    echo_config("infer", &loaded.model->config(), nullptr,
                {{"ckpt", ckpt}, {"out", out_dir}, {"images", std::to_string(inputs.size())}});
    std::filesystem::create_directories(out_dir);
    NoGradGuard guard;
    for (const auto& path : inputs) {
        Tensor img = load_ppm(path);
        const auto& sh = img.shape();
        Tensor restored = reshape(loaded.model->forward(reshape(img, {1, sh[0], sh[1], sh[2]})),
                                  {sh[0], sh[1], sh[2]});
        const std::string out_path =
            (std::filesystem::path(out_dir) / std::filesystem::path(path).filename()).string();
        save_ppm(restored, out_path);
        std::cout << path << " -> " << out_path << "\n";
    }
    return 0;
}

int run_eval(const std::string& ckpt, const std::string& testset, bool spatially_variant,
             double probe_sigma, std::uint64_t seed, const std::string& report_path) {
    auto loaded = load_checkpoint(ckpt);
    echo_config("eval", &loaded.model->config(), nullptr,
                {{"ckpt", ckpt},
                 {"testset", testset},
                 {"spatially_variant", spatially_variant ? "1" : "0"},
                 {"probe_sigma", probe_sigma >= 0 ? std::to_string(probe_sigma) : "off"},
                 {"report", report_path}});

    auto samples = load_dataset_dir(testset);
    if (samples.empty()) throw std::runtime_error(testset + ": empty test set");

    std::ostringstream audit;
    if (spatially_variant) {
        // Rebuild the probe from the clean images and audit the sigma map.
        const std::vector<double> levels{0, 15, 25, 50};
        std::map<double, std::pair<double, int>> audit_acc; // level -> (sum empirical, n)
        for (std::size_t i = 0; i < samples.size(); ++i) {
            auto r = spatially_variant_noise(samples[i].clean, levels,
                                             Rng::stream(seed, i).next_u64());
            const int h = samples[i].clean.dim(1), w = samples[i].clean.dim(2);
            for (int qy = 0; qy < 2; ++qy)
                for (int qx = 0; qx < 2; ++qx) {
                    const double assigned =
                        r.sigma_map.data()[static_cast<std::size_t>(qy * (h / 2)) * w + qx * (w / 2)];
                    double sq = 0;
                    std::int64_t n = 0;
                    const int y_end = qy == 0 ? h / 2 : h;
                    const int x_end = qx == 0 ? w / 2 : w;
                    for (int c = 0; c < 3; ++c)
                        for (int y = qy * (h / 2); y < y_end; ++y)
                            for (int x = qx * (w / 2); x < x_end; ++x) {
                                const std::size_t idx = (static_cast<std::size_t>(c) * h + y) * w + x;
                                const double d = r.noisy.data()[idx] - samples[i].clean.data()[idx];
                                sq += d * d;
                                ++n;
                            }
                    const double empirical = std::sqrt(sq / static_cast<double>(n)) * 255.0;
                    auto& acc = audit_acc[assigned];
                    acc.first += empirical;
                    acc.second += 1;
                }
            samples[i].degraded = r.noisy;
            samples[i].task = "spatially_variant_noise";
        }
        audit << "sigma-map audit (8-bit units):\n";
        for (const auto& [level, acc] : audit_acc) {
            audit << "  assigned=" << level << " empirical=" << std::fixed << std::setprecision(2)
                  << acc.first / acc.second << " quadrants=" << acc.second << "\n";
        }
    } else if (probe_sigma >= 0) {
        // Generalization probe: re-degrade the clean images at the given
        // sigma (which may lie outside the training levels).
        std::ostringstream label;
        label << "gaussian_noise(sigma=" << probe_sigma << ")";
        for (std::size_t i = 0; i < samples.size(); ++i) {
            samples[i].degraded =
                add_gaussian_noise(samples[i].clean, probe_sigma, Rng::stream(seed, i).next_u64());
            samples[i].task = label.str();
        }
    }

    MetricReport restored = evaluate(*loaded.model, samples);
    MetricReport baseline = evaluate_identity(samples);

    std::ostringstream report;
    report << "restored:\n" << restored.to_table();
    report << "degraded input (baseline):\n" << baseline.to_table();
    if (spatially_variant) report << audit.str();

    std::cout << report.str();
    if (!report_path.empty()) {
        std::ofstream f(report_path, std::ios::trunc);
        if (!f) throw std::runtime_error(report_path + ": cannot write report");
        f << report.str();
        std::cout << "report written to " << report_path << "\n";
    }
    return 0;
}

int run_dump_prompts(const std::string& ckpt, const std::string& testset, const std::string& out_csv) {
    auto loaded = load_checkpoint(ckpt);
    if (loaded.model->config().prompt_levels.empty()) {
        throw std::runtime_error("dump-prompts: checkpoint model has no prompt blocks");
    }
    echo_config("dump-prompts", &loaded.model->config(), nullptr,
                {{"ckpt", ckpt}, {"testset", testset}, {"out", out_csv}});

    auto samples = load_dataset_dir(testset);
    if (samples.empty()) throw std::runtime_error(testset + ": empty test set");
    const int n = loaded.model->config().num_prompt_components;

    std::ofstream csv(out_csv, std::ios::trunc);
    if (!csv) throw std::runtime_error(out_csv + ": cannot write");
    csv << "image,task,level";
    for (int i = 0; i < n; ++i) csv << ",w" << i;
    csv << "\n";
    csv << std::setprecision(17);

    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& sh = samples[i].degraded.shape();
        auto weights = loaded.model->dump_prompt_weights(
            reshape(samples[i].degraded, {1, sh[0], sh[1], sh[2]}));
        for (const auto& [level, w] : weights) {
            csv << i << "," << samples[i].task << "," << level;
            for (int k = 0; k < n; ++k) csv << "," << w.data()[static_cast<std::size_t>(k)];
            csv << "\n";
        }
    }
    std::cout << "wrote prompt weights for " << samples.size() << " images to " << out_csv << "\n";
    return 0;
}

int run_sweep(const std::string& axis, const ModelFlags& mflags, const TrainFlags& tflags,
              const std::string& out_dir) {
    struct Run {
        std::string label;
        ModelConfig mcfg;
        TrainConfig tcfg;
    };
    std::vector<Run> runs;
    const TrainConfig base_t = tflags.to_config();
    const ModelConfig base_m = mflags.to_config();

    if (axis == "pgm_mode") {
        for (PgmMode mode : {PgmMode::kDynamic, PgmMode::kFixed}) {
            Run r{pgm_mode_name(mode), base_m, base_t};
            r.mcfg.pgm_mode = mode;
            runs.push_back(std::move(r));
        }
    } else if (axis == "prompt_levels") {
        for (const auto& levels : std::vector<std::set<int>>{{4}, {4, 3}, {4, 3, 2}}) {
            std::string label = "levels_";
            for (int l : levels) label += std::to_string(l);
            Run r{label, base_m, base_t};
            r.mcfg.prompt_levels = levels;
            runs.push_back(std::move(r));
        }
    } else if (axis == "task_mix") {
        const std::vector<std::string> mixes{
            "gaussian", "rain", "haze", "gaussian,rain", "gaussian,haze", "rain,haze",
            "gaussian,rain,haze"};
        for (const auto& mix : mixes) {
            Run r{mix, base_m, base_t};
            r.tcfg.tasks = mix;
            runs.push_back(std::move(r));
        }
    } else {
        throw std::runtime_error("sweep: unknown axis '" + axis +
                                 "' (expected pgm_mode|prompt_levels|task_mix)");
    }

    echo_config("sweep", &base_m, &base_t,
                {{"axis", axis}, {"out", out_dir}, {"runs", std::to_string(runs.size())}});
    std::filesystem::create_directories(out_dir);

    const std::vector<std::string> task_columns{"gaussian_noise", "rain", "haze"};
    std::ostringstream table;
    table << std::left << std::setw(24) << ("axis: " + axis);
    for (const auto& t : task_columns) table << std::setw(16) << t;
    table << std::setw(16) << "average" << "\n";

    for (auto& run : runs) {
        std::string run_dir = out_dir + "/" + run.label;
        for (char& ch : run_dir)
            if (ch == ',') ch = '+';
        std::cout << "== sweep run " << run.label << " ==\n";
        PromptIRModel model(run.mcfg, run.tcfg.seed);
        AdamState adam;
        auto split = split_holdout(build_training_data(run.tcfg));
        train_model(model, adam, split, run.tcfg, 0, run_dir);
        MetricReport report = evaluate(model, split.holdout);

        table << std::left << std::setw(24) << run.label;
        auto cell = [](double p, double s) {
            std::ostringstream c;
            c << std::fixed << std::setprecision(2) << p << "/" << std::setprecision(3) << s;
            return c.str();
        };
        for (const auto& t : task_columns) {
            auto it = report.per_task.find(t);
            table << std::setw(16) << (it == report.per_task.end() ? std::string("-")
                                                                   : cell(it->second.psnr_db, it->second.ssim));
        }
        table << std::setw(16) << cell(report.psnr_db, report.ssim) << "\n";
    }

    const std::string table_str = table.str();
    std::cout << table_str;
    std::ofstream f(out_dir + "/sweep_table.txt", std::ios::trunc);
    f << table_str;
    std::cout << "table written to " << out_dir << "/sweep_table.txt\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // Training graphs churn through large short-lived buffers; keeping
    // them on the heap avoids per-step mmap/unmap round trips.
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, -1);
#endif
    CLI::App app{"prompt-conditioned all-in-one image restoration"};
    app.require_subcommand(1);

    // degrade
    auto* degrade_cmd = app.add_subcommand("degrade", "Generate degraded/clean pairs");
    std::string d_tasks = "gaussian";
    int d_count = 30, d_height = 64, d_width = 64;
    std::uint64_t d_seed = 0;
    std::string d_out, d_src;
    DegradationSpec d_proto;
    std::string d_sigma_levels = "0,15,25,50";
    degrade_cmd->add_option("--task", d_tasks, "Degradation kind(s), comma-separated");
    degrade_cmd->add_option("--count", d_count, "Number of pairs");
    degrade_cmd->add_option("--seed", d_seed, "Generator seed");
    degrade_cmd->add_option("--out", d_out, "Output directory")->required();
    degrade_cmd->add_option("--src", d_src, "Directory of clean .ppm images (default: procedural)");
    degrade_cmd->add_option("--height", d_height, "Procedural image height");
    degrade_cmd->add_option("--width", d_width, "Procedural image width");
    degrade_cmd->add_option("--sigma", d_proto.sigma, "Gaussian noise level (8-bit units)");
    degrade_cmd->add_option("--sigma-levels", d_sigma_levels, "Spatially-variant levels");
    degrade_cmd->add_option("--rain-streaks", d_proto.rain.num_streaks, "Rain streak count");
    degrade_cmd->add_option("--rain-length", d_proto.rain.length, "Rain streak length (px)");
    degrade_cmd->add_option("--rain-intensity", d_proto.rain.intensity, "Rain streak intensity");
    degrade_cmd->add_option("--rain-angle-min", d_proto.rain.angle_min_deg, "Min streak angle (deg)");
    degrade_cmd->add_option("--rain-angle-max", d_proto.rain.angle_max_deg, "Max streak angle (deg)");
    degrade_cmd->add_option("--haze-a", d_proto.haze.atmospheric_light, "Atmospheric light A");
    degrade_cmd->add_option("--haze-tmin", d_proto.haze.t_min, "Min transmission");
    degrade_cmd->add_option("--haze-tmax", d_proto.haze.t_max, "Max transmission");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a model on synthetic degradations");
    FlagRegistry t_registry;
    std::string t_config;
    train_cmd->add_option("--config", t_config, "key=value config file (flags override)");
    ModelFlags t_model;
    TrainFlags t_train;
    std::string t_out, t_resume;
    t_model.add_options(train_cmd, t_registry);
    t_train.add_options(train_cmd, t_registry);
    train_cmd->add_option("--out", t_out, "Checkpoint/metrics directory")->required();
    train_cmd->add_option("--resume", t_resume,
                          "Resume from a checkpoint directory (recipe comes from the checkpoint; "
                          "an explicit --steps extends or shortens the run)");

    // infer
    auto* infer_cmd = app.add_subcommand("infer", "Restore images (blind: no degradation flag exists)");
    std::string i_ckpt, i_out;
    std::vector<std::string> i_inputs;
    infer_cmd->add_option("--ckpt", i_ckpt, "Checkpoint directory")->required();
    infer_cmd->add_option("--in", i_inputs, "Input image(s), PPM")->required();
    infer_cmd->add_option("--out", i_out, "Output directory")->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a test set");
    std::string e_ckpt, e_testset, e_report;
    bool e_variant = false;
    double e_sigma = -1;
    std::uint64_t e_seed = 0;
    eval_cmd->add_option("--ckpt", e_ckpt, "Checkpoint directory")->required();
    eval_cmd->add_option("--testset", e_testset, "Dataset directory")->required();
    eval_cmd->add_flag("--spatially-variant", e_variant, "Quadrant noise probe with sigma-map audit");
    eval_cmd->add_option("--sigma", e_sigma, "Re-degrade cleans at this noise level");
    eval_cmd->add_option("--seed", e_seed, "Probe seed");
    eval_cmd->add_option("--report", e_report, "Report output path");

    // dump-prompts
    auto* dump_cmd = app.add_subcommand("dump-prompts", "Dump per-level prompt weights as CSV");
    std::string p_ckpt, p_testset, p_out;
    dump_cmd->add_option("--ckpt", p_ckpt, "Checkpoint directory")->required();
    dump_cmd->add_option("--testset", p_testset, "Dataset directory")->required();
    dump_cmd->add_option("--out", p_out, "Output CSV path")->required();

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "Train one model per ablation-axis value");
    std::string s_axis, s_out;
    ModelFlags s_model;
    TrainFlags s_train;
    FlagRegistry s_registry;
    sweep_cmd->add_option("--axis", s_axis, "pgm_mode|prompt_levels|task_mix")->required();
    sweep_cmd->add_option("--out", s_out, "Output directory")->required();
    s_model.add_options(sweep_cmd, s_registry);
    s_train.add_options(sweep_cmd, s_registry);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (app.got_subcommand(degrade_cmd)) {
            d_proto.sigma_levels.clear();
            std::stringstream ss(d_sigma_levels);
            std::string tok;
            while (std::getline(ss, tok, ','))
                if (!tok.empty()) d_proto.sigma_levels.push_back(std::stod(tok));
            return run_degrade(d_tasks, d_count, d_seed, d_out, d_height, d_width, d_src, d_proto);
        }
        if (app.got_subcommand(train_cmd)) {
            if (!t_config.empty()) t_registry.apply(t_config);
            const int steps_override =
                train_cmd->count("--steps") ? t_train.cfg.steps : -1;
            return run_train(t_model, t_train, t_out, t_resume, steps_override);
        }
        if (app.got_subcommand(infer_cmd)) return run_infer(i_ckpt, i_inputs, i_out);
        if (app.got_subcommand(eval_cmd))
            return run_eval(e_ckpt, e_testset, e_variant, e_sigma, e_seed, e_report);
        if (app.got_subcommand(dump_cmd)) return run_dump_prompts(p_ckpt, p_testset, p_out);
        if (app.got_subcommand(sweep_cmd)) return run_sweep(s_axis, s_model, s_train, s_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
