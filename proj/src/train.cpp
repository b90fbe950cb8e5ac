#include "promptir/train.hpp"

#include "promptir/io.hpp"
#include "promptir/metrics.hpp"
#include "promptir/ops.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace promptir {

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (patch_size < 8) throw std::invalid_argument("train: patch_size must be >= 8");
    if (lr < 0.0) throw std::invalid_argument("train: lr must be >= 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw std::invalid_argument("train: betas must lie in [0,1)");
    }
    if (eps <= 0.0) throw std::invalid_argument("train: eps must be > 0");
    if (steps < 0) throw std::invalid_argument("train: steps must be >= 0");
    if (samples_per_task < 1) throw std::invalid_argument("train: samples_per_task must be >= 1");
    if (image_size < patch_size) {
        throw std::invalid_argument("train: image_size " + std::to_string(image_size) +
                                    " smaller than patch_size " + std::to_string(patch_size));
    }
    if (sigma < 0.0) throw std::invalid_argument("train: sigma must be >= 0");
}

std::vector<std::pair<std::string, std::string>> train_config_to_kv(const TrainConfig& cfg) {
    auto fp = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    };
    return {
        {"batch_size", std::to_string(cfg.batch_size)},
        {"patch_size", std::to_string(cfg.patch_size)},
        {"lr", fp(cfg.lr)},
        {"beta1", fp(cfg.beta1)},
        {"beta2", fp(cfg.beta2)},
        {"eps", fp(cfg.eps)},
        {"steps", std::to_string(cfg.steps)},
        {"seed", std::to_string(cfg.seed)},
        {"augment", cfg.augment ? "1" : "0"},
        {"checkpoint_every", std::to_string(cfg.checkpoint_every)},
        {"eval_every", std::to_string(cfg.eval_every)},
        {"tasks", cfg.tasks},
        {"sigma", fp(cfg.sigma)},
        {"samples_per_task", std::to_string(cfg.samples_per_task)},
        {"image_size", std::to_string(cfg.image_size)},
    };
}

TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv) {
    auto get = [&kv](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw std::invalid_argument("train config missing key '" + key + "'");
        return it->second;
    };
    TrainConfig cfg;
    cfg.batch_size = std::stoi(get("batch_size"));
    cfg.patch_size = std::stoi(get("patch_size"));
    cfg.lr = std::stod(get("lr"));
    cfg.beta1 = std::stod(get("beta1"));
    cfg.beta2 = std::stod(get("beta2"));
    cfg.eps = std::stod(get("eps"));
    cfg.steps = std::stoi(get("steps"));
    cfg.seed = std::stoull(get("seed"));
    cfg.augment = get("augment") == "1";
    cfg.checkpoint_every = std::stoi(get("checkpoint_every"));
    cfg.eval_every = std::stoi(get("eval_every"));
    cfg.tasks = get("tasks");
    cfg.sigma = std::stod(get("sigma"));
    cfg.samples_per_task = std::stoi(get("samples_per_task"));
    cfg.image_size = std::stoi(get("image_size"));
    cfg.validate();
    return cfg;
}

void AdamState::init(const ParamStore& params) {
    m.clear();
    v.clear();
    t = 0;
    for (const auto& [name, p] : params.items()) {
        m.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
        v.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
    }
}

void adam_step(ParamStore& params, AdamState& state, const TrainConfig& cfg) {
    if (state.m.size() != params.size()) {
        throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.m.size()) +
                                    " parameters, store has " + std::to_string(params.size()));
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    std::size_t idx = 0;
    for (auto& [name, p] : const_cast<std::vector<std::pair<std::string, Tensor>>&>(params.items())) {
        if (!p.has_grad()) throw std::invalid_argument("adam_step: parameter '" + name + "' has no gradient");
        auto data = p.data_mut();
        auto grad = p.grad_mut();
        auto& mi = state.m[idx];
        auto& vi = state.v[idx];
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i];
            mi[i] = cfg.beta1 * mi[i] + (1.0 - cfg.beta1) * g;
            vi[i] = cfg.beta2 * vi[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = mi[i] / bc1;
            const double vhat = vi[i] / bc2;
            data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            grad[i] = 0.0;
        }
        ++idx;
    }
}

Tensor flip_image(const Tensor& img, bool horizontal, bool vertical) {
    if (img.ndim() != 3) throw std::invalid_argument("flip_image: expected [C,H,W]");
    if (!horizontal && !vertical) {
        return Tensor::from_data(img.shape(), {img.data().begin(), img.data().end()});
    }
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    std::vector<double> out(static_cast<std::size_t>(img.size()));
    const double* src = img.data().data();
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y) {
            const int sy = vertical ? h - 1 - y : y;
            for (int x = 0; x < w; ++x) {
                const int sx = horizontal ? w - 1 - x : x;
                out[(static_cast<std::size_t>(ch) * h + y) * w + x] =
                    src[(static_cast<std::size_t>(ch) * h + sy) * w + sx];
            }
        }
    return Tensor::from_data(img.shape(), std::move(out));
}

namespace {

Tensor crop_image(const Tensor& img, int y0, int x0, int size) {
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (y0 < 0 || x0 < 0 || y0 + size > h || x0 + size > w) {
        throw std::invalid_argument("crop: window " + std::to_string(size) + " at (" + std::to_string(y0) +
                                    "," + std::to_string(x0) + ") outside " + std::to_string(h) + "x" +
                                    std::to_string(w));
    }
    std::vector<double> out(static_cast<std::size_t>(c) * size * size);
    const double* src = img.data().data();
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < size; ++y)
            std::copy(src + (static_cast<std::size_t>(ch) * h + y0 + y) * w + x0,
                      src + (static_cast<std::size_t>(ch) * h + y0 + y) * w + x0 + size,
                      out.data() + (static_cast<std::size_t>(ch) * size + y) * size);
    return Tensor::from_data({c, size, size}, std::move(out));
}

} // namespace

ImagePair random_crop(const ImagePair& pair, int patch_size, Rng& rng) {
    const int h = pair.clean.dim(1), w = pair.clean.dim(2);
    if (h < patch_size || w < patch_size) {
        throw std::invalid_argument("random_crop: image " + std::to_string(h) + "x" + std::to_string(w) +
                                    " smaller than patch " + std::to_string(patch_size));
    }
    const int y0 = rng.uniform_int(h - patch_size + 1);
    const int x0 = rng.uniform_int(w - patch_size + 1);
    return {crop_image(pair.degraded, y0, x0, patch_size), crop_image(pair.clean, y0, x0, patch_size)};
}

ImagePair augment_flips(const ImagePair& pair, Rng& rng) {
    const bool hor = rng.coin();
    const bool ver = rng.coin();
    return {flip_image(pair.degraded, hor, ver), flip_image(pair.clean, hor, ver)};
}

Tensor center_crop(const Tensor& img, int patch_size) {
    const int h = img.dim(1), w = img.dim(2);
    if (h <= patch_size && w <= patch_size) {
        return Tensor::from_data(img.shape(), {img.data().begin(), img.data().end()});
    }
    const int size = std::min({patch_size, h, w});
    return crop_image(img, (h - size) / 2, (w - size) / 2, size);
}

std::vector<DegradationSpec> parse_task_mix(const std::string& tasks, double sigma) {
    std::vector<DegradationSpec> mix;
    std::stringstream ss(tasks);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        DegradationSpec spec;
        spec.kind = degradation_kind_from_name(tok);
        spec.sigma = sigma;
        mix.push_back(spec);
    }
    if (mix.empty()) throw std::invalid_argument("no tasks in '" + tasks + "'");
    return mix;
}

std::vector<Sample> build_training_data(const TrainConfig& cfg) {
    const auto mix = parse_task_mix(cfg.tasks, cfg.sigma);
    ImageSource source;
    source.height = cfg.image_size;
    source.width = cfg.image_size;
    return make_dataset(mix, cfg.samples_per_task * static_cast<int>(mix.size()), source,
                        cfg.seed);
}

DatasetSplit split_holdout(const std::vector<Sample>& all, double fraction) {
    // Last `fraction` of each task's samples, in generation order.
    std::map<std::string, int> total, seen;
    for (const auto& s : all) total[s.task] += 1;
    std::map<std::string, int> keep;
    for (const auto& [task, n] : total) keep[task] = n - std::max(1, static_cast<int>(n * fraction));
    DatasetSplit split;
    for (const auto& s : all) {
        if (seen[s.task]++ < keep[s.task]) split.train.push_back(s);
        else split.holdout.push_back(s);
    }
    return split;
}

namespace {

std::vector<int> epoch_permutation(std::uint64_t seed, int epoch, int n) {
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng = Rng::stream(seed, 0xe50cull, static_cast<std::uint64_t>(epoch));
    for (int i = n - 1; i > 0; --i) {
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
    }
    return order;
}

std::map<std::string, double> holdout_psnr(const PromptIRModel* model,
                                           const std::vector<Sample>& holdout, int patch) {
    NoGradGuard guard;
    std::map<std::string, double> acc;
    std::map<std::string, int> count;
    for (const auto& s : holdout) {
        Tensor degraded = center_crop(s.degraded, patch);
        Tensor clean = center_crop(s.clean, patch);
        Tensor out = degraded;
        if (model) {
            const auto& sh = degraded.shape();
            out = reshape(model->forward(reshape(degraded, {1, sh[0], sh[1], sh[2]})),
                          {sh[0], sh[1], sh[2]});
        }
        acc[s.task] += psnr(out, clean);
        count[s.task] += 1;
    }
    for (auto& [task, v] : acc) v /= count[task];
    return acc;
}

} // namespace

TrainOutcome train_model(PromptIRModel& model, AdamState& adam, const DatasetSplit& data,
                         const TrainConfig& cfg, int start_step, const std::string& out_dir) {
    cfg.validate();
    if (adam.m.empty()) adam.init(model.params());
    const int n = static_cast<int>(data.train.size());
    if (n < cfg.batch_size) {
        throw std::invalid_argument("train: " + std::to_string(n) + " samples cannot fill a batch of " +
                                    std::to_string(cfg.batch_size));
    }
    const int epoch_len = n / cfg.batch_size;

    std::ofstream metrics;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        metrics.open(out_dir + "/metrics.log", start_step > 0 ? std::ios::app : std::ios::trunc);
    }

    const int p = cfg.patch_size;
    const std::int64_t plane = static_cast<std::int64_t>(3) * p * p;
    TrainOutcome outcome;
    outcome.final_step = start_step;

    for (int step = start_step; step < cfg.steps; ++step) {
        const int epoch = step / epoch_len;
        const int pos = step % epoch_len;
        const auto order = epoch_permutation(cfg.seed, epoch, n);
        Rng step_rng = Rng::stream(cfg.seed, 0x57e9ull, static_cast<std::uint64_t>(step));

        std::vector<double> in_buf(static_cast<std::size_t>(cfg.batch_size) * plane);
        std::vector<double> tgt_buf(static_cast<std::size_t>(cfg.batch_size) * plane);
        for (int j = 0; j < cfg.batch_size; ++j) {
            const auto& s = data.train[static_cast<std::size_t>(order[static_cast<std::size_t>(pos * cfg.batch_size + j)])];
            ImagePair pair{s.degraded, s.clean};
            pair = random_crop(pair, p, step_rng);
            if (cfg.augment) pair = augment_flips(pair, step_rng);
            std::copy(pair.degraded.data().begin(), pair.degraded.data().end(),
                      in_buf.begin() + static_cast<std::int64_t>(j) * plane);
            std::copy(pair.clean.data().begin(), pair.clean.data().end(),
                      tgt_buf.begin() + static_cast<std::int64_t>(j) * plane);
        }
        Tensor input = Tensor::from_data({cfg.batch_size, 3, p, p}, std::move(in_buf));
        Tensor target = Tensor::from_data({cfg.batch_size, 3, p, p}, std::move(tgt_buf));

        Tensor restored = model.forward(input);
        Tensor loss = l1_loss(restored, target);
        if (!loss.all_finite()) {
            throw std::runtime_error("train: non-finite loss at step " + std::to_string(step + 1));
        }
        backward(loss);
        adam_step(model.params(), adam, cfg);
        outcome.final_loss = loss.item();
        outcome.final_step = step + 1;
        outcome.loss_history.push_back(loss.item());

        if (metrics.is_open()) {
            metrics << "step=" << (step + 1) << " loss=" << std::setprecision(10) << loss.item();
            if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
                for (const auto& [task, v] : holdout_psnr(&model, data.holdout, p)) {
                    metrics << " psnr." << task << "=" << std::setprecision(6) << v;
                }
            }
            metrics << "\n";
        }
        if (!out_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.steps) {
            std::ostringstream name;
            name << out_dir << "/step-" << std::setfill('0') << std::setw(6) << (step + 1);
            save_checkpoint(name.str(), model, adam, cfg, step + 1);
        }
    }

    outcome.restored_psnr = holdout_psnr(&model, data.holdout, p);
    outcome.degraded_psnr = holdout_psnr(nullptr, data.holdout, p);
    if (!out_dir.empty()) {
        save_checkpoint(out_dir + "/final", model, adam, cfg, cfg.steps);
        if (metrics.is_open()) {
            metrics << "final";
            for (const auto& [task, v] : outcome.restored_psnr) {
                metrics << " psnr." << task << "=" << std::setprecision(6) << v;
            }
            for (const auto& [task, v] : outcome.degraded_psnr) {
                metrics << " input_psnr." << task << "=" << std::setprecision(6) << v;
            }
            metrics << "\n";
        }
    }
    return outcome;
}

} // namespace promptir
