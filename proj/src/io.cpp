#include "promptir/io.hpp"

#include <algorithm>
#include <cctype>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace promptir {

std::uint64_t fnv1a64(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 14695981039346656037ull;
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error(path + ": cannot open");
    f.seekg(0, std::ios::end);
    const auto size = f.tellg();
    f.seekg(0);
    std::vector<unsigned char> buf(static_cast<std::size_t>(size));
    f.read(reinterpret_cast<char*>(buf.data()), size);
    if (!f) throw std::runtime_error(path + ": short read");
    return buf;
}

void write_file(const std::string& path, const void* data, std::size_t bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error(path + ": cannot open for writing");
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!f) throw std::runtime_error(path + ": write failed");
}

// PPM header token reader tracking the byte offset for diagnostics.
struct PpmScanner {
    const std::vector<unsigned char>& buf;
    const std::string& path;
    std::size_t pos = 0;

    void skip_space_and_comments() {
        while (pos < buf.size()) {
            const unsigned char c = buf[pos];
            if (c == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (std::isspace(c)) {
                ++pos;
            } else {
                break;
            }
        }
    }

    int read_int(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos;
        long v = 0;
        while (pos < buf.size() && std::isdigit(buf[pos])) {
            v = v * 10 + (buf[pos] - '0');
            ++pos;
            if (v > 1 << 30) break;
        }
        if (pos == start) {
            throw std::runtime_error(path + ": malformed header at byte " + std::to_string(start) +
                                     ": expected " + what);
        }
        return static_cast<int>(v);
    }
};

std::vector<unsigned char> encode_ppm(const Tensor& img) {
    if (img.ndim() != 3 || img.dim(0) != 3) {
        throw std::invalid_argument("save_ppm: expected [3,H,W], got " + shape_str(img.shape()));
    }
    const int h = img.dim(1), w = img.dim(2);
    std::ostringstream header;
    header << "P6\n" << w << " " << h << "\n255\n";
    const std::string hs = header.str();
    std::vector<unsigned char> out(hs.size() + static_cast<std::size_t>(h) * w * 3);
    std::memcpy(out.data(), hs.data(), hs.size());
    const double* d = img.data().data();
    unsigned char* px = out.data() + hs.size();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(d[(static_cast<std::size_t>(c) * h + y) * w + x], 0.0, 1.0);
                *px++ = static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
            }
    return out;
}

Tensor decode_ppm(const std::vector<unsigned char>& buf, const std::string& path) {
    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '6') {
        throw std::runtime_error(path + ": malformed header at byte 0: not a binary PPM (P6)");
    }
    PpmScanner sc{buf, path, 2};
    const int w = sc.read_int("width");
    const int h = sc.read_int("height");
    const int maxval = sc.read_int("maxval");
    if (w < 1 || h < 1) {
        throw std::runtime_error(path + ": malformed header: dims " + std::to_string(w) + "x" +
                                 std::to_string(h));
    }
    if (maxval != 255) {
        throw std::runtime_error(path + ": unsupported maxval " + std::to_string(maxval) +
                                 " (only 8-bit, 255, is handled)");
    }
    if (sc.pos >= buf.size() || !std::isspace(buf[sc.pos])) {
        throw std::runtime_error(path + ": malformed header at byte " + std::to_string(sc.pos) +
                                 ": expected whitespace before pixel data");
    }
    ++sc.pos;
    const std::size_t need = static_cast<std::size_t>(w) * h * 3;
    if (buf.size() - sc.pos < need) {
        throw std::runtime_error(path + ": truncated payload at byte " + std::to_string(sc.pos) +
                                 ": need " + std::to_string(need) + " bytes, have " +
                                 std::to_string(buf.size() - sc.pos));
    }
    std::vector<double> data(static_cast<std::size_t>(3) * h * w);
    const unsigned char* px = buf.data() + sc.pos;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                data[(static_cast<std::size_t>(c) * h + y) * w + x] = *px++ / 255.0;
    return Tensor::from_data({3, h, w}, std::move(data));
}

} // namespace

Tensor load_ppm(const std::string& path) { return decode_ppm(read_file(path), path); }

void save_ppm(const Tensor& img, const std::string& path) {
    const auto bytes = encode_ppm(img);
    write_file(path, bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr int kCheckpointVersion = 1;

void append_le_doubles(std::vector<unsigned char>& blob, std::span<const double> values) {
    const std::size_t at = blob.size();
    blob.resize(at + values.size() * 8);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(blob.data() + at, values.data(), values.size() * 8);
    } else {
        for (std::size_t i = 0; i < values.size(); ++i) {
            std::uint64_t bits;
            std::memcpy(&bits, &values[i], 8);
            for (int byte = 0; byte < 8; ++byte)
                blob[at + i * 8 + static_cast<std::size_t>(byte)] =
                    static_cast<unsigned char>(bits >> (8 * byte));
        }
    }
}

void read_le_doubles(const unsigned char* src, std::size_t count, double* dst) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(dst, src, count * 8);
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            std::uint64_t bits = 0;
            for (int byte = 7; byte >= 0; --byte) bits = (bits << 8) | src[i * 8 + static_cast<std::size_t>(byte)];
            std::memcpy(&dst[i], &bits, 8);
        }
    }
}

struct ParamRow {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0, bytes = 0, checksum = 0;
};

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

std::map<std::string, std::string> parse_kv_tokens(const std::string& line) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(line);
    std::string tok;
    while (ss >> tok) {
        const auto eq = tok.find('=');
        if (eq != std::string::npos) kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return kv;
}

Shape parse_shape(const std::string& s) {
    Shape shape;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) shape.push_back(std::stoi(tok));
    }
    return shape;
}

std::string shape_csv(const Shape& shape) {
    std::ostringstream os;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    return os.str();
}

} // namespace

void save_checkpoint(const std::string& dir, const PromptIRModel& model, const AdamState& adam,
                     const TrainConfig& train_cfg, int step) {
    if (adam.m.size() != model.params().size()) {
        throw std::invalid_argument("save_checkpoint: optimizer state does not match parameter store");
    }
    std::filesystem::create_directories(dir);

    std::vector<unsigned char> blob;
    std::ostringstream rows;
    auto add_slice = [&blob, &rows](const std::string& name, const Shape& shape,
                                    std::span<const double> values) {
        const std::uint64_t offset = blob.size();
        append_le_doubles(blob, values);
        const std::uint64_t bytes = values.size() * 8;
        rows << "param name=" << name << " shape=" << shape_csv(shape) << " offset=" << offset
             << " bytes=" << bytes << " fnv1a=" << hex64(fnv1a64(blob.data() + offset, bytes)) << "\n";
    };

    const auto& items = model.params().items();
    for (const auto& [name, t] : items) add_slice(name, t.shape(), t.data());
    for (std::size_t i = 0; i < items.size(); ++i)
        add_slice("adam.m." + items[i].first, items[i].second.shape(), adam.m[i]);
    for (std::size_t i = 0; i < items.size(); ++i)
        add_slice("adam.v." + items[i].first, items[i].second.shape(), adam.v[i]);

    std::ostringstream manifest;
    manifest << "promptir-checkpoint\n";
    manifest << "format_version=" << kCheckpointVersion << "\n";
    manifest << "step=" << step << "\n";
    manifest << "adam_t=" << adam.t << "\n";
    // Streams are derived functionally from (seed, step), so these two
    // fields are the complete RNG state.
    manifest << "rng_seed=" << train_cfg.seed << "\n";
    manifest << "[model]\n";
    for (const auto& [k, v] : model_config_to_kv(model.config())) manifest << k << "=" << v << "\n";
    manifest << "[train]\n";
    for (const auto& [k, v] : train_config_to_kv(train_cfg)) manifest << k << "=" << v << "\n";
    manifest << "[params]\n";
    manifest << rows.str();

    const std::string ms = manifest.str();
    write_file(dir + "/manifest.txt", ms.data(), ms.size());
    write_file(dir + "/blob.bin", blob.data(), blob.size());
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    const std::string manifest_path = dir + "/manifest.txt";
    std::ifstream mf(manifest_path);
    if (!mf) throw std::runtime_error(manifest_path + ": cannot open");

    std::string line;
    if (!std::getline(mf, line) || line != "promptir-checkpoint") {
        throw std::runtime_error(manifest_path + ": not a checkpoint manifest");
    }

    std::map<std::string, std::string> top, model_kv, train_kv;
    std::vector<ParamRow> rows;
    std::map<std::string, std::string>* section = &top;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        if (line == "[model]") { section = &model_kv; continue; }
        if (line == "[train]") { section = &train_kv; continue; }
        if (line == "[params]") { section = nullptr; continue; }
        if (section) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw std::runtime_error(manifest_path + ": bad line '" + line + "'");
            (*section)[line.substr(0, eq)] = line.substr(eq + 1);
        } else {
            auto kv = parse_kv_tokens(line);
            ParamRow row;
            row.name = kv.at("name");
            row.shape = parse_shape(kv.at("shape"));
            row.offset = std::stoull(kv.at("offset"));
            row.bytes = std::stoull(kv.at("bytes"));
            row.checksum = std::stoull(kv.at("fnv1a"), nullptr, 16);
            rows.push_back(std::move(row));
        }
    }

    const int version = std::stoi(top.at("format_version"));
    if (version != kCheckpointVersion) {
        throw std::runtime_error(manifest_path + ": format version " + std::to_string(version) +
                                 " not supported (this build reads version " +
                                 std::to_string(kCheckpointVersion) + ")");
    }

    LoadedCheckpoint ckpt;
    ckpt.model_config = model_config_from_kv(model_kv);
    ckpt.train_config = train_config_from_kv(train_kv);
    ckpt.step = std::stoi(top.at("step"));
    ckpt.model = std::make_unique<PromptIRModel>(ckpt.model_config, ckpt.train_config.seed);
    ckpt.adam.init(ckpt.model->params());
    ckpt.adam.t = std::stoll(top.at("adam_t"));

    const auto blob = read_file(dir + "/blob.bin");
    const auto& items = ckpt.model->params().items();
    if (rows.size() != items.size() * 3) {
        throw std::runtime_error(manifest_path + ": manifest lists " + std::to_string(rows.size()) +
                                 " slices, model expects " + std::to_string(items.size() * 3));
    }

    std::uint64_t expected_offset = 0;
    for (const auto& row : rows) {
        if (row.offset != expected_offset) {
            throw std::runtime_error(manifest_path + ": parameter '" + row.name +
                                     "' offset " + std::to_string(row.offset) + " != expected " +
                                     std::to_string(expected_offset));
        }
        expected_offset += row.bytes;
    }
    if (expected_offset != blob.size()) {
        throw std::runtime_error(dir + "/blob.bin: size " + std::to_string(blob.size()) +
                                 " != manifest total " + std::to_string(expected_offset));
    }

    auto load_slice = [&blob, &manifest_path, &dir](const ParamRow& row, const std::string& expect_name,
                                              const Shape& expect_shape, std::span<double> dst) {
        if (row.name != expect_name) {
            throw std::runtime_error(manifest_path + ": expected parameter '" + expect_name +
                                     "', manifest has '" + row.name + "'");
        }
        if (row.shape != expect_shape) {
            throw std::runtime_error(manifest_path + ": parameter '" + row.name + "' shape " +
                                     shape_str(row.shape) + " != model shape " + shape_str(expect_shape));
        }
        if (row.bytes != dst.size() * 8) {
            throw std::runtime_error(manifest_path + ": parameter '" + row.name + "' byte length mismatch");
        }
        if (fnv1a64(blob.data() + row.offset, row.bytes) != row.checksum) {
            throw std::runtime_error(dir + "/blob.bin: parameter '" + row.name + "' checksum mismatch");
        }
        read_le_doubles(blob.data() + row.offset, dst.size(), dst.data());
    };

    const std::size_t n = items.size();
    for (std::size_t i = 0; i < n; ++i) {
        Tensor t = items[i].second;
        load_slice(rows[i], items[i].first, t.shape(), t.data_mut());
    }
    for (std::size_t i = 0; i < n; ++i) {
        load_slice(rows[n + i], "adam.m." + items[i].first, items[i].second.shape(), ckpt.adam.m[i]);
    }
    for (std::size_t i = 0; i < n; ++i) {
        load_slice(rows[2 * n + i], "adam.v." + items[i].first, items[i].second.shape(), ckpt.adam.v[i]);
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// dataset directories

void save_dataset_dir(const std::string& dir, const std::vector<Sample>& samples,
                      const std::vector<std::pair<std::string, std::string>>& header) {
    std::filesystem::create_directories(dir);
    std::ostringstream manifest;
    manifest << "promptir-dataset\n";
    manifest << "count=" << samples.size() << "\n";
    for (const auto& [k, v] : header) manifest << k << "=" << v << "\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::ostringstream dn, cn;
        dn << "degraded_" << std::setfill('0') << std::setw(5) << i << ".ppm";
        cn << "clean_" << std::setfill('0') << std::setw(5) << i << ".ppm";
        const auto dbytes = encode_ppm(samples[i].degraded);
        const auto cbytes = encode_ppm(samples[i].clean);
        write_file(dir + "/" + dn.str(), dbytes.data(), dbytes.size());
        write_file(dir + "/" + cn.str(), cbytes.data(), cbytes.size());
        manifest << "sample index=" << i << " task=" << samples[i].task << " degraded=" << dn.str()
                 << " clean=" << cn.str() << " fnv_degraded=" << hex64(fnv1a64(dbytes.data(), dbytes.size()))
                 << " fnv_clean=" << hex64(fnv1a64(cbytes.data(), cbytes.size())) << "\n";
    }
    const std::string ms = manifest.str();
    write_file(dir + "/manifest.txt", ms.data(), ms.size());
}

std::vector<Sample> load_dataset_dir(const std::string& dir) {
    const std::string manifest_path = dir + "/manifest.txt";
    std::ifstream mf(manifest_path);
    if (!mf) throw std::runtime_error(manifest_path + ": cannot open");
    std::string line;
    if (!std::getline(mf, line) || line != "promptir-dataset") {
        throw std::runtime_error(manifest_path + ": not a dataset manifest");
    }
    std::vector<Sample> samples;
    while (std::getline(mf, line)) {
        if (line.rfind("sample ", 0) != 0) continue;
        auto kv = parse_kv_tokens(line);
        Sample s;
        s.task = kv.at("task");
        const std::string dpath = dir + "/" + kv.at("degraded");
        const std::string cpath = dir + "/" + kv.at("clean");
        const auto dbytes = read_file(dpath);
        const auto cbytes = read_file(cpath);
        if (kv.count("fnv_degraded") &&
            fnv1a64(dbytes.data(), dbytes.size()) != std::stoull(kv.at("fnv_degraded"), nullptr, 16)) {
            throw std::runtime_error(dpath + ": checksum mismatch against manifest");
        }
        if (kv.count("fnv_clean") &&
            fnv1a64(cbytes.data(), cbytes.size()) != std::stoull(kv.at("fnv_clean"), nullptr, 16)) {
            throw std::runtime_error(cpath + ": checksum mismatch against manifest");
        }
        s.degraded = decode_ppm(dbytes, dpath);
        s.clean = decode_ppm(cbytes, cpath);
        samples.push_back(std::move(s));
    }
    return samples;
}

} // namespace promptir
