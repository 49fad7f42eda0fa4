#include "scan/io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "scan/errors.hpp"
#include "scan/hash.hpp"
#include "scan/kernels.hpp"
#include "scan/rng.hpp"

namespace fs = std::filesystem;

namespace scan::io {

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'C', 'A', 'N', 'C', 'K', 'P', '1'};
constexpr char kSaliencyMagic[4] = {'S', 'C', 'N', 'M'};
constexpr uint32_t kSaliencyVersion = 1;

std::string conf_variant_name(core_math::ConfVariant v) {
    return v == core_math::ConfVariant::sine ? "sine" : "sigmoid";
}

core_math::ConfVariant conf_variant_from_name(const std::string& s) {
    if (s == "sine") return core_math::ConfVariant::sine;
    if (s == "sigmoid") return core_math::ConfVariant::sigmoid;
    throw ConfigError("unknown confidence variant: " + s);
}

void append_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t parse_u32(const std::string& s, size_t off) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    return v;
}

uint64_t parse_u64(const std::string& s, size_t off) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    return v;
}

// Tensor payloads are stored as native doubles; the reproducibility contract
// is same-platform, and every supported platform here is little-endian IEEE.
void append_tensor(std::string& out, const Tensor& t) {
    out.append(reinterpret_cast<const char*>(t.data()),
               static_cast<size_t>(t.numel()) * sizeof(double));
}

json tensor_index(const std::vector<nn::Param*>& params) {
    json idx = json::array();
    for (const nn::Param* p : params)
        idx.push_back({{"name", p->name}, {"shape", p->value.shape()}});
    return idx;
}

void restore_params(const std::vector<nn::Param*>& params, const json& index,
                    const std::string& bytes, size_t offset) {
    std::map<std::string, nn::Param*> by_name;
    for (nn::Param* p : params) by_name[p->name] = p;
    if (index.size() != params.size())
        throw ConfigError("checkpoint parameter count does not match architecture");
    for (const auto& entry : index) {
        const std::string name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<std::vector<int64_t>>();
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw ConfigError("checkpoint tensor '" + name + "' has no home");
        nn::Param* p = it->second;
        if (p->value.shape() != shape)
            throw ConfigError("checkpoint tensor '" + name + "' has the wrong shape");
        const size_t n = static_cast<size_t>(p->value.numel()) * sizeof(double);
        if (offset + n > bytes.size()) throw ConfigError("checkpoint payload truncated");
        std::memcpy(p->value.data(), bytes.data() + offset, n);
        offset += n;
    }
    if (offset != bytes.size()) throw ConfigError("checkpoint payload has trailing bytes");
}

std::pair<json, size_t> parse_checkpoint_header(const std::string& bytes,
                                                const std::string& path) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
        throw ConfigError("not a checkpoint file: " + path);
    const uint64_t hlen = parse_u64(bytes, 8);
    if (16 + hlen > bytes.size()) throw ConfigError("checkpoint header truncated: " + path);
    json header = json::parse(bytes.substr(16, hlen));
    return {std::move(header), static_cast<size_t>(16 + hlen)};
}

std::string checkpoint_bytes(const json& header, const std::vector<nn::Param*>& params) {
    const std::string hs = header.dump();
    std::string out;
    out.reserve(16 + hs.size());
    out.append(kCheckpointMagic, 8);
    append_u64(out, hs.size());
    out += hs;
    for (const nn::Param* p : params) append_tensor(out, p->value);
    return out;
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

uint8_t to_byte(double v) {
    return static_cast<uint8_t>(std::lround(clamp01(v) * 255.0));
}

// Evenly spaced viridis anchors; monotone in lightness.
constexpr double kColormap[10][3] = {
    {0.2667, 0.0039, 0.3294}, {0.2824, 0.1569, 0.4706}, {0.2431, 0.2902, 0.5373},
    {0.1922, 0.4078, 0.5569}, {0.1490, 0.5098, 0.5569}, {0.1216, 0.6196, 0.5373},
    {0.2078, 0.7176, 0.4745}, {0.4314, 0.8078, 0.3451}, {0.7098, 0.8706, 0.1686},
    {0.9922, 0.9059, 0.1451}};

struct PngReadCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* f = nullptr;
    ~PngReadCloser() {
        if (png != nullptr) png_destroy_read_struct(&png, &info, nullptr);
        if (f != nullptr) std::fclose(f);
    }
};

struct PngWriteCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* f = nullptr;
    ~PngWriteCloser() {
        if (png != nullptr) png_destroy_write_struct(&png, &info);
        if (f != nullptr) std::fclose(f);
    }
};

void write_png_bytes(const std::string& path, const std::vector<uint8_t>& pixels,
                     int64_t h, int64_t w, int channels) {
    ensure_parent_dir(path);
    PngWriteCloser c;
    c.f = std::fopen(path.c_str(), "wb");
    if (c.f == nullptr) throw ConfigError("cannot write " + path);
    c.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    c.info = png_create_info_struct(c.png);
    if (setjmp(png_jmpbuf(c.png))) throw ConfigError("png write failed: " + path);
    png_init_io(c.png, c.f);
    png_set_IHDR(c.png, c.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
                 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(c.png, c.info);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int64_t i = 0; i < h; ++i)
        rows[static_cast<size_t>(i)] =
            const_cast<png_bytep>(pixels.data() + i * w * channels);
    png_write_image(c.png, rows.data());
    png_write_end(c.png, nullptr);
}

Tensor read_png(const std::string& path) {
    PngReadCloser c;
    c.f = std::fopen(path.c_str(), "rb");
    if (c.f == nullptr) throw ConfigError("cannot read " + path);
    c.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    c.info = png_create_info_struct(c.png);
    if (setjmp(png_jmpbuf(c.png))) throw ConfigError("png read failed: " + path);
    png_init_io(c.png, c.f);
    png_read_info(c.png, c.info);
    png_set_expand(c.png);
    png_set_strip_16(c.png);
    png_set_strip_alpha(c.png);
    png_set_gray_to_rgb(c.png);
    png_read_update_info(c.png, c.info);
    const png_uint_32 w = png_get_image_width(c.png, c.info);
    const png_uint_32 h = png_get_image_height(c.png, c.info);
    if (png_get_channels(c.png, c.info) != 3)
        throw ConfigError("unsupported png channel layout: " + path);
    std::vector<uint8_t> pixels(static_cast<size_t>(w) * h * 3);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 i = 0; i < h; ++i) rows[i] = pixels.data() + size_t{i} * w * 3;
    png_read_image(c.png, rows.data());
    Tensor out({3, static_cast<int64_t>(h), static_cast<int64_t>(w)});
    for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j)
                out[(ch * h + i) * w + j] =
                    pixels[static_cast<size_t>((i * w + j) * 3 + ch)] / 255.0;
    return out;
}

Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read " + path);
    auto next_token = [&f, &path]() {
        std::string tok;
        int ch = f.get();
        while (ch != EOF) {
            if (ch == '#') {
                while (ch != EOF && ch != '\n') ch = f.get();
            } else if (std::isspace(ch)) {
                ch = f.get();
            } else {
                break;
            }
        }
        while (ch != EOF && !std::isspace(ch)) {
            tok.push_back(static_cast<char>(ch));
            ch = f.get();
        }
        if (tok.empty()) throw ConfigError("truncated ppm header: " + path);
        return tok;
    };
    const std::string magic = next_token();
    if (magic != "P6" && magic != "P5")
        throw ConfigError("unsupported image format: " + path);
    const int64_t w = std::stoll(next_token());
    const int64_t h = std::stoll(next_token());
    const int64_t maxval = std::stoll(next_token());
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
        throw ConfigError("unsupported ppm geometry: " + path);
    const int channels = magic == "P6" ? 3 : 1;
    std::vector<uint8_t> pixels(static_cast<size_t>(w * h * channels));
    f.read(reinterpret_cast<char*>(pixels.data()),
           static_cast<std::streamsize>(pixels.size()));
    if (f.gcount() != static_cast<std::streamsize>(pixels.size()))
        throw ConfigError("truncated ppm payload: " + path);
    Tensor out({3, h, w});
    for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) {
                const int64_t src = channels == 3 ? (i * w + j) * 3 + ch : i * w + j;
                out[(ch * h + i) * w + j] =
                    pixels[static_cast<size_t>(src)] / static_cast<double>(maxval);
            }
    return out;
}

std::vector<std::string> sorted_entries(const std::string& dir, bool dirs_only) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (dirs_only != e.is_directory()) continue;
        out.push_back(e.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    ensure_parent_dir(path);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot write " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ConfigError("short write: " + path);
}

void ensure_parent_dir(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

void ensure_dir(const std::string& path) { fs::create_directories(path); }

std::string cache_dir() {
    const char* env = std::getenv("SCAN_CACHE_DIR");
    return env != nullptr && *env != '\0' ? std::string(env) : std::string("scan_cache");
}

std::string code_version() { return "scan 0.1.0"; }

json target_config_json(const TargetConfig& cfg) {
    return {{"arch", arch_name(cfg.arch)},
            {"image_side", cfg.image_side},
            {"num_classes", cfg.num_classes},
            {"cnn_width", cfg.cnn_width},
            {"vit_dim", cfg.vit_dim},
            {"vit_heads", cfg.vit_heads},
            {"vit_depth", cfg.vit_depth},
            {"vit_patch", cfg.vit_patch},
            {"vit_mlp_ratio", cfg.vit_mlp_ratio}};
}

TargetConfig target_config_from_json(const json& j) {
    TargetConfig cfg;
    cfg.arch = arch_from_name(j.at("arch").get<std::string>());
    cfg.image_side = j.at("image_side").get<int64_t>();
    cfg.num_classes = j.at("num_classes").get<int64_t>();
    cfg.cnn_width = j.at("cnn_width").get<int64_t>();
    cfg.vit_dim = j.at("vit_dim").get<int64_t>();
    cfg.vit_heads = j.at("vit_heads").get<int64_t>();
    cfg.vit_depth = j.at("vit_depth").get<int64_t>();
    cfg.vit_patch = j.at("vit_patch").get<int64_t>();
    cfg.vit_mlp_ratio = j.at("vit_mlp_ratio").get<int64_t>();
    return cfg;
}

json decoder_config_json(const DecoderConfig& cfg) {
    return {{"variant", decoder_variant_name(cfg.variant)},
            {"tap_layer", cfg.tap_layer},
            {"input_channels", cfg.input_channels},
            {"feature_side", cfg.feature_side},
            {"image_side", cfg.image_side},
            {"n_attention_blocks", cfg.n_attention_blocks},
            {"n_attention_heads", cfg.n_attention_heads},
            {"base_width", cfg.base_width},
            {"width_floor", cfg.width_floor}};
}

DecoderConfig decoder_config_from_json(const json& j) {
    DecoderConfig cfg;
    cfg.variant = decoder_variant_from_name(j.at("variant").get<std::string>());
    cfg.tap_layer = j.at("tap_layer").get<std::string>();
    cfg.input_channels = j.at("input_channels").get<int64_t>();
    cfg.feature_side = j.at("feature_side").get<int64_t>();
    cfg.image_side = j.at("image_side").get<int64_t>();
    cfg.n_attention_blocks = j.at("n_attention_blocks").get<int64_t>();
    cfg.n_attention_heads = j.at("n_attention_heads").get<int64_t>();
    cfg.base_width = j.at("base_width").get<int64_t>();
    cfg.width_floor = j.at("width_floor").get<int64_t>();
    return cfg;
}

json train_config_json(const TrainConfig& cfg) {
    json j{{"alpha", cfg.alpha},
           {"lambda", cfg.lambda},
           {"inference_percentile", cfg.inference_percentile},
           {"epochs", cfg.epochs},
           {"batch_size", cfg.batch_size},
           {"learning_rate", cfg.learning_rate},
           {"seed", cfg.seed},
           {"tap_layer", cfg.tap_layer},
           {"conf_variant", conf_variant_name(cfg.conf_variant)},
           {"train_p_min", cfg.train_p_min},
           {"train_p_max", cfg.train_p_max},
           {"blur_targets", cfg.blur_targets},
           {"decoder_base_width", cfg.decoder_base_width},
           {"decoder_width_floor", cfg.decoder_width_floor},
           {"decoder_attention_blocks", cfg.decoder_attention_blocks}};
    j["decoder_variant"] = cfg.decoder_variant.has_value()
                               ? json(decoder_variant_name(*cfg.decoder_variant))
                               : json(nullptr);
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig cfg;
    cfg.alpha = j.at("alpha").get<double>();
    cfg.lambda = j.at("lambda").get<double>();
    cfg.inference_percentile = j.at("inference_percentile").get<double>();
    cfg.epochs = j.at("epochs").get<int64_t>();
    cfg.batch_size = j.at("batch_size").get<int64_t>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.tap_layer = j.at("tap_layer").get<std::string>();
    cfg.conf_variant = conf_variant_from_name(j.at("conf_variant").get<std::string>());
    cfg.train_p_min = j.at("train_p_min").get<double>();
    cfg.train_p_max = j.at("train_p_max").get<double>();
    cfg.blur_targets = j.at("blur_targets").get<bool>();
    if (!j.at("decoder_variant").is_null())
        cfg.decoder_variant =
            decoder_variant_from_name(j.at("decoder_variant").get<std::string>());
    cfg.decoder_base_width = j.at("decoder_base_width").get<int64_t>();
    cfg.decoder_width_floor = j.at("decoder_width_floor").get<int64_t>();
    cfg.decoder_attention_blocks = j.at("decoder_attention_blocks").get<int64_t>();
    return cfg;
}

void save_target_checkpoint(const std::string& path, TargetModel& model) {
    const auto params = model.params();
    json header{{"kind", "target"},
                {"config", target_config_json(model.config())},
                {"seed", model.seed()},
                {"frozen", model.frozen()},
                {"norm_mean", model.norm_mean},
                {"norm_std", model.norm_std},
                {"tensors", tensor_index(params)}};
    write_file(path, checkpoint_bytes(header, params));
}

std::unique_ptr<TargetModel> load_target_checkpoint(const std::string& path) {
    const std::string bytes = read_file(path);
    auto [header, payload_off] = parse_checkpoint_header(bytes, path);
    if (header.at("kind").get<std::string>() != "target")
        throw ConfigError("not a classifier checkpoint: " + path);
    const TargetConfig cfg = target_config_from_json(header.at("config"));
    Rng rng(0);
    auto model = std::make_unique<TargetModel>(cfg, rng);
    model->norm_mean = header.at("norm_mean").get<std::vector<double>>();
    model->norm_std = header.at("norm_std").get<std::vector<double>>();
    model->set_seed(header.at("seed").get<uint64_t>());
    model->set_frozen(header.at("frozen").get<bool>());
    restore_params(model->params(), header.at("tensors"), bytes, payload_off);
    return model;
}

void save_decoder_checkpoint(const std::string& path, Decoder& decoder,
                             const DecoderCheckpointMeta& meta) {
    const auto params = decoder.params();
    json header{{"kind", "decoder"},
                {"config", decoder_config_json(decoder.config())},
                {"train_config", train_config_json(meta.train_config)},
                {"target_hash", meta.target_hash},
                {"ablation", meta.ablation},
                {"tensors", tensor_index(params)}};
    write_file(path, checkpoint_bytes(header, params));
}

LoadedDecoder load_decoder_checkpoint(const std::string& path) {
    const std::string bytes = read_file(path);
    auto [header, payload_off] = parse_checkpoint_header(bytes, path);
    if (header.at("kind").get<std::string>() != "decoder")
        throw ConfigError("not a decoder checkpoint: " + path);
    const DecoderConfig cfg = decoder_config_from_json(header.at("config"));
    Rng rng(0);
    LoadedDecoder out;
    out.decoder = build_decoder(cfg, rng);
    out.meta.train_config = train_config_from_json(header.at("train_config"));
    out.meta.target_hash = header.at("target_hash").get<std::string>();
    out.meta.ablation = header.at("ablation").get<std::string>();
    restore_params(out.decoder->params(), header.at("tensors"), bytes, payload_off);
    return out;
}

void save_saliency(const std::string& path, const Tensor& map) {
    if (map.rank() != 2) throw std::invalid_argument("saliency container wants [H,W]");
    const int64_t h = map.dim(0), w = map.dim(1);
    std::string out;
    out.reserve(16 + static_cast<size_t>(h * w) * 4);
    out.append(kSaliencyMagic, 4);
    append_u32(out, kSaliencyVersion);
    append_u32(out, static_cast<uint32_t>(h));
    append_u32(out, static_cast<uint32_t>(w));
    for (int64_t i = 0; i < h * w; ++i) {
        const float v = static_cast<float>(map[i]);
        char buf[4];
        std::memcpy(buf, &v, 4);
        out.append(buf, 4);
    }
    write_file(path, out);
}

Tensor load_saliency(const std::string& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kSaliencyMagic, 4) != 0)
        throw ConfigError("not a saliency container: " + path);
    if (parse_u32(bytes, 4) != kSaliencyVersion)
        throw ConfigError("unsupported saliency container version: " + path);
    const int64_t h = parse_u32(bytes, 8), w = parse_u32(bytes, 12);
    if (bytes.size() != 16 + static_cast<size_t>(h * w) * 4)
        throw ConfigError("saliency container truncated: " + path);
    Tensor map({h, w});
    for (int64_t i = 0; i < h * w; ++i) {
        float v;
        std::memcpy(&v, bytes.data() + 16 + i * 4, 4);
        map[i] = static_cast<double>(v);
    }
    return map;
}

void write_train_log(const std::string& path, const TrainLog& log) {
    std::string out;
    for (const StepRecord& s : log.steps) {
        out += json{{"type", "step"},        {"epoch", s.epoch},
                    {"step", s.step},        {"conf_loss", s.conf_loss},
                    {"recon_loss", s.recon_loss}, {"total", s.total},
                    {"c_mean", s.c_mean},    {"percentile", s.percentile}}
                   .dump();
        out += '\n';
    }
    for (const EpochRecord& e : log.epochs) {
        out += json{{"type", "epoch"},
                    {"epoch", e.epoch},
                    {"val_c_mean", e.val_c_mean},
                    {"val_total", e.val_total}}
                   .dump();
        out += '\n';
    }
    out += json{{"type", "summary"},
                {"target_hash_before", log.target_hash_before},
                {"target_hash_after", log.target_hash_after},
                {"final_val_c_mean", log.final_val_c_mean},
                {"final_val_total", log.final_val_total}}
               .dump();
    out += '\n';
    write_file(path, out);
}

json eval_report_json(const EvalReport& r) {
    auto curve = [](const PerturbationCurve& c) {
        return json{{"order", c.order},
                    {"fractions", c.fractions},
                    {"accuracy", c.accuracy}};
    };
    return {{"method", r.method},
            {"n_samples", r.n_samples},
            {"drop_pct", r.drop_pct},
            {"inc_pct", r.inc_pct},
            {"win_pct", r.win_pct},
            {"pos_auc", r.pos_auc},
            {"neg_auc", r.neg_auc},
            {"auc_d", r.auc_d},
            {"pos_curve", curve(r.pos_curve)},
            {"neg_curve", curve(r.neg_curve)}};
}

void write_eval_reports(const std::string& path, const std::vector<EvalReport>& reports,
                        const std::map<std::string, double>& win, const json& options) {
    json methods = json::array();
    for (const EvalReport& r : reports) methods.push_back(eval_report_json(r));
    json out{{"options", options}, {"methods", methods}, {"win_pct", win}};
    write_file(path, out.dump(2) + "\n");
}

void write_per_sample_csv(const std::string& path, const EvalReport& r) {
    std::string out = "index,drop_pct,pos_auc,neg_auc,auc_d\n";
    char buf[160];
    for (size_t i = 0; i < r.per_sample_drop.size(); ++i) {
        const double pos = r.per_sample_pos_auc[i], neg = r.per_sample_neg_auc[i];
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", i,
                      r.per_sample_drop[i], pos, neg, neg - pos);
        out += buf;
    }
    write_file(path, out);
}

void write_image_png(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw std::invalid_argument("png writer wants [3,H,W]");
    const int64_t h = image.dim(1), w = image.dim(2);
    std::vector<uint8_t> pixels(static_cast<size_t>(h * w * 3));
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
            for (int64_t c = 0; c < 3; ++c)
                pixels[static_cast<size_t>((i * w + j) * 3 + c)] =
                    to_byte(image[(c * h + i) * w + j]);
    write_png_bytes(path, pixels, h, w, 3);
}

void write_gray_png(const std::string& path, const Tensor& map) {
    if (map.rank() != 2) throw std::invalid_argument("gray png writer wants [H,W]");
    const int64_t h = map.dim(0), w = map.dim(1);
    std::vector<uint8_t> pixels(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < h * w; ++i) pixels[static_cast<size_t>(i)] = to_byte(map[i]);
    write_png_bytes(path, pixels, h, w, 1);
}

void write_image_ppm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw std::invalid_argument("ppm writer wants [3,H,W]");
    const int64_t h = image.dim(1), w = image.dim(2);
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + static_cast<size_t>(h * w * 3));
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
            for (int64_t c = 0; c < 3; ++c)
                out.push_back(static_cast<char>(to_byte(image[(c * h + i) * w + j])));
    write_file(path, out);
}

Tensor read_image(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw ConfigError("cannot read " + path);
    unsigned char sig[8] = {0};
    probe.read(reinterpret_cast<char*>(sig), 8);
    probe.close();
    if (png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
    return read_ppm(path);
}

Tensor colorize(const Tensor& map) {
    if (map.rank() != 2) throw std::invalid_argument("colorize wants [H,W]");
    const int64_t h = map.dim(0), w = map.dim(1);
    Tensor out({3, h, w});
    constexpr int kn = 10;
    for (int64_t i = 0; i < h * w; ++i) {
        const double t = clamp01(map[i]) * (kn - 1);
        const int lo = std::min(kn - 2, static_cast<int>(t));
        const double u = t - lo;
        for (int64_t c = 0; c < 3; ++c)
            out[c * h * w + i] =
                (1.0 - u) * kColormap[lo][c] + u * kColormap[lo + 1][c];
    }
    return out;
}

Tensor heatmap_overlay(const Tensor& image, const Tensor& saliency, double blend) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw std::invalid_argument("overlay wants an rgb image");
    const int64_t h = image.dim(1), w = image.dim(2);
    Tensor sal = saliency;
    if (sal.dim(0) != h || sal.dim(1) != w) sal = kernels::bilinear_upsample(sal, h);
    Tensor heat = colorize(sal);
    Tensor out({3, h, w});
    for (int64_t i = 0; i < 3 * h * w; ++i)
        out[i] = (1.0 - blend) * clamp01(image[i]) + blend * heat[i];
    return out;
}

Dataset load_image_dir(const std::string& dir, int64_t side) {
    if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir);
    const auto class_dirs = sorted_entries(dir, true);
    if (class_dirs.empty()) throw ConfigError("no class subdirectories in " + dir);
    std::vector<Tensor> images;
    std::vector<int64_t> labels;
    for (size_t cls = 0; cls < class_dirs.size(); ++cls)
        for (const std::string& f : sorted_entries(class_dirs[cls], false)) {
            Tensor img = read_image(f);
            if (img.dim(1) != side || img.dim(2) != side)
                img = kernels::bilinear_upsample(img, side);
            images.push_back(std::move(img));
            labels.push_back(static_cast<int64_t>(cls));
        }
    if (images.empty()) throw ConfigError("no readable images in " + dir);
    Dataset d;
    d.num_classes = static_cast<int64_t>(class_dirs.size());
    d.labels = std::move(labels);
    d.images = Tensor({static_cast<int64_t>(images.size()), 3, side, side});
    for (size_t i = 0; i < images.size(); ++i)
        std::copy(images[i].data(), images[i].data() + 3 * side * side,
                  d.images.data() + static_cast<int64_t>(i) * 3 * side * side);
    return d;
}

SplitDataset load_dataset(const std::string& selector, int64_t image_side,
                          uint64_t seed) {
    if (selector.rfind("shapes", 0) == 0) {
        ShapesSpec spec;
        spec.image_side = image_side;
        spec.seed = seed;
        std::vector<int64_t> parts;
        size_t pos = selector.find(':');
        while (pos != std::string::npos) {
            const size_t next = selector.find(':', pos + 1);
            parts.push_back(std::stoll(selector.substr(
                pos + 1, next == std::string::npos ? next : next - pos - 1)));
            pos = next;
        }
        if (parts.size() > 0) spec.n_train = parts[0];
        if (parts.size() > 1) spec.n_val = parts[1];
        if (parts.size() > 2) spec.num_classes = parts[2];
        return make_shapes_dataset(spec);
    }
    if (selector.rfind("cifar:", 0) == 0) return load_cifar_dir(selector.substr(6));
    // Directory of per-class subdirs; deterministic 80/20 split.
    Dataset all = load_image_dir(selector, image_side);
    std::vector<int64_t> order(all.size());
    for (int64_t i = 0; i < all.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    const int64_t n_val = std::max<int64_t>(1, all.size() / 5);
    const int64_t n_train = all.size() - n_val;
    const int64_t hw = 3 * image_side * image_side;
    SplitDataset split;
    split.train.num_classes = split.val.num_classes = all.num_classes;
    split.train.images = Tensor({n_train, 3, image_side, image_side});
    split.val.images = Tensor({n_val, 3, image_side, image_side});
    for (int64_t i = 0; i < all.size(); ++i) {
        Dataset& dst = i < n_train ? split.train : split.val;
        const int64_t di = i < n_train ? i : i - n_train;
        std::copy(all.images.data() + order[i] * hw, all.images.data() + (order[i] + 1) * hw,
                  dst.images.data() + di * hw);
        dst.labels.push_back(all.labels[static_cast<size_t>(order[i])]);
    }
    return split;
}

IniConfig IniConfig::parse(const std::string& text) {
    IniConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            cfg.sections[section];
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line is not key = value: " + line);
        cfg.sections[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return cfg;
}

IniConfig IniConfig::parse_file(const std::string& path) {
    return parse(read_file(path));
}

bool IniConfig::has(const std::string& section, const std::string& key) const {
    auto it = sections.find(section);
    return it != sections.end() && it->second.count(key) > 0;
}

std::string IniConfig::get(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
    auto it = sections.find(section);
    if (it == sections.end()) return fallback;
    auto kv = it->second.find(key);
    return kv == it->second.end() ? fallback : kv->second;
}

json RunManifest::to_json() const {
    return {{"command", command},
            {"config", config},
            {"seed", seed},
            {"artifact_paths", artifact_paths},
            {"code_version", code_version},
            {"created_at", created_at}};
}

RunManifest RunManifest::from_json(const json& j) {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<uint64_t>();
    m.artifact_paths = j.at("artifact_paths").get<std::vector<std::string>>();
    m.code_version = j.at("code_version").get<std::string>();
    m.created_at = j.at("created_at").get<std::string>();
    return m;
}

void write_manifest(const std::string& path, const RunManifest& m) {
    write_file(path, m.to_json().dump(2) + "\n");
}

RunManifest read_manifest(const std::string& path) {
    return RunManifest::from_json(json::parse(read_file(path)));
}

}  // namespace scan::io
