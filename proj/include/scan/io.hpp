#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "scan/dataset.hpp"
#include "scan/decoder.hpp"
#include "scan/eval.hpp"
#include "scan/models.hpp"
#include "scan/tensor.hpp"
#include "scan/train.hpp"

namespace scan::io {

using json = nlohmann::json;

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);
void ensure_parent_dir(const std::string& path);
void ensure_dir(const std::string& path);

// SCAN_CACHE_DIR, or ./scan_cache when unset.
std::string cache_dir();
std::string code_version();

// Config <-> JSON (string-keyed, stable ordering for byte-identical dumps).
json target_config_json(const TargetConfig& cfg);
TargetConfig target_config_from_json(const json& j);
json decoder_config_json(const DecoderConfig& cfg);
DecoderConfig decoder_config_from_json(const json& j);
json train_config_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const json& j);

// Checkpoints: 8-byte magic, little-endian u64 header length, JSON header
// (kind, config, tensor index), then raw f64 tensor data in index order.
void save_target_checkpoint(const std::string& path, TargetModel& model);
std::unique_ptr<TargetModel> load_target_checkpoint(const std::string& path);

struct DecoderCheckpointMeta {
    TrainConfig train_config;
    std::string target_hash;  // weights hash of the frozen classifier
    std::string ablation;     // empty when none
};

void save_decoder_checkpoint(const std::string& path, Decoder& decoder,
                             const DecoderCheckpointMeta& meta);

struct LoadedDecoder {
    std::unique_ptr<Decoder> decoder;
    DecoderCheckpointMeta meta;
};

LoadedDecoder load_decoder_checkpoint(const std::string& path);

// Raw saliency interchange: 16-byte header (magic "SCNM", u32 version, u32
// height, u32 width), then row-major float32.
void save_saliency(const std::string& path, const Tensor& map);
Tensor load_saliency(const std::string& path);

// Training curve as JSON lines: step records, epoch records, one summary.
void write_train_log(const std::string& path, const TrainLog& log);

json eval_report_json(const EvalReport& r);
// Consolidated multi-method report; win table included when present.
void write_eval_reports(const std::string& path,
                        const std::vector<EvalReport>& reports,
                        const std::map<std::string, double>& win,
                        const json& options);
void write_per_sample_csv(const std::string& path, const EvalReport& r);

// Images are [3,H,W] (or [H,W] grayscale) in [0,1].
void write_image_png(const std::string& path, const Tensor& image);
void write_gray_png(const std::string& path, const Tensor& map);
void write_image_ppm(const std::string& path, const Tensor& image);
Tensor read_image(const std::string& path);  // PNG or PPM (P5/P6)

// Fixed perceptually uniform colormap ([H,W] -> [3,H,W]).
Tensor colorize(const Tensor& map);
Tensor heatmap_overlay(const Tensor& image, const Tensor& saliency,
                       double blend = 0.5);

// Per-class subdirectories of PNG/PPM files; images resized to `side`.
Dataset load_image_dir(const std::string& dir, int64_t side);

// Dataset selector used by the CLI: "shapes[:n_train[:n_val]]",
// "cifar:<dir>" or a directory of per-class subdirs.
SplitDataset load_dataset(const std::string& selector, int64_t image_side,
                          uint64_t seed);

// Sectioned key/value text: [section], key = value, # or ; comments.
struct IniConfig {
    std::map<std::string, std::map<std::string, std::string>> sections;

    static IniConfig parse(const std::string& text);
    static IniConfig parse_file(const std::string& path);
    bool has(const std::string& section, const std::string& key) const;
    std::string get(const std::string& section, const std::string& key,
                    const std::string& fallback = "") const;
};

struct RunManifest {
    std::string command;
    json config;  // full resolved option set
    uint64_t seed = 0;
    std::vector<std::string> artifact_paths;
    std::string code_version;
    std::string created_at;  // timestamps live only here

    json to_json() const;
    static RunManifest from_json(const json& j);
};

void write_manifest(const std::string& path, const RunManifest& m);
RunManifest read_manifest(const std::string& path);

}  // namespace scan::io
