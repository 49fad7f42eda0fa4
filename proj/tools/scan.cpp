// Command-line surface: train toy classifiers, train the analysis decoder,
// emit explanations, run the evaluation/sanity/ablation protocols, and replay
// any recorded run from its manifest.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "scan/dataset.hpp"
#include "scan/errors.hpp"
#include "scan/eval.hpp"
#include "scan/explain.hpp"
#include "scan/hash.hpp"
#include "scan/io.hpp"
#include "scan/kernels.hpp"
#include "scan/models.hpp"
#include "scan/train.hpp"

namespace fs = std::filesystem;
using scan::io::json;

namespace {

std::string timestamp() {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> csv_strings(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

std::vector<double> csv_doubles(const std::string& s) {
    std::vector<double> out;
    for (const std::string& tok : csv_strings(s)) out.push_back(std::stod(tok));
    return out;
}

std::string p_tag(double p) {
    char buf[32];
    if (p == std::floor(p))
        std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(p));
    else
        std::snprintf(buf, sizeof buf, "%g", p);
    return buf;
}

void emit_manifest(const std::string& path, const std::string& command,
                   const json& config, uint64_t seed,
                   const std::vector<std::string>& artifacts) {
    scan::io::RunManifest m;
    m.command = command;
    m.config = config;
    m.seed = seed;
    m.artifact_paths = artifacts;
    m.code_version = scan::io::code_version();
    m.created_at = timestamp();
    scan::io::write_manifest(path, m);
}

void check_pairing(const scan::io::LoadedDecoder& ld, scan::TargetModel& target) {
    if (ld.meta.target_hash != target.weights_sha256())
        throw scan::ConfigError(
            "decoder was trained against a different classifier (weights hash "
            "mismatch); pass the matching target checkpoint");
}

// ---------------------------------------------------------------- train-target

struct TrainTargetOpts {
    std::string arch = "cnn";
    std::string dataset = "shapes";
    std::string out;
    int64_t epochs = 3;
    int64_t batch_size = 32;
    int64_t image_side = 32;
    int64_t width = 16;
    int64_t vit_dim = 128;
    int64_t vit_heads = 4;
    int64_t vit_depth = 6;
    int64_t vit_patch = 4;
    double lr = 1e-3;
    uint64_t seed = 7;
    uint64_t data_seed = 1;
    bool verbose = false;

    json to_json() const {
        return {{"arch", arch},         {"dataset", dataset},
                {"out", out},           {"epochs", epochs},
                {"batch_size", batch_size}, {"image_side", image_side},
                {"width", width},       {"vit_dim", vit_dim},
                {"vit_heads", vit_heads}, {"vit_depth", vit_depth},
                {"vit_patch", vit_patch}, {"lr", lr},
                {"seed", seed},         {"data_seed", data_seed},
                {"verbose", verbose}};
    }
    static TrainTargetOpts from_json(const json& j) {
        TrainTargetOpts o;
        o.arch = j.at("arch");
        o.dataset = j.at("dataset");
        o.out = j.at("out");
        o.epochs = j.at("epochs");
        o.batch_size = j.at("batch_size");
        o.image_side = j.at("image_side");
        o.width = j.at("width");
        o.vit_dim = j.at("vit_dim");
        o.vit_heads = j.at("vit_heads");
        o.vit_depth = j.at("vit_depth");
        o.vit_patch = j.at("vit_patch");
        o.lr = j.at("lr");
        o.seed = j.at("seed");
        o.data_seed = j.at("data_seed");
        o.verbose = j.at("verbose");
        return o;
    }
};

void run_train_target(TrainTargetOpts o, bool print_config) {
    if (o.out.empty())
        o.out = scan::io::cache_dir() + "/target_" + o.arch + "_seed" +
                std::to_string(o.seed) + ".ckpt";
    if (print_config) {
        std::cout << o.to_json().dump(2) << "\n";
        return;
    }
    const scan::SplitDataset data =
        scan::io::load_dataset(o.dataset, o.image_side, o.data_seed);
    scan::TargetConfig cfg;
    cfg.arch = scan::arch_from_name(o.arch);
    cfg.image_side = o.image_side;
    cfg.cnn_width = o.width;
    cfg.vit_dim = o.vit_dim;
    cfg.vit_heads = o.vit_heads;
    cfg.vit_depth = o.vit_depth;
    cfg.vit_patch = o.vit_patch;
    scan::TargetTrainOptions topt;
    topt.epochs = o.epochs;
    topt.batch_size = o.batch_size;
    topt.lr = o.lr;
    topt.seed = o.seed;
    topt.verbose = o.verbose;
    auto result = scan::train_toy_targets(data, cfg, topt);
    scan::io::save_target_checkpoint(o.out, *result.model);
    emit_manifest(o.out + ".manifest.json", "train-target", o.to_json(), o.seed,
                  {o.out});
    std::cout << "checkpoint: " << o.out << "\n";
    std::cout << "weights_sha256: " << result.model->weights_sha256() << "\n";
    std::printf("val_accuracy: %.4f\n", result.val_accuracy);
}

// ------------------------------------------------------------------ train-scan

struct TrainScanOpts {
    std::string target;
    std::string dataset = "shapes";
    std::string tap;
    std::string variant = "none";
    std::string decoder = "auto";
    std::string out;
    std::string log_path;
    double alpha = 4.0;
    double lambda = 0.1;
    double percentile = 95.0;
    double lr = 1e-3;
    int64_t epochs = 5;
    int64_t batch_size = 32;
    int64_t decoder_width = 32;
    int64_t decoder_floor = 16;
    int64_t decoder_blocks = 4;
    uint64_t seed = 1;
    uint64_t data_seed = 1;
    bool verbose = false;

    json to_json() const {
        return {{"target", target},   {"dataset", dataset},
                {"tap", tap},         {"variant", variant},
                {"decoder", decoder}, {"out", out},
                {"log_path", log_path}, {"alpha", alpha},
                {"lambda", lambda},   {"percentile", percentile},
                {"lr", lr},           {"epochs", epochs},
                {"batch_size", batch_size}, {"decoder_width", decoder_width},
                {"decoder_floor", decoder_floor}, {"decoder_blocks", decoder_blocks},
                {"seed", seed},       {"data_seed", data_seed},
                {"verbose", verbose}};
    }
    static TrainScanOpts from_json(const json& j) {
        TrainScanOpts o;
        o.target = j.at("target");
        o.dataset = j.at("dataset");
        o.tap = j.at("tap");
        o.variant = j.at("variant");
        o.decoder = j.at("decoder");
        o.out = j.at("out");
        o.log_path = j.at("log_path");
        o.alpha = j.at("alpha");
        o.lambda = j.at("lambda");
        o.percentile = j.at("percentile");
        o.lr = j.at("lr");
        o.epochs = j.at("epochs");
        o.batch_size = j.at("batch_size");
        o.decoder_width = j.at("decoder_width");
        o.decoder_floor = j.at("decoder_floor");
        o.decoder_blocks = j.at("decoder_blocks");
        o.seed = j.at("seed");
        o.data_seed = j.at("data_seed");
        o.verbose = j.at("verbose");
        return o;
    }
};

scan::TrainConfig scan_config_from(const TrainScanOpts& o) {
    scan::TrainConfig cfg;
    cfg.alpha = o.alpha;
    cfg.lambda = o.lambda;
    cfg.inference_percentile = o.percentile;
    cfg.epochs = o.epochs;
    cfg.batch_size = o.batch_size;
    cfg.learning_rate = o.lr;
    cfg.seed = o.seed;
    cfg.tap_layer = o.tap;
    cfg.decoder_base_width = o.decoder_width;
    cfg.decoder_width_floor = o.decoder_floor;
    cfg.decoder_attention_blocks = o.decoder_blocks;
    cfg.verbose = o.verbose;
    if (o.decoder != "auto")
        cfg.decoder_variant = scan::decoder_variant_from_name(o.decoder);
    if (o.variant != "none") cfg = scan::ablation_variant(cfg, scan::ablation_from_name(o.variant));
    return cfg;
}

void run_train_scan(TrainScanOpts o, bool print_config) {
    if (o.out.empty())
        o.out = scan::io::cache_dir() + "/scan_seed" + std::to_string(o.seed) +
                (o.variant == "none" ? "" : "_" + o.variant) + ".ckpt";
    if (o.log_path.empty()) o.log_path = o.out + ".log.jsonl";
    if (print_config) {
        std::cout << o.to_json().dump(2) << "\n";
        return;
    }
    auto target = scan::io::load_target_checkpoint(o.target);
    const scan::SplitDataset data =
        scan::io::load_dataset(o.dataset, target->config().image_side, o.data_seed);
    const scan::TrainConfig cfg = scan_config_from(o);

    scan::io::DecoderCheckpointMeta meta;
    meta.train_config = cfg;
    meta.target_hash = target->weights_sha256();
    meta.ablation = o.variant == "none" ? "" : o.variant;

    scan::ScanTrainResult salvage;
    try {
        scan::ScanTrainResult result = scan::train_scan(*target, data, cfg, &salvage);
        scan::io::save_decoder_checkpoint(o.out, *result.decoder, meta);
        scan::io::write_train_log(o.log_path, result.log);
        emit_manifest(o.out + ".manifest.json", "train-scan", o.to_json(), o.seed,
                      {o.out, o.log_path});
        std::cout << "decoder: " << o.out << "\n";
        std::cout << "log: " << o.log_path << "\n";
        std::printf("final_val_c_mean: %.4f (area target %.4f)\n",
                    result.log.final_val_c_mean, scan::core_math::area_target(cfg.alpha));
        std::printf("final_val_total: %.5f\n", result.log.final_val_total);
    } catch (const scan::TrainingError&) {
        if (salvage.decoder != nullptr) {
            const std::string rescue = o.out + ".last_good";
            scan::io::save_decoder_checkpoint(rescue, *salvage.decoder, meta);
            scan::io::write_train_log(o.log_path, salvage.log);
            std::cerr << "saved last-good decoder to " << rescue << "\n";
        }
        throw;
    }
}

// --------------------------------------------------------------------- explain

struct ExplainOpts {
    std::string decoder;
    std::string target;
    std::string image;
    std::string sweep;
    std::string out_dir = "explanations";
    int64_t class_idx = -1;
    double percentile = -1.0;  // <0: use the decoder's inference percentile
    bool coarse = false;

    json to_json() const {
        return {{"decoder", decoder}, {"target", target}, {"image", image},
                {"sweep", sweep},     {"out_dir", out_dir}, {"class_idx", class_idx},
                {"percentile", percentile}, {"coarse", coarse}};
    }
    static ExplainOpts from_json(const json& j) {
        ExplainOpts o;
        o.decoder = j.at("decoder");
        o.target = j.at("target");
        o.image = j.at("image");
        o.sweep = j.at("sweep");
        o.out_dir = j.at("out_dir");
        o.class_idx = j.at("class_idx");
        o.percentile = j.at("percentile");
        o.coarse = j.at("coarse");
        return o;
    }
};

void run_explain(ExplainOpts o, bool print_config) {
    if (print_config) {
        std::cout << o.to_json().dump(2) << "\n";
        return;
    }
    auto target = scan::io::load_target_checkpoint(o.target);
    scan::io::LoadedDecoder ld = scan::io::load_decoder_checkpoint(o.decoder);
    check_pairing(ld, *target);
    const double base_p = o.percentile >= 0.0
                              ? o.percentile
                              : ld.meta.train_config.inference_percentile;
    const std::vector<double> ps =
        o.sweep.empty() ? std::vector<double>{base_p} : csv_doubles(o.sweep);

    std::vector<std::pair<std::string, std::string>> inputs;  // (stem, path)
    if (fs::is_directory(o.image)) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(o.image))
            if (e.is_regular_file()) files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        for (const std::string& f : files) inputs.emplace_back(fs::path(f).stem().string(), f);
    } else {
        inputs.emplace_back(fs::path(o.image).stem().string(), o.image);
    }
    if (inputs.empty()) throw scan::ConfigError("no input images under " + o.image);

    const int64_t side = target->config().image_side;
    std::vector<std::string> artifacts;
    size_t failures = 0;
    for (const auto& [stem, path] : inputs) {
        scan::Tensor img;
        try {
            img = scan::io::read_image(path);
        } catch (const std::exception& e) {
            std::cerr << "warning: skipping " << path << ": " << e.what() << "\n";
            ++failures;
            continue;
        }
        if (img.dim(1) != side || img.dim(2) != side)
            img = scan::kernels::bilinear_upsample(img, side);
        const auto exps =
            scan::percentile_sweep(*ld.decoder, *target, img, o.class_idx, ps);
        for (const scan::Explanation& e : exps) {
            const std::string base =
                o.out_dir + "/" + stem + "_p" + p_tag(e.percentile_used);
            scan::io::save_saliency(base + "_saliency.bin", e.saliency.values);
            scan::io::write_gray_png(base + "_saliency.png", e.saliency.values);
            scan::io::write_image_png(base + "_overlay.png",
                                      scan::io::heatmap_overlay(img, e.saliency.values));
            scan::io::write_image_png(base + "_recon.png", e.reconstruction);
            artifacts.insert(artifacts.end(),
                             {base + "_saliency.bin", base + "_saliency.png",
                              base + "_overlay.png", base + "_recon.png"});
            if (o.coarse) {
                scan::io::save_saliency(base + "_coarse.bin", e.coarse_saliency);
                artifacts.push_back(base + "_coarse.bin");
            }
            std::printf("%s: class %lld p %s mean_confidence %.4f\n", stem.c_str(),
                        static_cast<long long>(e.target_class),
                        p_tag(e.percentile_used).c_str(), e.saliency.mean);
        }
    }
    if (failures == inputs.size())
        throw scan::ConfigError("no readable input images under " + o.image);
    emit_manifest(o.out_dir + "/manifest.json", "explain", o.to_json(),
                  static_cast<uint64_t>(0), artifacts);
    std::cout << "wrote " << artifacts.size() << " artifacts under " << o.out_dir
              << "\n";
}

// -------------------------------------------------------------------- evaluate

struct EvaluateOpts {
    std::string decoder;
    std::string target;
    std::string dataset = "shapes";
    std::string methods = "scan";
    std::string fractions = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
    std::string fill = "zero";
    std::string out_dir = "eval";
    int64_t n = 128;
    int64_t n_random = 10;
    int64_t batch_size = 32;
    int64_t n_boot = 1000;
    double percentile = -1.0;
    uint64_t seed = 0;
    uint64_t data_seed = 1;
    bool coarse = false;

    json to_json() const {
        return {{"decoder", decoder},   {"target", target},
                {"dataset", dataset},   {"methods", methods},
                {"fractions", fractions}, {"fill", fill},
                {"out_dir", out_dir},   {"n", n},
                {"n_random", n_random}, {"batch_size", batch_size},
                {"n_boot", n_boot},     {"percentile", percentile},
                {"seed", seed},         {"data_seed", data_seed},
                {"coarse", coarse}};
    }
    static EvaluateOpts from_json(const json& j) {
        EvaluateOpts o;
        o.decoder = j.at("decoder");
        o.target = j.at("target");
        o.dataset = j.at("dataset");
        o.methods = j.at("methods");
        o.fractions = j.at("fractions");
        o.fill = j.at("fill");
        o.out_dir = j.at("out_dir");
        o.n = j.at("n");
        o.n_random = j.at("n_random");
        o.batch_size = j.at("batch_size");
        o.n_boot = j.at("n_boot");
        o.percentile = j.at("percentile");
        o.seed = j.at("seed");
        o.data_seed = j.at("data_seed");
        o.coarse = j.at("coarse");
        return o;
    }
};

void print_report_table(const std::vector<scan::EvalReport>& reports) {
    std::printf("%-10s %8s %8s %8s %8s %8s %8s\n", "method", "Drop%", "Inc%", "Win%",
                "PosAUC", "NegAUC", "AUC-D");
    for (const scan::EvalReport& r : reports)
        std::printf("%-10s %8.2f %8.2f %8.2f %8.2f %8.2f %8.2f\n", r.method.c_str(),
                    r.drop_pct, r.inc_pct, r.win_pct, r.pos_auc, r.neg_auc, r.auc_d);
}

void run_evaluate(EvaluateOpts o, bool print_config) {
    if (print_config) {
        std::cout << o.to_json().dump(2) << "\n";
        return;
    }
    const std::vector<std::string> methods = csv_strings(o.methods);
    if (methods.empty()) throw scan::ConfigError("no methods requested");
    for (const std::string& m : methods)
        if (m != "scan" && m != "gradcam" && m != "random")
            throw scan::ConfigError("unknown method name: " + m);

    auto target = scan::io::load_target_checkpoint(o.target);
    const bool needs_decoder =
        std::find(methods.begin(), methods.end(), "scan") != methods.end();
    scan::io::LoadedDecoder ld;
    if (needs_decoder) {
        if (o.decoder.empty())
            throw scan::ConfigError("--decoder is required for the scan method");
        ld = scan::io::load_decoder_checkpoint(o.decoder);
        check_pairing(ld, *target);
    }

    const scan::SplitDataset split = scan::io::load_dataset(
        o.dataset, target->config().image_side, o.data_seed);
    const scan::Dataset ds = scan::subset(split.val, std::min(o.n, split.val.size()));
    const auto classes = scan::predict_classes(*target, ds.images);

    scan::EvalOptions eopt;
    eopt.fractions = csv_doubles(o.fractions);
    eopt.batch_size = o.batch_size;
    if (scan::fill_mode_from_name(o.fill) == scan::FillMode::dataset_mean) {
        const auto means = scan::channel_means(ds);
        for (int c = 0; c < 3; ++c)
            eopt.fill[c] = (means[c] - target->norm_mean[c]) / target->norm_std[c];
    }

    const double scan_p = o.percentile >= 0.0
                              ? o.percentile
                              : (needs_decoder
                                     ? ld.meta.train_config.inference_percentile
                                     : 95.0);

    std::vector<scan::EvalReport> reports;
    std::map<std::string, std::vector<double>> drops;
    for (const std::string& m : methods) {
        if (m == "scan") {
            std::vector<scan::Tensor> sals;
            sals.reserve(static_cast<size_t>(ds.size()));
            for (int64_t i = 0; i < ds.size(); ++i) {
                const scan::Explanation e = scan::explain(*ld.decoder, *target,
                                                          ds.image(i), classes[i],
                                                          scan_p);
                sals.push_back(o.coarse ? e.coarse_saliency : e.saliency.values);
            }
            reports.push_back(scan::evaluate_saliency(*target, ds.images, sals,
                                                      classes, m, eopt));
            drops[m] = reports.back().per_sample_drop;
        } else if (m == "gradcam") {
            std::vector<scan::Tensor> sals;
            sals.reserve(static_cast<size_t>(ds.size()));
            for (int64_t i = 0; i < ds.size(); ++i)
                sals.push_back(scan::gradcam_lite(*target, ds.image(i), classes[i]));
            reports.push_back(scan::evaluate_saliency(*target, ds.images, sals,
                                                      classes, m, eopt));
            drops[m] = reports.back().per_sample_drop;
        } else {
            reports.push_back(scan::random_saliency_calibration(
                *target, ds.images, classes, o.n_random, o.seed, eopt));
            // Per-image mean over the random draws so the win table compares
            // aligned samples.
            std::vector<double> folded(static_cast<size_t>(ds.size()), 0.0);
            const auto& raw = reports.back().per_sample_drop;
            for (int64_t i = 0; i < ds.size(); ++i) {
                for (int64_t k = 0; k < o.n_random; ++k)
                    folded[static_cast<size_t>(i)] +=
                        raw[static_cast<size_t>(i * o.n_random + k)];
                folded[static_cast<size_t>(i)] /= static_cast<double>(o.n_random);
            }
            drops[m] = std::move(folded);
        }
    }
    std::map<std::string, double> win;
    if (methods.size() > 1) {
        win = scan::win_metric(drops);
        for (scan::EvalReport& r : reports) r.win_pct = win.at(r.method);
    }

    json options{{"fractions", eopt.fractions}, {"fill", eopt.fill},
                 {"n", ds.size()},              {"n_random", o.n_random},
                 {"coarse", o.coarse},          {"scan_percentile", scan_p},
                 {"seed", o.seed}};
    json jreports = json::array();
    std::vector<std::string> artifacts;
    const std::string report_path = o.out_dir + "/report.json";
    for (scan::EvalReport& r : reports) {
        const std::string csv = o.out_dir + "/" + r.method + "_per_sample.csv";
        scan::io::write_per_sample_csv(csv, r);
        artifacts.push_back(csv);
        json jr = scan::io::eval_report_json(r);
        jr["bootstrap_p_auc_d"] = scan::bootstrap_p_auc_d(
            r.per_sample_pos_auc, r.per_sample_neg_auc, o.n_boot, o.seed);
        jreports.push_back(std::move(jr));
    }
    json out{{"options", options}, {"methods", jreports}, {"win_pct", win}};
    scan::io::write_file(report_path, out.dump(2) + "\n");
    artifacts.insert(artifacts.begin(), report_path);
    emit_manifest(o.out_dir + "/manifest.json", "evaluate", o.to_json(), o.seed,
                  artifacts);
    print_report_table(reports);
    std::cout << "report: " << report_path << "\n";
}

// ---------------------------------------------------------------------- sanity

struct SanityOpts {
    std::string decoder;
    std::string target;
    std::string dataset = "shapes";
    std::string fractions = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
    std::string out_dir = "sanity";
    int64_t n = 96;
    int64_t label_epochs = 3;
    int64_t batch_size = 32;
    uint64_t seed = 11;
    uint64_t data_seed = 1;
    bool coarse = false;

    json to_json() const {
        return {{"decoder", decoder},   {"target", target},
                {"dataset", dataset},   {"fractions", fractions},
                {"out_dir", out_dir},   {"n", n},
                {"label_epochs", label_epochs}, {"batch_size", batch_size},
                {"seed", seed},         {"data_seed", data_seed},
                {"coarse", coarse}};
    }
    static SanityOpts from_json(const json& j) {
        SanityOpts o;
        o.decoder = j.at("decoder");
        o.target = j.at("target");
        o.dataset = j.at("dataset");
        o.fractions = j.at("fractions");
        o.out_dir = j.at("out_dir");
        o.n = j.at("n");
        o.label_epochs = j.at("label_epochs");
        o.batch_size = j.at("batch_size");
        o.seed = j.at("seed");
        o.data_seed = j.at("data_seed");
        o.coarse = j.at("coarse");
        return o;
    }
};

scan::EvalReport sanity_eval(scan::TargetModel& model, scan::Decoder& decoder,
                             const scan::Dataset& ds, double p, bool coarse,
                             const scan::EvalOptions& eopt, const std::string& name) {
    const auto classes = scan::predict_classes(model, ds.images);
    std::vector<scan::Tensor> sals;
    sals.reserve(static_cast<size_t>(ds.size()));
    for (int64_t i = 0; i < ds.size(); ++i) {
        const scan::Explanation e =
            scan::explain(decoder, model, ds.image(i), classes[i], p);
        sals.push_back(coarse ? e.coarse_saliency : e.saliency.values);
    }
    return scan::evaluate_saliency(model, ds.images, sals, classes, name, eopt);
}

void run_sanity(SanityOpts o, bool print_config) {
    if (print_config) {
        std::cout << o.to_json().dump(2) << "\n";
        return;
    }
    auto target = scan::io::load_target_checkpoint(o.target);
    scan::io::LoadedDecoder ld = scan::io::load_decoder_checkpoint(o.decoder);
    check_pairing(ld, *target);
    const scan::SplitDataset data = scan::io::load_dataset(
        o.dataset, target->config().image_side, o.data_seed);
    const scan::Dataset ds = scan::subset(data.val, std::min(o.n, data.val.size()));
    scan::EvalOptions eopt;
    eopt.fractions = csv_doubles(o.fractions);
    eopt.batch_size = o.batch_size;
    const double p = ld.meta.train_config.inference_percentile;

    // The explanation pipeline is re-run end to end against each randomized
    // classifier: fresh decoder training included, since the method under
    // test is (decoder training + explanation), not a fixed decoder.
    scan::TrainConfig tcfg = ld.meta.train_config;

    const scan::EvalReport intact =
        sanity_eval(*target, *ld.decoder, ds, p, o.coarse, eopt, "intact");

    auto wt = scan::sanity_randomize(*target, scan::SanityMode::weights, o.seed);
    auto wt_dec = scan::train_scan(*wt, data, tcfg);
    const scan::EvalReport wrand = sanity_eval(*wt, *wt_dec.decoder, ds, p, o.coarse,
                                               eopt, "weight_randomized");

    auto lt = scan::sanity_randomize(*target, scan::SanityMode::labels, o.seed, &data,
                                     o.label_epochs);
    auto lt_dec = scan::train_scan(*lt, data, tcfg);
    const scan::EvalReport lrand = sanity_eval(*lt, *lt_dec.decoder, ds, p, o.coarse,
                                               eopt, "label_randomized");

    json rows = json::array();
    for (const scan::EvalReport* r : {&intact, &wrand, &lrand})
        rows.push_back(scan::io::eval_report_json(*r));
    json out{{"rows", rows},
             {"ordering_holds",
              std::abs(wrand.auc_d) < std::abs(lrand.auc_d) &&
                  std::abs(lrand.auc_d) < std::abs(intact.auc_d)}};
    const std::string report_path = o.out_dir + "/sanity_report.json";
    scan::io::write_file(report_path, out.dump(2) + "\n");
    emit_manifest(o.out_dir + "/manifest.json", "sanity", o.to_json(), o.seed,
                  {report_path});
    print_report_table({intact, wrand, lrand});
    std::cout << "report: " << report_path << "\n";
}

// ---------------------------------------------------------------------- ablate

struct AblateOpts {
    std::string target;
    std::string dataset = "shapes";
    std::string alphas;
    std::string percentiles;
    std::string layers;
    std::string components;
    std::string fractions = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
    std::string out_dir = "ablation";
    double alpha = 4.0;
    double lambda = 0.1;
    double lr = 1e-3;
    int64_t epochs = 5;
    int64_t batch_size = 32;
    int64_t n = 96;
    uint64_t seed = 1;
    uint64_t data_seed = 1;
    bool verbose = false;

    json to_json() const {
        return {{"target", target},       {"dataset", dataset},
                {"alphas", alphas},       {"percentiles", percentiles},
                {"layers", layers},       {"components", components},
                {"fractions", fractions}, {"out_dir", out_dir},
                {"alpha", alpha},         {"lambda", lambda},
                {"lr", lr},               {"epochs", epochs},
                {"batch_size", batch_size}, {"n", n},
                {"seed", seed},           {"data_seed", data_seed},
                {"verbose", verbose}};
    }
    static AblateOpts from_json(const json& j) {
        AblateOpts o;
        o.target = j.at("target");
        o.dataset = j.at("dataset");
        o.alphas = j.at("alphas");
        o.percentiles = j.at("percentiles");
        o.layers = j.at("layers");
        o.components = j.at("components");
        o.fractions = j.at("fractions");
        o.out_dir = j.at("out_dir");
        o.alpha = j.at("alpha");
        o.lambda = j.at("lambda");
        o.lr = j.at("lr");
        o.epochs = j.at("epochs");
        o.batch_size = j.at("batch_size");
        o.n = j.at("n");
        o.seed = j.at("seed");
        o.data_seed = j.at("data_seed");
        o.verbose = j.at("verbose");
        return o;
    }
};

void run_ablate(AblateOpts o, bool print_config) {
    if (print_config) {
        std::cout << o.to_json().dump(2) << "\n";
        return;
    }
    if (o.alphas.empty() && o.percentiles.empty() && o.layers.empty() &&
        o.components.empty())
        throw scan::ConfigError("empty ablation grid: pass at least one of "
                                "--alphas/--percentiles/--layers/--components");
    auto target = scan::io::load_target_checkpoint(o.target);
    const scan::SplitDataset data = scan::io::load_dataset(
        o.dataset, target->config().image_side, o.data_seed);
    const scan::Dataset ds = scan::subset(data.val, std::min(o.n, data.val.size()));
    const auto classes = scan::predict_classes(*target, ds.images);
    scan::EvalOptions eopt;
    eopt.fractions = csv_doubles(o.fractions);
    eopt.batch_size = o.batch_size;

    scan::TrainConfig base;
    base.alpha = o.alpha;
    base.lambda = o.lambda;
    base.epochs = o.epochs;
    base.batch_size = o.batch_size;
    base.learning_rate = o.lr;
    base.seed = o.seed;
    base.verbose = o.verbose;

    auto eval_decoder = [&](scan::Decoder& dec, double p, const std::string& name) {
        std::vector<scan::Tensor> sals;
        sals.reserve(static_cast<size_t>(ds.size()));
        for (int64_t i = 0; i < ds.size(); ++i)
            sals.push_back(
                scan::explain(dec, *target, ds.image(i), classes[i], p).saliency.values);
        return scan::evaluate_saliency(*target, ds.images, sals, classes, name, eopt);
    };
    auto sweep_json = [](const std::string& sweep, const json& grid,
                         const std::vector<scan::EvalReport>& rows) {
        json cols = json::array();
        for (const scan::EvalReport& r : rows) {
            json jr = scan::io::eval_report_json(r);
            jr.erase("pos_curve");
            jr.erase("neg_curve");
            cols.push_back(std::move(jr));
        }
        return json{{"sweep", sweep}, {"grid", grid}, {"columns", cols}};
    };

    std::vector<std::string> artifacts;
    auto emit_sweep = [&](const std::string& name, const json& table) {
        const std::string path = o.out_dir + "/" + name + "_sweep.json";
        scan::io::write_file(path, table.dump(2) + "\n");
        artifacts.push_back(path);
        std::cout << "wrote " << path << "\n";
    };

    if (!o.alphas.empty()) {
        const auto grid = csv_doubles(o.alphas);
        std::vector<scan::EvalReport> rows;
        for (double a : grid) {
            scan::TrainConfig cfg = base;
            cfg.alpha = a;
            auto r = scan::train_scan(*target, data, cfg);
            rows.push_back(eval_decoder(*r.decoder, cfg.inference_percentile,
                                        "alpha_" + p_tag(a)));
            print_report_table({rows.back()});
        }
        emit_sweep("alpha", sweep_json("alpha", grid, rows));
    }
    if (!o.percentiles.empty()) {
        // One decoder trained under the usual randomized-percentile schedule,
        // swept over inference-time percentiles.
        const auto grid = csv_doubles(o.percentiles);
        auto r = scan::train_scan(*target, data, base);
        std::vector<scan::EvalReport> rows;
        for (double p : grid) {
            rows.push_back(eval_decoder(*r.decoder, p, "p_" + p_tag(p)));
            print_report_table({rows.back()});
        }
        emit_sweep("percentile", sweep_json("percentile", grid, rows));
    }
    if (!o.layers.empty()) {
        const auto grid = csv_strings(o.layers);
        std::vector<scan::EvalReport> rows;
        for (const std::string& tap : grid) {
            scan::TrainConfig cfg = base;
            cfg.tap_layer = tap;
            auto r = scan::train_scan(*target, data, cfg);
            rows.push_back(eval_decoder(*r.decoder, cfg.inference_percentile, tap));
            print_report_table({rows.back()});
        }
        emit_sweep("layer", sweep_json("layer", grid, rows));
    }
    if (!o.components.empty()) {
        const auto grid = csv_strings(o.components);
        std::vector<scan::EvalReport> rows;
        for (const std::string& comp : grid) {
            scan::TrainConfig cfg = base;
            if (comp != "none")
                cfg = scan::ablation_variant(cfg, scan::ablation_from_name(comp));
            auto r = scan::train_scan(*target, data, cfg);
            rows.push_back(eval_decoder(*r.decoder, cfg.inference_percentile, comp));
            print_report_table({rows.back()});
        }
        emit_sweep("component", sweep_json("component", grid, rows));
    }
    emit_manifest(o.out_dir + "/manifest.json", "ablate", o.to_json(), o.seed,
                  artifacts);
}

// ----------------------------------------------------------------------- rerun

void run_rerun(const std::string& manifest_path) {
    const scan::io::RunManifest m = scan::io::read_manifest(manifest_path);
    if (m.command == "train-target")
        run_train_target(TrainTargetOpts::from_json(m.config), false);
    else if (m.command == "train-scan")
        run_train_scan(TrainScanOpts::from_json(m.config), false);
    else if (m.command == "explain")
        run_explain(ExplainOpts::from_json(m.config), false);
    else if (m.command == "evaluate")
        run_evaluate(EvaluateOpts::from_json(m.config), false);
    else if (m.command == "sanity")
        run_sanity(SanityOpts::from_json(m.config), false);
    else if (m.command == "ablate")
        run_ablate(AblateOpts::from_json(m.config), false);
    else
        throw scan::ConfigError("manifest records unknown command: " + m.command);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"self-confidence saliency maps from reconstruction decoders"};
    app.require_subcommand(1);
    app.set_version_flag("--version", scan::io::code_version());
    app.set_config("--config", "", "sectioned key=value config file");

    TrainTargetOpts tt;
    bool tt_print = false;
    CLI::App* c_tt = app.add_subcommand("train-target", "train and freeze a toy classifier");
    c_tt->add_option("--arch", tt.arch)->check(CLI::IsMember({"cnn", "vit"}));
    c_tt->add_option("--dataset", tt.dataset, "shapes[:train[:val[:classes]]], cifar:<dir>, or image dir");
    c_tt->add_option("--out", tt.out, "checkpoint path");
    c_tt->add_option("--epochs", tt.epochs);
    c_tt->add_option("--batch-size", tt.batch_size);
    c_tt->add_option("--image-side", tt.image_side);
    c_tt->add_option("--width", tt.width, "cnn stem width");
    c_tt->add_option("--vit-dim", tt.vit_dim);
    c_tt->add_option("--vit-heads", tt.vit_heads);
    c_tt->add_option("--vit-depth", tt.vit_depth);
    c_tt->add_option("--vit-patch", tt.vit_patch);
    c_tt->add_option("--lr", tt.lr);
    c_tt->add_option("--seed", tt.seed);
    c_tt->add_option("--data-seed", tt.data_seed);
    c_tt->add_flag("--verbose", tt.verbose);
    c_tt->add_flag("--print-config", tt_print, "print resolved options and exit");
    c_tt->callback([&] { run_train_target(tt, tt_print); });

    TrainScanOpts ts;
    bool ts_print = false;
    CLI::App* c_ts = app.add_subcommand("train-scan", "train the analysis decoder against a frozen classifier");
    c_ts->add_option("--target", ts.target, "classifier checkpoint")->required();
    c_ts->add_option("--dataset", ts.dataset);
    c_ts->add_option("--tap-layer", ts.tap, "default: architecture's midpoint tap");
    c_ts->add_option("--alpha", ts.alpha, "area-constraint strength");
    c_ts->add_option("--lambda", ts.lambda, "confidence-loss offset");
    c_ts->add_option("--percentile", ts.percentile, "inference-time masking percentile");
    c_ts->add_option("--epochs", ts.epochs);
    c_ts->add_option("--batch-size", ts.batch_size);
    c_ts->add_option("--lr", ts.lr);
    c_ts->add_option("--seed", ts.seed);
    c_ts->add_option("--data-seed", ts.data_seed);
    c_ts->add_option("--variant", ts.variant, "component ablation")
        ->check(CLI::IsMember({"none", "alpha_one", "no_gradient_mask", "no_blur",
                               "sigmoid_conf"}));
    c_ts->add_option("--decoder", ts.decoder)
        ->check(CLI::IsMember({"auto", "residual", "transformer"}));
    c_ts->add_option("--decoder-width", ts.decoder_width);
    c_ts->add_option("--decoder-floor", ts.decoder_floor);
    c_ts->add_option("--decoder-blocks", ts.decoder_blocks);
    c_ts->add_option("--out", ts.out, "decoder checkpoint path");
    c_ts->add_option("--log", ts.log_path, "training-curve jsonl path");
    c_ts->add_flag("--verbose", ts.verbose);
    c_ts->add_flag("--print-config", ts_print, "print resolved options and exit");
    c_ts->callback([&] { run_train_scan(ts, ts_print); });

    ExplainOpts ex;
    bool ex_print = false;
    CLI::App* c_ex = app.add_subcommand("explain", "emit saliency and reconstruction artifacts for images");
    c_ex->add_option("--decoder", ex.decoder)->required();
    c_ex->add_option("--target", ex.target)->required();
    c_ex->add_option("--image", ex.image, "image file or directory")->required();
    c_ex->add_option("--class", ex.class_idx, "class index; -1 = predicted");
    c_ex->add_option("--percentile", ex.percentile,
                     "masking percentile; default: decoder's inference value (95)");
    c_ex->add_option("--sweep", ex.sweep, "comma list of percentiles, e.g. 10,60,90");
    c_ex->add_option("--out-dir", ex.out_dir);
    c_ex->add_flag("--coarse", ex.coarse, "also write pooled-resolution containers");
    c_ex->add_flag("--print-config", ex_print, "print resolved options and exit");
    c_ex->callback([&] { run_explain(ex, ex_print); });

    EvaluateOpts ev;
    bool ev_print = false;
    CLI::App* c_ev = app.add_subcommand("evaluate", "faithfulness metrics for one or more methods");
    c_ev->add_option("--decoder", ev.decoder, "required when methods include scan");
    c_ev->add_option("--target", ev.target)->required();
    c_ev->add_option("--dataset", ev.dataset);
    c_ev->add_option("--methods", ev.methods, "comma list of scan,gradcam,random");
    c_ev->add_option("--fractions", ev.fractions, "perturbation removal fractions");
    c_ev->add_option("--fill", ev.fill)->check(CLI::IsMember({"zero", "mean"}));
    c_ev->add_option("--n", ev.n, "evaluation images");
    c_ev->add_option("--n-random", ev.n_random, "random maps per image");
    c_ev->add_option("--batch-size", ev.batch_size);
    c_ev->add_option("--n-boot", ev.n_boot, "bootstrap resamples");
    c_ev->add_option("--percentile", ev.percentile,
                     "scan masking percentile; default: decoder's inference value");
    c_ev->add_option("--seed", ev.seed);
    c_ev->add_option("--data-seed", ev.data_seed);
    c_ev->add_option("--out-dir", ev.out_dir);
    c_ev->add_flag("--coarse", ev.coarse, "pool scan saliency to tap resolution first");
    c_ev->add_flag("--print-config", ev_print, "print resolved options and exit");
    c_ev->callback([&] { run_evaluate(ev, ev_print); });

    SanityOpts sa;
    bool sa_print = false;
    CLI::App* c_sa = app.add_subcommand("sanity", "randomization tests: intact vs weight/label-randomized targets");
    c_sa->add_option("--decoder", sa.decoder)->required();
    c_sa->add_option("--target", sa.target)->required();
    c_sa->add_option("--dataset", sa.dataset);
    c_sa->add_option("--fractions", sa.fractions);
    c_sa->add_option("--n", sa.n, "evaluation images");
    c_sa->add_option("--label-epochs", sa.label_epochs, "retraining epochs on permuted labels");
    c_sa->add_option("--batch-size", sa.batch_size);
    c_sa->add_option("--seed", sa.seed, "randomization seed");
    c_sa->add_option("--data-seed", sa.data_seed);
    c_sa->add_option("--out-dir", sa.out_dir);
    c_sa->add_flag("--coarse", sa.coarse);
    c_sa->add_flag("--print-config", sa_print, "print resolved options and exit");
    c_sa->callback([&] { run_sanity(sa, sa_print); });

    AblateOpts ab;
    bool ab_print = false;
    CLI::App* c_ab = app.add_subcommand("ablate", "train+evaluate sweeps over alphas, percentiles, taps, components");
    c_ab->add_option("--target", ab.target)->required();
    c_ab->add_option("--dataset", ab.dataset);
    c_ab->add_option("--alphas", ab.alphas, "e.g. 2,4,8,16");
    c_ab->add_option("--percentiles", ab.percentiles, "e.g. 0,30,50,60,70,80,90,95");
    c_ab->add_option("--layers", ab.layers, "comma list of tap names");
    c_ab->add_option("--components", ab.components,
                     "comma list of none,alpha_one,no_gradient_mask,no_blur,sigmoid_conf");
    c_ab->add_option("--fractions", ab.fractions);
    c_ab->add_option("--alpha", ab.alpha, "base alpha for non-alpha sweeps");
    c_ab->add_option("--lambda", ab.lambda);
    c_ab->add_option("--lr", ab.lr);
    c_ab->add_option("--epochs", ab.epochs);
    c_ab->add_option("--batch-size", ab.batch_size);
    c_ab->add_option("--n", ab.n, "evaluation images");
    c_ab->add_option("--seed", ab.seed);
    c_ab->add_option("--data-seed", ab.data_seed);
    c_ab->add_option("--out-dir", ab.out_dir);
    c_ab->add_flag("--verbose", ab.verbose);
    c_ab->add_flag("--print-config", ab_print, "print resolved options and exit");
    c_ab->callback([&] { run_ablate(ab, ab_print); });

    std::string rerun_path;
    CLI::App* c_rr = app.add_subcommand("rerun", "replay a recorded run from its manifest");
    c_rr->add_option("manifest", rerun_path, "manifest.json of a previous run")->required();
    c_rr->callback([&] { run_rerun(rerun_path); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const scan::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const scan::TrainingError& e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
