#include "scan/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>

#include "scan/kernels.hpp"
#include "scan/rng.hpp"

namespace scan {

namespace fs = std::filesystem;

Tensor Dataset::image(int64_t i) const {
    const int64_t side = image_side();
    const int64_t n = 3 * side * side;
    Tensor out({3, side, side});
    const double* src = images.data() + i * n;
    std::copy(src, src + n, out.data());
    return out;
}

namespace {

// Approximate signed distance into the shape (positive inside), per class.
double shape_distance(int64_t cls, double dx, double dy, double r) {
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (cls) {
        case 0: return r - std::sqrt(dx * dx + dy * dy);  // disc
        case 1: {                                         // plus sign
            const double t = 0.38 * r;
            return std::max(std::min(t - ay, r - ax), std::min(t - ax, r - ay));
        }
        case 2: return r - std::max(ax, ay);              // square
        default:                                          // triangle
            return std::min(dy + r, ((r - dy) * 0.5 - ax) * 0.8944);
    }
}



struct ShapeParams {
    int64_t cls = 0;
    double cx = 0, cy = 0, r = 0;
    double tint[3] = {0, 0, 0};
};

ShapeParams draw_shape(int64_t num_classes, int64_t side, Rng& rng) {
    ShapeParams p;
    p.cls = static_cast<int64_t>(rng.below(static_cast<uint64_t>(num_classes)));
    p.r = rng.uniform(0.20 * static_cast<double>(side), 0.30 * static_cast<double>(side));
    p.cx = rng.uniform(p.r + 1.0, static_cast<double>(side) - p.r - 1.0);
    p.cy = rng.uniform(p.r + 1.0, static_cast<double>(side) - p.r - 1.0);
    // The tint is a bright nuisance color shared across classes; only the
    // geometry carries the label, so class gradients concentrate on the
    // shape instead of on global color statistics.
    for (int64_t c = 0; c < 3; ++c) p.tint[c] = rng.uniform(0.78, 0.88);
    return p;
}

// Composites one shape over a fresh random background. The background mixes
// a global color with a low-frequency field so it keeps entropy at every
// scale the recon target preserves, while class evidence stays at the shape.
void composite(double* img, int64_t side, double cx, double cy,
               const double* tint, const std::function<double(double, double)>& sdf) {
    // Soft edge: a couple of pixels of falloff keeps the blurred target
    // reconstructable from coarse position information.
    const int64_t hw = side * side;
    const double edge = 1.0;
    for (int64_t y = 0; y < side; ++y)
        for (int64_t x = 0; x < side; ++x) {
            const double dist = sdf(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
            const double a = std::clamp(0.5 + dist / edge, 0.0, 1.0);
            if (a <= 0.0) continue;
            for (int64_t c = 0; c < 3; ++c) {
                double& px = img[c * hw + y * side + x];
                px = (1.0 - a) * px + a * tint[c];
            }
        }
}

void render_shape(const ShapeParams& sp, int64_t side, Rng& rng, double* img) {
    const int64_t hw = side * side;
    Tensor ctrl({3, 4, 4});
    double base[3];
    // The background is a high-amplitude low-frequency field: smooth enough
    // to classify over, but not reconstructable without feature evidence.
    for (int64_t c = 0; c < 3; ++c) base[c] = rng.uniform(0.10, 0.40);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t j = 0; j < 16; ++j)
            ctrl[c * 16 + j] = base[c] + rng.uniform(-0.30, 0.30);
    Tensor field = kernels::bilinear_upsample(ctrl, side);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t p = 0; p < hw; ++p)
            img[c * hw + p] =
                std::clamp(field[c * hw + p] + rng.uniform(-0.02, 0.02), 0.0, 0.58);

    // A class-irrelevant decoy: a small near-black disc. It is as cheap to
    // reconstruct as the labeled shape (fixed dark tint, position carried by
    // local features) but carries no class evidence, so only a
    // class-gradient mask separates the two.
    const double dr = rng.uniform(0.10 * static_cast<double>(side),
                                  0.14 * static_cast<double>(side));
    double dx = 0.0, dy = 0.0;
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
        dx = rng.uniform(dr + 1.0, static_cast<double>(side) - dr - 1.0);
        dy = rng.uniform(dr + 1.0, static_cast<double>(side) - dr - 1.0);
        placed = std::hypot(dx - sp.cx, dy - sp.cy) - dr - sp.r >= 2.0;
    }
    if (placed) {
        double dtint[3];
        for (int64_t c = 0; c < 3; ++c) dtint[c] = rng.uniform(0.04, 0.12);
        composite(img, side, dx, dy, dtint, [dr](double px, double py) {
            return dr - std::hypot(px, py);
        });
    }

    composite(img, side, sp.cx, sp.cy, sp.tint, [&sp](double px, double py) {
        return shape_distance(sp.cls, px, py, sp.r);
    });
}

Dataset generate_shapes(int64_t n, int64_t num_classes, int64_t side, Rng& rng,
                        int64_t bg_variants) {
    Dataset d;
    d.num_classes = num_classes;
    d.images = Tensor({n, 3, side, side});
    d.labels.resize(n);
    const int64_t hw = side * side;
    // Repeating each shape over several backgrounds pushes the classifier
    // toward background-invariant features, the regime the explanation
    // method assumes.
    std::vector<ShapeParams> shapes;
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        if (i % bg_variants == 0) shapes.push_back(draw_shape(num_classes, side, rng));
        order[static_cast<size_t>(i)] = static_cast<int64_t>(shapes.size()) - 1;
    }
    rng.shuffle(order);
    for (int64_t i = 0; i < n; ++i) {
        const ShapeParams& sp = shapes[static_cast<size_t>(order[static_cast<size_t>(i)])];
        d.labels[i] = sp.cls;
        render_shape(sp, side, rng, d.images.data() + i * 3 * hw);
    }
    return d;
}

}  // namespace

SplitDataset make_shapes_dataset(const ShapesSpec& spec) {
    if (spec.num_classes < 2 || spec.num_classes > 4)
        throw std::invalid_argument("shapes dataset supports 2..4 classes");
    Rng rng(spec.seed);
    SplitDataset out;
    out.train = generate_shapes(spec.n_train, spec.num_classes, spec.image_side, rng, 4);
    out.val = generate_shapes(spec.n_val, spec.num_classes, spec.image_side, rng, 1);
    return out;
}

Dataset load_cifar_file(const std::string& path, int64_t max_records) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open CIFAR batch: " + path);
    constexpr int64_t kRecord = 1 + 3 * 1024;
    in.seekg(0, std::ios::end);
    const int64_t bytes = static_cast<int64_t>(in.tellg());
    in.seekg(0);
    if (bytes % kRecord != 0)
        throw std::invalid_argument("not a CIFAR-10 binary batch (bad size): " + path);
    int64_t n = bytes / kRecord;
    if (max_records >= 0) n = std::min(n, max_records);
    Dataset d;
    d.num_classes = 10;
    d.images = Tensor({n, 3, 32, 32});
    d.labels.resize(n);
    std::vector<unsigned char> rec(kRecord);
    for (int64_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(rec.data()), kRecord);
        if (!in) throw std::invalid_argument("truncated CIFAR batch: " + path);
        d.labels[i] = rec[0];
        double* img = d.images.data() + i * 3 * 1024;
        for (int64_t j = 0; j < 3 * 1024; ++j)
            img[j] = static_cast<double>(rec[1 + j]) / 255.0;
    }
    return d;
}

namespace {

Dataset concat(std::vector<Dataset> parts) {
    int64_t total = 0;
    for (const auto& p : parts) total += p.size();
    Dataset out;
    out.num_classes = parts.empty() ? 0 : parts.front().num_classes;
    if (total == 0) return out;
    const int64_t side = parts.front().image_side();
    out.images = Tensor({total, 3, side, side});
    out.labels.reserve(total);
    int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.images.data(), p.images.data() + p.images.numel(),
                  out.images.data() + off);
        off += p.images.numel();
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    }
    return out;
}

}  // namespace

SplitDataset load_cifar_dir(const std::string& dir, int64_t max_train, int64_t max_val) {
    if (!fs::is_directory(dir))
        throw std::invalid_argument("dataset directory not found: " + dir);
    std::vector<std::string> train_files;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("data_batch", 0) == 0 && name.size() >= 4 &&
            name.substr(name.size() - 4) == ".bin")
            train_files.push_back(e.path().string());
    }
    std::sort(train_files.begin(), train_files.end());
    if (train_files.empty())
        throw std::invalid_argument("no data_batch_*.bin files under " + dir);
    SplitDataset out;
    std::vector<Dataset> parts;
    int64_t remaining = max_train;
    for (const auto& f : train_files) {
        if (max_train >= 0 && remaining <= 0) break;
        parts.push_back(load_cifar_file(f, remaining));
        if (max_train >= 0) remaining -= parts.back().size();
    }
    out.train = concat(std::move(parts));
    const fs::path test = fs::path(dir) / "test_batch.bin";
    if (fs::exists(test)) out.val = load_cifar_file(test.string(), max_val);
    return out;
}

std::vector<double> channel_means(const Dataset& d) {
    std::vector<double> m(3, 0.0);
    if (d.size() == 0) return m;
    const int64_t hw = d.image_side() * d.image_side();
    for (int64_t i = 0; i < d.size(); ++i)
        for (int64_t c = 0; c < 3; ++c) {
            const double* p = d.images.data() + (i * 3 + c) * hw;
            for (int64_t j = 0; j < hw; ++j) m[c] += p[j];
        }
    const double denom = static_cast<double>(d.size() * hw);
    for (double& v : m) v /= denom;
    return m;
}

Dataset subset(const Dataset& d, int64_t count) {
    count = std::min(count, d.size());
    Dataset out;
    out.num_classes = d.num_classes;
    const int64_t side = d.image_side();
    out.images = Tensor({count, 3, side, side});
    std::copy(d.images.data(), d.images.data() + count * 3 * side * side,
              out.images.data());
    out.labels.assign(d.labels.begin(), d.labels.begin() + count);
    return out;
}

}  // namespace scan
