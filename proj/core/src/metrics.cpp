#include "relseg/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "relseg/image_io.hpp"

namespace relseg {

std::vector<std::uint8_t> segment(const Tensor& logits) {
    if (logits.rank() != 3) throw std::invalid_argument("segment: expected (K,H,W)");
    const std::size_t K = logits.dim(0), plane = logits.dim(1) * logits.dim(2);
    std::vector<std::uint8_t> mask(plane, 0);
    for (std::size_t i = 0; i < plane; ++i) {
        double best = logits[i];
        std::size_t best_k = 0;
        for (std::size_t k = 1; k < K; ++k) {
            const double v = logits[k * plane + i];
            if (v > best) {
                best = v;
                best_k = k;
            }
        }
        mask[i] = (std::uint8_t)best_k;
    }
    return mask;
}

void ConfusionAccumulator::add(const std::vector<std::uint8_t>& pred,
                               const std::vector<std::uint8_t>& target) {
    if (pred.size() != target.size()) {
        throw std::invalid_argument("ConfusionAccumulator::add: size mismatch");
    }
    const std::size_t K = num_classes();
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const std::uint8_t t = target[i];
        if (t == 255) continue;
        const std::uint8_t p = pred[i];
        if (t >= K || p >= K) {
            throw std::invalid_argument("ConfusionAccumulator::add: class index out of range");
        }
        pred_count[p] += 1;
        target_count[t] += 1;
        if (p == t) {
            intersection[p] += 1;
            union_[p] += 1;
        } else {
            union_[p] += 1;
            union_[t] += 1;
        }
    }
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
    if (other.num_classes() != num_classes()) {
        throw std::invalid_argument("ConfusionAccumulator::merge: class count mismatch");
    }
    for (std::size_t k = 0; k < num_classes(); ++k) {
        intersection[k] += other.intersection[k];
        union_[k] += other.union_[k];
        pred_count[k] += other.pred_count[k];
        target_count[k] += other.target_count[k];
    }
}

bool ConfusionAccumulator::empty() const {
    for (double v : pred_count)
        if (v > 0) return false;
    for (double v : target_count)
        if (v > 0) return false;
    return true;
}

MiouResult miou(const ConfusionAccumulator& acc) {
    if (acc.empty()) throw std::invalid_argument("miou: empty accumulator");
    MiouResult res;
    res.per_class.assign(acc.num_classes(), std::numeric_limits<double>::quiet_NaN());
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t k = 0; k < acc.num_classes(); ++k) {
        if (acc.union_[k] == 0.0) continue;  // absent from pred and target
        res.per_class[k] = acc.intersection[k] / acc.union_[k];
        total += res.per_class[k];
        ++counted;
    }
    res.miou = counted ? total / (double)counted : 0.0;
    return res;
}

double f1_multilabel(const std::vector<Tensor>& scores,
                     const std::vector<std::vector<std::uint8_t>>& labels) {
    if (scores.size() != labels.size()) {
        throw std::invalid_argument("f1_multilabel: batch size mismatch");
    }
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const std::size_t num_fg = labels[i].size();
        if (scores[i].size() != num_fg + 1) {
            throw std::invalid_argument("f1_multilabel: score length must be num_fg + 1");
        }
        for (std::size_t c = 0; c < num_fg; ++c) {
            const bool pred = scores[i][c + 1] > 0.0;  // sigmoid(s) > 0.5
            const bool truth = labels[i][c] != 0;
            if (pred && truth) tp += 1;
            else if (pred) fp += 1;
            else if (truth) fn += 1;
        }
    }
    const double denom = 2 * tp + fp + fn;
    return denom == 0.0 ? 1.0 : 2 * tp / denom;
}

void heatmap_color(double t, std::uint8_t rgb[3]) {
    t = std::clamp(t, -1.0, 1.0);
    double r, g, b;
    if (t >= 0) {  // white -> red
        r = 1.0;
        g = 1.0 - t;
        b = 1.0 - t;
    } else {  // white -> blue
        r = 1.0 + t;
        g = 1.0 + t;
        b = 1.0;
    }
    rgb[0] = (std::uint8_t)std::lround(r * 255.0);
    rgb[1] = (std::uint8_t)std::lround(g * 255.0);
    rgb[2] = (std::uint8_t)std::lround(b * 255.0);
}

void export_heatmap_png(const Tensor& heatmap, const std::string& path,
                        HeatmapMode mode, std::size_t num_classes) {
    if (heatmap.rank() != 2) throw std::invalid_argument("export_heatmap_png: expected 2-d map");
    const std::size_t H = heatmap.dim(0), W = heatmap.dim(1);
    const double center = mode == HeatmapMode::Raw ? 0.0 : 1.0 / (double)num_classes;
    double scale = 0.0;
    for (double v : heatmap.raw()) scale = std::max(scale, std::abs(v - center));
    if (scale == 0.0) scale = 1.0;

    ImageU8 img;
    img.width = W;
    img.height = H;
    img.channels = 3;
    img.pixels.resize(W * H * 3);
    for (std::size_t i = 0; i < H * W; ++i) {
        std::uint8_t rgb[3];
        heatmap_color((heatmap[i] - center) / scale, rgb);
        img.pixels[i * 3 + 0] = rgb[0];
        img.pixels[i * 3 + 1] = rgb[1];
        img.pixels[i * 3 + 2] = rgb[2];
    }
    write_png(path, img);
}

void export_mask_png(const std::vector<std::uint8_t>& mask, std::size_t h, std::size_t w,
                     const std::string& path) {
    static const std::uint8_t table[6][3] = {
        {30, 30, 30},    // background
        {220, 60, 60},   // class 1
        {60, 200, 60},   // class 2
        {70, 90, 220},   // class 3
        {220, 210, 60},  // class 4
        {180, 70, 200},
    };
    ImageU8 img;
    img.width = w;
    img.height = h;
    img.channels = 3;
    img.pixels.resize(w * h * 3);
    for (std::size_t i = 0; i < w * h; ++i) {
        const std::uint8_t* c = table[mask[i] % 6];
        img.pixels[i * 3 + 0] = c[0];
        img.pixels[i * 3 + 1] = c[1];
        img.pixels[i * 3 + 2] = c[2];
    }
    write_png(path, img);
}

}  // namespace relseg
