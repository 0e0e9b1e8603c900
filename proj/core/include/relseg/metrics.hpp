#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "relseg/tensor.hpp"

namespace relseg {

/// Per-pixel argmax over the class dimension (first axis); ties go to the
/// lowest class index.
std::vector<std::uint8_t> segment(const Tensor& logits);

/// Streaming per-class intersection/union counts; mergeable.
struct ConfusionAccumulator {
    std::vector<double> intersection, union_, pred_count, target_count;

    explicit ConfusionAccumulator(std::size_t num_classes = 0)
        : intersection(num_classes), union_(num_classes),
          pred_count(num_classes), target_count(num_classes) {}

    std::size_t num_classes() const { return intersection.size(); }
    /// Pixels where target == 255 (unlabeled) are skipped.
    void add(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target);
    void merge(const ConfusionAccumulator& other);
    bool empty() const;
};

struct MiouResult {
    double miou = 0.0;
    std::vector<double> per_class;  // NaN for classes absent from pred and target
};

/// Mean IoU over classes; classes absent from both prediction and target
/// are excluded from the mean.
MiouResult miou(const ConfusionAccumulator& acc);

/// Micro-averaged F1 over (image, foreground-class) decisions at
/// sigmoid(score) > 0.5, i.e. score > 0. scores rows include the background
/// at index 0, which is ignored.
double f1_multilabel(const std::vector<Tensor>& scores,
                     const std::vector<std::vector<std::uint8_t>>& labels);

enum class HeatmapMode { Raw, Softmaxed };

/// Blue-white-red diverging colormap PNG. Raw mode centers white at 0;
/// softmaxed mode expects probabilities and centers white at 1/num_classes.
void export_heatmap_png(const Tensor& heatmap, const std::string& path,
                        HeatmapMode mode, std::size_t num_classes);

/// Diverging colormap sample for t in [-1, 1] (blue .. white .. red).
void heatmap_color(double t, std::uint8_t rgb[3]);

/// Class-index mask rendered with a fixed color table.
void export_mask_png(const std::vector<std::uint8_t>& mask, std::size_t h, std::size_t w,
                     const std::string& path);

}  // namespace relseg
