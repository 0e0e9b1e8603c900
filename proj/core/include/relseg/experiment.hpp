#pragma once

#include <functional>
#include <optional>
#include <string>

#include "relseg/train.hpp"

namespace relseg {

struct SweepOptions {
    std::vector<ModelKind> models = {ModelKind::UnrolledLrp, ModelKind::UNet,
                                     ModelKind::WsAe, ModelKind::Fcn};
    std::vector<std::string> regimes = {"1", "5", "25", "full"};
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::string preset = "vgg-mini-2:8";
    double lr = 1e-5;
    double pretrain_lr = 0.0;  // 0: use lr
    double cls_weight = 1.0;
    double epsilon = 0.0;
    std::size_t epochs = 100;
    std::size_t pretrain_epochs = 20;
    std::size_t batch_size = 10;
    std::size_t input_h = 0, input_w = 0;  // 0: dataset canvas
};

struct SweepCell {
    ModelKind kind;
    std::string regime;
    std::uint64_t seed = 0;
    double miou = 0.0;
    double f1 = 0.0;
    double pretrain_f1 = 0.0;
    double wall_seconds = 0.0;
};

struct SweepSummaryRow {
    ModelKind kind;
    std::string regime;
    double miou_mean = 0.0, miou_std = 0.0;
    double f1_mean = 0.0, f1_std = 0.0;
};

struct SweepResult {
    std::vector<SweepCell> cells;
    std::vector<SweepSummaryRow> summary;  // mean/std over seeds per cell group
};

/// Train every (model, regime, seed) cell from a shared per-seed pretrained
/// encoder and report best-validation metrics. on_cell fires after each cell
/// for progress reporting.
SweepResult run_sweep(const Dataset& dataset, const SweepOptions& opts,
                      const std::function<void(const SweepCell&)>& on_cell = {});

void write_sweep_csv(const SweepResult& result, const std::string& cells_path,
                     const std::string& summary_path);

/// Per-seed pretrained encoder shared by all models of a sweep.
struct PretrainedEncoder {
    Params params;
    double val_f1 = 0.0;
};
PretrainedEncoder pretrain_for_seed(const EncoderSpec& spec, const Dataset& dataset,
                                    std::size_t epochs, double lr, std::uint64_t seed);

/// Writes <tag>_seg.png plus one softmaxed heatmap <tag>_class<k>.png per
/// class into dir.
void export_prediction(const Model& model, const Sample& sample,
                       const std::string& dir, const std::string& tag);

/// History CSV with the schema epoch,split,miou,f1,cls_loss,seg_loss,
/// wall_seconds: one train row and one val row per epoch.
void write_history_csv(const std::vector<EpochMetrics>& history,
                       const std::string& path);

/// Intersection-over-union of the most frequent foreground class of the
/// target mask; empty when the mask has no foreground.
std::optional<double> majority_class_iou(const std::vector<std::uint8_t>& pred,
                                         const std::vector<std::uint8_t>& target,
                                         std::size_t num_classes);

}  // namespace relseg
