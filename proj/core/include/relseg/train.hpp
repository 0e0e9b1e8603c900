#pragma once

#include <functional>
#include <optional>

#include "relseg/data.hpp"
#include "relseg/models.hpp"

namespace relseg {

struct LossGrad {
    double value = 0.0;
    Tensor grad;
};

/// Pixel-wise softmax cross-entropy summed over labeled pixels of one
/// image; pixel_count reports how many pixels contributed. Sentinel (255)
/// pixels contribute nothing. grad is w.r.t. the logits/heatmap stack and
/// is likewise unnormalized.
struct SegLoss {
    double total = 0.0;
    std::size_t pixel_count = 0;
    Tensor grad;
};
SegLoss seg_loss_image(const Tensor& stack, const std::vector<std::uint8_t>& mask);

/// Mean over foreground classes of sigmoid binary cross-entropy; the
/// background score (index 0) has weight 0.
LossGrad cls_loss(const Tensor& scores, const std::vector<std::uint8_t>& labels);

/// Decoupled-weight-decay adaptive-moment optimizer over a Params group.
struct AdamW {
    double lr = 1e-5;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
    std::size_t step_count = 0;
    Params m, v;

    void init(const Params& shape);
    void step(Params& params, const Params& grads);
};

struct SupervisionPlan {
    std::vector<std::size_t> labeled_ids;  // train-split sample indices
    std::uint64_t seed = 0;
};

/// Small regimes (<= 5 per class): greedy class-balanced sampling with every
/// class covered at least once; larger regimes sample by the mixture
/// 0.5*uniform + 0.5*empirical class distribution.
SupervisionPlan build_supervision_plan(const Dataset& dataset, std::size_t regime_size,
                                       std::uint64_t seed);

/// Unified handle over the five model kinds.
struct Model {
    ModelKind kind = ModelKind::UnrolledLrp;
    EncoderSpec spec;
    std::shared_ptr<Params> params;
    double epsilon = 0.0;
    BaselineNet baseline;  // decoder state for non-unrolled kinds
    /// Relevance heatmaps carry a 1/n_pixels factor from the GAP head;
    /// heatmap-logit kinds undo it so the pixel softmax sees O(1) logits.
    /// Argmax segmentation is invariant to the scale.
    double logit_scale = 1.0;

    static Model make(ModelKind kind, EncoderSpec spec, std::shared_ptr<Params> params,
                      double epsilon, SeededRng& rng);
    bool uses_cls_loss() const {
        return kind == ModelKind::UnrolledLrp || kind == ModelKind::MultiTaskUNet ||
               kind == ModelKind::WsAe;
    }
    bool has_free_decoder() const {
        return kind == ModelKind::UNet || kind == ModelKind::MultiTaskUNet ||
               kind == ModelKind::Fcn;
    }
};

struct ModelOutput {
    std::optional<Tensor> scores;
    Tensor logits;  // (K, H, W): heatmaps for unrolled, logits otherwise
};
ModelOutput model_forward(const Model& model, const Tensor& image);

struct StepReport {
    double cls_loss = 0.0;
    double seg_loss = 0.0;
    double total = 0.0;
    std::size_t labeled_images = 0;
};

/// One combined-loss step (weights 1 and 1) on a batch; items with an
/// all-sentinel mask contribute only the classification term.
StepReport combined_step(Model& model, const std::vector<Sample>& batch,
                         AdamW& encoder_opt, AdamW& decoder_opt,
                         double cls_weight = 1.0);

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_cls = 0.0, train_seg = 0.0;
    double val_miou = 0.0, val_f1 = 0.0;
    double wall_seconds = 0.0;
};

struct EvalResult {
    double miou = 0.0;
    double f1 = 0.0;
    std::vector<double> per_class_iou;
};
EvalResult evaluate(const Model& model, const Dataset& dataset, bool val_split);

struct TrainOptions {
    std::size_t epochs = 100;
    std::size_t batch_size = 10;
    double lr = 1e-5;
    double cls_weight = 1.0;  // weight of the image-level loss in the sum
    std::uint64_t seed = 1;
    std::size_t input_h = 0, input_w = 0;  // 0: use canvas size (no crop)
    std::function<void(const Model&, std::size_t epoch)> epoch_hook;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    Params best_params;
    std::vector<LayerParams> best_decoder;
    double best_miou = 0.0;
    std::size_t best_epoch = 0;
};

/// Mixed-supervision training: shuffled batches with a floor of one
/// pixel-labeled image when the plan is nonempty (target roughly half),
/// per-epoch validation, best-mIoU selection. Models without a
/// classification branch draw batches from the labeled pool only.
TrainResult train_model(Model& model, const Dataset& dataset, const SupervisionPlan& plan,
                        const TrainOptions& opts);

struct PretrainResult {
    std::vector<EpochMetrics> history;
    Params best_params;
    double best_f1 = 0.0;
};

/// Classification-only warm-up of the encoder (desk-scale substitute for
/// pretrained backbone weights).
PretrainResult pretrain_classifier(const EncoderSpec& spec, Params& params,
                                   const Dataset& dataset, std::size_t epochs,
                                   double lr, std::uint64_t seed);

}  // namespace relseg
