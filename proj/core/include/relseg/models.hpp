#pragma once

#include <memory>
#include <optional>

#include "relseg/nn.hpp"

namespace relseg {

enum class ModelKind { UnrolledLrp, UNet, MultiTaskUNet, WsAe, Fcn };

std::string model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

/// Per-class single-channel heatmaps at input resolution, class 0 =
/// background.
struct HeatmapStack {
    Tensor maps;  // (num_classes, H, W)
};

/// The encoder's LRP backward pass as an explicit decoder. The decoder owns
/// no parameters: convolutions read the encoder kernels, gates read encoder
/// pre-activations from the trace of the same forward call, unpooling reads
/// encoder switches. Only the bottleneck 1x1 convolution (classifier output
/// weights) is class-specific.
struct UnrolledNet {
    EncoderSpec spec;
    std::shared_ptr<Params> params;
    double epsilon = 0.0;

    static UnrolledNet build(EncoderSpec spec, std::shared_ptr<Params> params,
                             double epsilon = 0.0);

    std::size_t num_classes() const { return spec.num_classes(); }
    std::size_t decoder_free_param_count() const { return 0; }
    /// Explicit unrolled kernel of a conv layer: the k-th output slice stacks
    /// the k-th slices of all encoder kernels, spatially flipped. Shape
    /// (in_ch, out_ch, kh, kw). For inspection/tests; the forward path reads
    /// the encoder kernel directly.
    Tensor unrolled_kernel(std::size_t layer_index) const;
};

/// One conv stage of one decoder branch, recorded for backward.
struct DecoderStage {
    std::size_t layer_index = 0;
    Tensor u_in;  // value arriving at this conv's output level, before the gate
    Tensor gate;  // multiplicative activation mask (tied gate or own ReLU mask)
    Tensor q;     // gate * u_in, fed to the unrolled convolution
};

struct UnrolledForward {
    Tensor scores;
    Tensor heatmaps;            // (K, H, W), channel-summed
    std::vector<Tensor> heat3;  // per class, (in_ch, H, W) before channel sum
    ForwardTrace trace;
    std::vector<std::vector<DecoderStage>> stages;  // per class, eval order
    std::vector<Tensor> pre_skip;                   // per class, before input mult
};

UnrolledForward unrolled_forward(const UnrolledNet& net, const Tensor& image);

struct UnrolledBackward {
    Params decoder_grads;  // weight grads through decoder applications
    Params encoder_grads;  // gate-path grads into the encoder; zero at eps = 0
};

/// Backward of a loss on the heatmap stack. heatmap_grads is
/// dLoss/dheatmaps, shape (K, H, W).
UnrolledBackward unrolled_backward(const UnrolledNet& net, const UnrolledForward& fwd,
                                   const Tensor& image, const Tensor& heatmap_grads);

/// Ablation baselines sharing the encoder spec.
///  - UNet: free decoder, nearest-neighbor upsample + conv, concat skips.
///  - MultiTaskUNet: UNet plus the encoder's GAP/linear classifier branch.
///  - WsAe: tied decoder convolutions and unpooling, standard ReLU decoder
///    activations (per-class branches like the unrolled net).
///  - Fcn: single free decoder branch, nearest-neighbor upsample, no skips.
struct BaselineNet {
    ModelKind kind = ModelKind::UNet;
    EncoderSpec spec;
    std::shared_ptr<Params> params;
    std::vector<LayerParams> decoder;  // free decoder convs; empty for WsAe

    static BaselineNet build(ModelKind kind, EncoderSpec spec,
                             std::shared_ptr<Params> params, SeededRng& rng);
    std::size_t num_classes() const { return spec.num_classes(); }
};

struct BaselineForward {
    std::optional<Tensor> scores;
    Tensor logits;  // (K, H, W)
    ForwardTrace trace;
    // intermediates for backward
    std::vector<Tensor> dec_in;  // free path: input of each decoder conv
    std::vector<Tensor> dec_z;   // free path: each decoder conv output (pre-ReLU)
    std::vector<std::vector<DecoderStage>> wsae_stages;
    std::vector<Tensor> wsae_pre_skip;
    std::vector<Tensor> wsae_heat3;
};

BaselineForward baseline_forward(const BaselineNet& net, const Tensor& image);

struct BaselineBackward {
    Params encoder_grads;
    std::vector<LayerParams> decoder_grads;
};

BaselineBackward baseline_backward(const BaselineNet& net, const BaselineForward& fwd,
                                   const Tensor& image, const Tensor& dlogits,
                                   const Tensor* dscores);

Tensor upsample_nearest2(const Tensor& input);
Tensor upsample_nearest2_adjoint(const Tensor& out_grad);

}  // namespace relseg
