#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "relseg/tensor.hpp"

namespace relseg {

struct ConvSpec {
    std::size_t in_ch, out_ch, kernel, stride = 1, pad = 0;
    bool has_bias = false;
};
struct ReluSpec {};
struct MaxPoolSpec {
    std::size_t kernel = 2, stride = 2;
};
struct GapSpec {};
struct LinearSpec {
    std::size_t in_dim, out_dim;
    bool has_bias = false;
};

using LayerSpec = std::variant<ConvSpec, ReluSpec, MaxPoolSpec, GapSpec, LinearSpec>;

/// Plain-CNN classifier: conv/ReLU/maxpool body, then GAP followed by
/// exactly one linear head. The linear head's out_dim is the class count
/// (foreground classes + background).
struct EncoderSpec {
    std::size_t input_channels = 3;
    std::size_t input_h = 0, input_w = 0;
    std::vector<LayerSpec> layers;

    std::size_t num_classes() const;
    void validate() const;  // throws on shape-incompatible or malformed specs
};

struct LayerParams {
    Tensor weight;  // conv: (out,in,kh,kw); linear: (out,in); empty otherwise
    Tensor bias;    // empty when absent
    bool has_weight() const { return weight.size() > 0; }
    bool has_bias() const { return bias.size() > 0; }
};

struct Params {
    std::vector<LayerParams> layers;  // one entry per spec layer

    void add_scaled(const Params& other, double s);  // this += s * other
    std::size_t count() const;                       // total scalar parameters
};

struct LayerTrace {
    Tensor input;     // a^(l-1) as seen by this layer
    Tensor pre_act;   // z^(l) for conv/linear
    Tensor switches;  // maxpool argmax flat spatial index per output cell
};

struct ForwardTrace {
    std::vector<LayerTrace> layers;
    Tensor apv;     // global-average-pooling vector
    Tensor scores;  // class scores
};

struct GradientSet {
    Params params;      // same layout as the net's Params
    Tensor input_grad;  // gradient w.r.t. the network input
};

// -- convolution primitives (cross-correlation, zero padding) --------------

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias,
              std::size_t stride, std::size_t pad);
Tensor conv2d_backward_data(const Tensor& out_grad, const Tensor& kernel,
                            std::size_t stride, std::size_t pad,
                            std::size_t in_h, std::size_t in_w);
Tensor conv2d_backward_weights(const Tensor& input, const Tensor& out_grad,
                               const std::vector<std::size_t>& kernel_shape,
                               std::size_t stride, std::size_t pad);
Tensor conv2d_backward_bias(const Tensor& out_grad);

struct PoolResult {
    Tensor output;
    Tensor switches;  // flat spatial index (y*W + x) of the winner, per channel
};
/// Per-window maximum; ties go to the first cell in scan order.
PoolResult maxpool2d(const Tensor& input, std::size_t kernel, std::size_t stride);
/// Route each value to its switch cell of an input-shaped tensor (all other
/// cells zero). Adjoint of gathering at the switches.
Tensor unpool_switches(const Tensor& values, const Tensor& switches,
                       const std::vector<std::size_t>& input_shape);
Tensor gather_switches(const Tensor& input_shaped, const Tensor& switches);

// -- network ----------------------------------------------------------------

ForwardTrace forward(const EncoderSpec& spec, const Params& params, const Tensor& image);
GradientSet backward(const EncoderSpec& spec, const Params& params,
                     const ForwardTrace& trace, const Tensor& score_grad);
/// As backward, but additionally injects a gradient at each conv/linear
/// pre-activation z^(l) for which preact_grads[l] is non-empty.
GradientSet backward(const EncoderSpec& spec, const Params& params,
                     const ForwardTrace& trace, const Tensor& score_grad,
                     const std::vector<Tensor>& preact_grads);

/// He fan-in scaled normal init for weights, zero biases.
Params init_params(const EncoderSpec& spec, SeededRng& rng);
Params zero_like(const Params& params);

/// Encoder presets. Known names: "vgg-mini-2", "vgg-mini-3" (2 or 3
/// conv/ReLU blocks, max-pool between blocks, GAP head), plus a width
/// suffix like "vgg-mini-2:8".
EncoderSpec make_encoder_preset(const std::string& name, std::size_t input_h,
                                std::size_t input_w, std::size_t num_classes,
                                bool with_bias = false);

/// Output shape of each layer given the spec input; index i is the output
/// of layer i.
std::vector<std::vector<std::size_t>> layer_output_shapes(const EncoderSpec& spec);

}  // namespace relseg
