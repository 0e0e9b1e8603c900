#pragma once

#include "relseg/nn.hpp"
#include "relseg/tensor.hpp"

namespace relseg {

/// epsilon = 0 is the pure (equivalence-mode) rule and errors on exact zero
/// denominators; a small positive epsilon trades exactness for stability.
struct LrpConfig {
    double epsilon = 0.0;
};

struct RelevanceMap {
    std::size_t class_id = 0;
    Tensor relevance;  // same shape as the layer input it annotates
};

/// Relevance through a linear map, computed as the three steps
/// q = R/z (stabilized), p = weighted summation, R_in = a * p.
Tensor lrp_linear(const Tensor& r_out, const Tensor& a_in, const Tensor& z_out,
                  const Tensor& weights, const LrpConfig& cfg);

Tensor lrp_conv(const Tensor& r_out, const Tensor& a_in, const Tensor& z_out,
                const Tensor& kernel, std::size_t stride, std::size_t pad,
                const LrpConfig& cfg);

/// Winner-take-all routing: each output relevance goes entirely to its
/// argmax input cell.
Tensor lrp_maxpool(const Tensor& r_out, const Tensor& switches,
                   const std::vector<std::size_t>& input_shape);

/// Condensed GAP + linear head: Heaviside(z)-masked constant maps valued
/// w_{class,k} / n_pixels — the relevance-over-z quotient entering the
/// last convolution. z and a are the last conv's pre-activation and its
/// ReLU output; class_weights is the head weight row of the class.
Tensor lrp_head(const Tensor& z_last_conv, const Tensor& class_weight_row,
                const LrpConfig& cfg);
Tensor lrp_head(const EncoderSpec& spec, const Params& params,
                const ForwardTrace& trace, std::size_t class_id,
                const LrpConfig& cfg);

/// Full backward chain head -> conv/maxpool (ReLUs skipped) -> terminal
/// multiplication with the input image. If layer_totals is non-null it
/// receives the relevance total after every stage, starting with the class
/// score.
RelevanceMap lrp_full(const EncoderSpec& spec, const Params& params,
                      const ForwardTrace& trace, std::size_t class_id,
                      const LrpConfig& cfg,
                      std::vector<double>* layer_totals = nullptr);

}  // namespace relseg
