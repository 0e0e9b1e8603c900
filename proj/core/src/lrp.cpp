#include "relseg/lrp.hpp"

#include <stdexcept>

namespace relseg {

namespace {

// Index of the conv whose ReLU output feeds GAP. The library's encoder
// contract places GAP directly after a conv/ReLU pair.
std::size_t last_conv_index(const EncoderSpec& spec) {
    for (std::size_t i = spec.layers.size(); i-- > 0;) {
        if (std::holds_alternative<ConvSpec>(spec.layers[i])) return i;
    }
    throw std::invalid_argument("lrp: spec has no conv layer");
}

}  // namespace

Tensor lrp_linear(const Tensor& r_out, const Tensor& a_in, const Tensor& z_out,
                  const Tensor& weights, const LrpConfig& cfg) {
    if (weights.rank() != 2 || weights.dim(1) != a_in.size() ||
        weights.dim(0) != z_out.size() || !r_out.same_shape(z_out)) {
        throw std::invalid_argument("lrp_linear: inconsistent shapes");
    }
    const std::size_t out_n = z_out.size(), in_n = a_in.size();
    Tensor q = stabilized_div(r_out, z_out, cfg.epsilon);
    Tensor p({in_n});
    for (std::size_t i = 0; i < in_n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < out_n; ++j) acc += weights[j * in_n + i] * q[j];
        p[i] = acc;
    }
    Tensor r_in = mul(a_in, p);
    check_finite(r_in, "lrp_linear");
    return r_in;
}

Tensor lrp_conv(const Tensor& r_out, const Tensor& a_in, const Tensor& z_out,
                const Tensor& kernel, std::size_t stride, std::size_t pad,
                const LrpConfig& cfg) {
    Tensor q = stabilized_div(r_out, z_out, cfg.epsilon);
    Tensor p = conv2d_backward_data(q, kernel, stride, pad, a_in.dim(1), a_in.dim(2));
    Tensor r_in = mul(a_in, p);
    check_finite(r_in, "lrp_conv");
    return r_in;
}

Tensor lrp_maxpool(const Tensor& r_out, const Tensor& switches,
                   const std::vector<std::size_t>& input_shape) {
    return unpool_switches(r_out, switches, input_shape);
}

Tensor lrp_head(const Tensor& z_last_conv, const Tensor& class_weight_row,
                const LrpConfig& cfg) {
    (void)cfg;
    const std::size_t C = z_last_conv.dim(0);
    const std::size_t H = z_last_conv.dim(1), W = z_last_conv.dim(2);
    if (class_weight_row.size() != C) {
        throw std::invalid_argument("lrp_head: weight row / channel mismatch");
    }
    const double inv_n = 1.0 / (double)(H * W);
    Tensor q({C, H, W});
    for (std::size_t c = 0; c < C; ++c) {
        const double v = class_weight_row[c] * inv_n;
        for (std::size_t i = 0; i < H * W; ++i) {
            const double z = z_last_conv[c * H * W + i];
            q[c * H * W + i] = z > 0.0 ? v : 0.0;
        }
    }
    return q;
}

Tensor lrp_head(const EncoderSpec& spec, const Params& params,
                const ForwardTrace& trace, std::size_t class_id,
                const LrpConfig& cfg) {
    if (class_id >= spec.num_classes()) {
        throw std::invalid_argument("lrp_head: class_id out of range");
    }
    const std::size_t lc = last_conv_index(spec);
    const auto& lin = std::get<LinearSpec>(spec.layers.back());
    const Tensor& w = params.layers.back().weight;
    Tensor row({lin.in_dim});
    for (std::size_t i = 0; i < lin.in_dim; ++i) row[i] = w[class_id * lin.in_dim + i];
    return lrp_head(trace.layers[lc].pre_act, row, cfg);
}

RelevanceMap lrp_full(const EncoderSpec& spec, const Params& params,
                      const ForwardTrace& trace, std::size_t class_id,
                      const LrpConfig& cfg, std::vector<double>* layer_totals) {
    if (class_id >= spec.num_classes()) {
        throw std::invalid_argument("lrp_full: class_id out of range");
    }
    const std::size_t gap_index = spec.layers.size() - 2;
    if (!std::holds_alternative<GapSpec>(spec.layers[gap_index])) {
        throw std::invalid_argument("lrp_full: spec must end with GAP + Linear");
    }
    if (layer_totals) {
        layer_totals->clear();
        layer_totals->push_back(trace.scores[class_id]);
    }

    // GAP + linear head, condensed: R at the GAP input is the feature map
    // scaled per channel by class weight / pixel count. The division by apv
    // cancels analytically, so zero channels stay well-defined.
    const auto& lin = std::get<LinearSpec>(spec.layers.back());
    const Tensor& w = params.layers.back().weight;
    const Tensor& gap_in = trace.layers[gap_index].input;
    const std::size_t C = gap_in.dim(0), H = gap_in.dim(1), W = gap_in.dim(2);
    if (lin.in_dim != C) throw std::invalid_argument("lrp_full: head/feature mismatch");
    const double inv_n = 1.0 / (double)(H * W);
    Tensor r({C, H, W});
    for (std::size_t c = 0; c < C; ++c) {
        const double wc = w[class_id * lin.in_dim + c] * inv_n;
        for (std::size_t i = 0; i < H * W; ++i) r[c * H * W + i] = gap_in[c * H * W + i] * wc;
    }
    if (layer_totals) layer_totals->push_back(sum_all(r));

    for (std::size_t li = gap_index; li-- > 0;) {
        const auto& layer = spec.layers[li];
        const auto& lt = trace.layers[li];
        if (std::holds_alternative<ReluSpec>(layer)) {
            continue;  // relevance passes through ReLUs unchanged
        } else if (std::holds_alternative<MaxPoolSpec>(layer)) {
            r = lrp_maxpool(r, lt.switches, lt.input.shape());
        } else if (const auto* c = std::get_if<ConvSpec>(&layer)) {
            r = lrp_conv(r, lt.input, lt.pre_act, params.layers[li].weight,
                         c->stride, c->pad, cfg);
        } else {
            throw std::invalid_argument("lrp_full: unsupported layer in body");
        }
        if (layer_totals) layer_totals->push_back(sum_all(r));
    }
    return RelevanceMap{class_id, std::move(r)};
}

}  // namespace relseg
