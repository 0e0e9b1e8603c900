#include "relseg/nn.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace relseg {

namespace {

std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    if (in + 2 * pad < k) throw std::invalid_argument("conv: input smaller than kernel");
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

std::size_t EncoderSpec::num_classes() const {
    if (layers.empty()) throw std::invalid_argument("EncoderSpec: empty");
    const auto* lin = std::get_if<LinearSpec>(&layers.back());
    if (!lin) throw std::invalid_argument("EncoderSpec: last layer must be Linear");
    return lin->out_dim;
}

std::vector<std::vector<std::size_t>> layer_output_shapes(const EncoderSpec& spec) {
    std::vector<std::vector<std::size_t>> shapes;
    std::vector<std::size_t> cur = {spec.input_channels, spec.input_h, spec.input_w};
    for (const auto& layer : spec.layers) {
        if (const auto* c = std::get_if<ConvSpec>(&layer)) {
            if (cur.size() != 3 || cur[0] != c->in_ch) {
                throw std::invalid_argument("EncoderSpec: conv channel mismatch");
            }
            cur = {c->out_ch, conv_out_dim(cur[1], c->kernel, c->stride, c->pad),
                   conv_out_dim(cur[2], c->kernel, c->stride, c->pad)};
        } else if (std::holds_alternative<ReluSpec>(layer)) {
            // shape unchanged
        } else if (const auto* p = std::get_if<MaxPoolSpec>(&layer)) {
            if (cur.size() != 3 || cur[1] < p->kernel || cur[2] < p->kernel) {
                throw std::invalid_argument("EncoderSpec: pool larger than input");
            }
            cur = {cur[0], (cur[1] - p->kernel) / p->stride + 1,
                   (cur[2] - p->kernel) / p->stride + 1};
        } else if (std::holds_alternative<GapSpec>(layer)) {
            if (cur.size() != 3) throw std::invalid_argument("EncoderSpec: GAP needs a 3-d map");
            cur = {cur[0]};
        } else if (const auto* l = std::get_if<LinearSpec>(&layer)) {
            if (cur.size() != 1 || cur[0] != l->in_dim) {
                throw std::invalid_argument("EncoderSpec: linear in_dim mismatch");
            }
            cur = {l->out_dim};
        }
        shapes.push_back(cur);
    }
    return shapes;
}

void EncoderSpec::validate() const {
    if (layers.size() < 2) throw std::invalid_argument("EncoderSpec: too few layers");
    if (!std::holds_alternative<GapSpec>(layers[layers.size() - 2]) ||
        !std::holds_alternative<LinearSpec>(layers.back())) {
        throw std::invalid_argument("EncoderSpec: must end with GAP followed by Linear");
    }
    for (std::size_t i = 0; i + 2 < layers.size(); ++i) {
        if (std::holds_alternative<GapSpec>(layers[i]) ||
            std::holds_alternative<LinearSpec>(layers[i])) {
            throw std::invalid_argument("EncoderSpec: GAP/Linear only allowed as the head");
        }
    }
    layer_output_shapes(*this);  // throws on shape incompatibility
}

void Params::add_scaled(const Params& other, double s) {
    if (layers.size() != other.layers.size()) {
        throw std::invalid_argument("Params::add_scaled: layout mismatch");
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& mine = layers[i];
        const auto& theirs = other.layers[i];
        for (std::size_t j = 0; j < mine.weight.size(); ++j) mine.weight[j] += s * theirs.weight[j];
        for (std::size_t j = 0; j < mine.bias.size(); ++j) mine.bias[j] += s * theirs.bias[j];
    }
}

std::size_t Params::count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias,
              std::size_t stride, std::size_t pad) {
    if (input.rank() != 3 || kernel.rank() != 4) {
        throw std::invalid_argument("conv2d: input must be (C,H,W), kernel (O,C,kh,kw)");
    }
    const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const std::size_t O = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
    if (kernel.dim(1) != C) throw std::invalid_argument("conv2d: channel mismatch");
    const std::size_t OH = conv_out_dim(H, KH, stride, pad);
    const std::size_t OW = conv_out_dim(W, KW, stride, pad);

    Tensor out({O, OH, OW});
    for (std::size_t o = 0; o < O; ++o) {
        for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox) {
                double acc = bias ? (*bias)[o] : 0.0;
                const long y0 = (long)(oy * stride) - (long)pad;
                const long x0 = (long)(ox * stride) - (long)pad;
                for (std::size_t c = 0; c < C; ++c) {
                    for (std::size_t i = 0; i < KH; ++i) {
                        const long y = y0 + (long)i;
                        if (y < 0 || y >= (long)H) continue;
                        for (std::size_t j = 0; j < KW; ++j) {
                            const long x = x0 + (long)j;
                            if (x < 0 || x >= (long)W) continue;
                            acc += input.at3(c, (std::size_t)y, (std::size_t)x) *
                                   kernel.at4(o, c, i, j);
                        }
                    }
                }
                out.at3(o, oy, ox) = acc;
            }
        }
    }
    check_finite(out, "conv2d");
    return out;
}

Tensor conv2d_backward_data(const Tensor& out_grad, const Tensor& kernel,
                            std::size_t stride, std::size_t pad,
                            std::size_t in_h, std::size_t in_w) {
    const std::size_t O = kernel.dim(0), C = kernel.dim(1);
    const std::size_t KH = kernel.dim(2), KW = kernel.dim(3);
    const std::size_t OH = out_grad.dim(1), OW = out_grad.dim(2);
    if (out_grad.dim(0) != O) throw std::invalid_argument("conv2d_backward_data: channel mismatch");

    Tensor in_grad({C, in_h, in_w});
    for (std::size_t o = 0; o < O; ++o) {
        for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox) {
                const double g = out_grad.at3(o, oy, ox);
                if (g == 0.0) continue;
                const long y0 = (long)(oy * stride) - (long)pad;
                const long x0 = (long)(ox * stride) - (long)pad;
                for (std::size_t c = 0; c < C; ++c) {
                    for (std::size_t i = 0; i < KH; ++i) {
                        const long y = y0 + (long)i;
                        if (y < 0 || y >= (long)in_h) continue;
                        for (std::size_t j = 0; j < KW; ++j) {
                            const long x = x0 + (long)j;
                            if (x < 0 || x >= (long)in_w) continue;
                            in_grad.at3(c, (std::size_t)y, (std::size_t)x) +=
                                g * kernel.at4(o, c, i, j);
                        }
                    }
                }
            }
        }
    }
    check_finite(in_grad, "conv2d_backward_data");
    return in_grad;
}

Tensor conv2d_backward_weights(const Tensor& input, const Tensor& out_grad,
                               const std::vector<std::size_t>& kernel_shape,
                               std::size_t stride, std::size_t pad) {
    const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const std::size_t O = out_grad.dim(0), OH = out_grad.dim(1), OW = out_grad.dim(2);
    const std::size_t KH = kernel_shape[2], KW = kernel_shape[3];

    Tensor k_grad(kernel_shape);
    for (std::size_t o = 0; o < O; ++o) {
        for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox) {
                const double g = out_grad.at3(o, oy, ox);
                if (g == 0.0) continue;
                const long y0 = (long)(oy * stride) - (long)pad;
                const long x0 = (long)(ox * stride) - (long)pad;
                for (std::size_t c = 0; c < C; ++c) {
                    for (std::size_t i = 0; i < KH; ++i) {
                        const long y = y0 + (long)i;
                        if (y < 0 || y >= (long)H) continue;
                        for (std::size_t j = 0; j < KW; ++j) {
                            const long x = x0 + (long)j;
                            if (x < 0 || x >= (long)W) continue;
                            k_grad.at4(o, c, i, j) +=
                                g * input.at3(c, (std::size_t)y, (std::size_t)x);
                        }
                    }
                }
            }
        }
    }
    check_finite(k_grad, "conv2d_backward_weights");
    return k_grad;
}

Tensor conv2d_backward_bias(const Tensor& out_grad) {
    return reduce_sum(out_grad, {1, 2});
}

PoolResult maxpool2d(const Tensor& input, std::size_t kernel, std::size_t stride) {
    const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
    if (H < kernel || W < kernel) throw std::invalid_argument("maxpool2d: window larger than input");
    const std::size_t OH = (H - kernel) / stride + 1;
    const std::size_t OW = (W - kernel) / stride + 1;

    PoolResult res{Tensor({C, OH, OW}), Tensor({C, OH, OW})};
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox) {
                double best = -1e308;
                std::size_t best_idx = 0;
                for (std::size_t i = 0; i < kernel; ++i) {
                    for (std::size_t j = 0; j < kernel; ++j) {
                        const std::size_t y = oy * stride + i, x = ox * stride + j;
                        const double v = input.at3(c, y, x);
                        if (v > best) {  // strict: first occurrence wins ties
                            best = v;
                            best_idx = y * W + x;
                        }
                    }
                }
                res.output.at3(c, oy, ox) = best;
                res.switches.at3(c, oy, ox) = (double)best_idx;
            }
        }
    }
    return res;
}

Tensor unpool_switches(const Tensor& values, const Tensor& switches,
                       const std::vector<std::size_t>& input_shape) {
    if (!values.same_shape(switches)) throw std::invalid_argument("unpool: shape mismatch");
    const std::size_t C = input_shape[0], H = input_shape[1], W = input_shape[2];
    Tensor out(input_shape);
    const std::size_t plane = values.dim(1) * values.dim(2);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t flat = (std::size_t)switches[c * plane + i];
            if (flat >= H * W) throw std::runtime_error("unpool: switch index out of range");
            out[c * H * W + flat] += values[c * plane + i];
        }
    }
    return out;
}

Tensor gather_switches(const Tensor& input_shaped, const Tensor& switches) {
    const std::size_t C = switches.dim(0);
    const std::size_t plane = switches.dim(1) * switches.dim(2);
    const std::size_t in_plane = input_shaped.dim(1) * input_shaped.dim(2);
    Tensor out(switches.shape());
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t flat = (std::size_t)switches[c * plane + i];
            if (flat >= in_plane) throw std::runtime_error("gather: switch index out of range");
            out[c * plane + i] = input_shaped[c * in_plane + flat];
        }
    }
    return out;
}

ForwardTrace forward(const EncoderSpec& spec, const Params& params, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != spec.input_channels ||
        image.dim(1) != spec.input_h || image.dim(2) != spec.input_w) {
        throw std::invalid_argument("forward: image shape does not match spec");
    }
    if (params.layers.size() != spec.layers.size()) {
        throw std::invalid_argument("forward: params/spec layer count mismatch");
    }

    ForwardTrace trace;
    trace.layers.resize(spec.layers.size());
    Tensor cur = image;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const auto& layer = spec.layers[li];
        auto& lt = trace.layers[li];
        lt.input = cur;
        if (const auto* c = std::get_if<ConvSpec>(&layer)) {
            const auto& p = params.layers[li];
            cur = conv2d(cur, p.weight, p.has_bias() ? &p.bias : nullptr, c->stride, c->pad);
            lt.pre_act = cur;
        } else if (std::holds_alternative<ReluSpec>(layer)) {
            cur = relu(cur);
        } else if (const auto* p = std::get_if<MaxPoolSpec>(&layer)) {
            auto res = maxpool2d(cur, p->kernel, p->stride);
            cur = res.output;
            lt.switches = std::move(res.switches);
        } else if (std::holds_alternative<GapSpec>(layer)) {
            const double inv = 1.0 / (double)(cur.dim(1) * cur.dim(2));
            Tensor apv({cur.dim(0)});
            for (std::size_t c2 = 0; c2 < cur.dim(0); ++c2) {
                double s = 0.0;
                for (std::size_t i = 0; i < cur.dim(1) * cur.dim(2); ++i) {
                    s += cur[c2 * cur.dim(1) * cur.dim(2) + i];
                }
                apv[c2] = s * inv;
            }
            cur = apv;
            trace.apv = cur;
        } else if (const auto* l = std::get_if<LinearSpec>(&layer)) {
            const auto& p = params.layers[li];
            Tensor out({l->out_dim});
            for (std::size_t o = 0; o < l->out_dim; ++o) {
                double acc = p.has_bias() ? p.bias[o] : 0.0;
                for (std::size_t i = 0; i < l->in_dim; ++i) {
                    acc += p.weight[o * l->in_dim + i] * cur[i];
                }
                out[o] = acc;
            }
            cur = out;
            lt.pre_act = cur;
        }
        check_finite(cur, "forward layer");
    }
    trace.scores = cur;
    return trace;
}

GradientSet backward(const EncoderSpec& spec, const Params& params,
                     const ForwardTrace& trace, const Tensor& score_grad) {
    return backward(spec, params, trace, score_grad, {});
}

GradientSet backward(const EncoderSpec& spec, const Params& params,
                     const ForwardTrace& trace, const Tensor& score_grad,
                     const std::vector<Tensor>& preact_grads) {
    if (trace.layers.size() != spec.layers.size()) {
        throw std::invalid_argument("backward: trace/spec mismatch");
    }
    GradientSet grads;
    grads.params = zero_like(params);

    Tensor g = score_grad;
    for (std::size_t li = spec.layers.size(); li-- > 0;) {
        const auto& layer = spec.layers[li];
        const auto& lt = trace.layers[li];
        const bool inject = li < preact_grads.size() && preact_grads[li].size() > 0;
        if (inject) g = add(g, preact_grads[li]);
        if (const auto* c = std::get_if<ConvSpec>(&layer)) {
            const auto& p = params.layers[li];
            grads.params.layers[li].weight =
                conv2d_backward_weights(lt.input, g, p.weight.shape(), c->stride, c->pad);
            if (p.has_bias()) grads.params.layers[li].bias = conv2d_backward_bias(g);
            g = conv2d_backward_data(g, p.weight, c->stride, c->pad,
                                     lt.input.dim(1), lt.input.dim(2));
        } else if (std::holds_alternative<ReluSpec>(layer)) {
            g = mul(g, heaviside(lt.input));  // subgradient 0 at z = 0
        } else if (std::holds_alternative<MaxPoolSpec>(layer)) {
            g = unpool_switches(g, lt.switches, lt.input.shape());
        } else if (std::holds_alternative<GapSpec>(layer)) {
            const std::size_t C = lt.input.dim(0);
            const std::size_t H = lt.input.dim(1), W = lt.input.dim(2);
            const double inv = 1.0 / (double)(H * W);
            Tensor din({C, H, W});
            for (std::size_t c2 = 0; c2 < C; ++c2) {
                for (std::size_t i = 0; i < H * W; ++i) din[c2 * H * W + i] = g[c2] * inv;
            }
            g = din;
        } else if (const auto* l = std::get_if<LinearSpec>(&layer)) {
            const auto& p = params.layers[li];
            Tensor dw({l->out_dim, l->in_dim});
            Tensor din({l->in_dim});
            for (std::size_t o = 0; o < l->out_dim; ++o) {
                for (std::size_t i = 0; i < l->in_dim; ++i) {
                    dw[o * l->in_dim + i] = g[o] * lt.input[i];
                    din[i] += g[o] * p.weight[o * l->in_dim + i];
                }
            }
            grads.params.layers[li].weight = std::move(dw);
            if (p.has_bias()) grads.params.layers[li].bias = g;
            g = din;
        }
    }
    grads.input_grad = std::move(g);
    check_finite(grads.input_grad, "backward input grad");
    return grads;
}

Params init_params(const EncoderSpec& spec, SeededRng& rng) {
    Params params;
    params.layers.resize(spec.layers.size());
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const auto& layer = spec.layers[li];
        auto& p = params.layers[li];
        if (const auto* c = std::get_if<ConvSpec>(&layer)) {
            p.weight = Tensor({c->out_ch, c->in_ch, c->kernel, c->kernel});
            const double s = std::sqrt(2.0 / (double)(c->in_ch * c->kernel * c->kernel));
            for (std::size_t i = 0; i < p.weight.size(); ++i) p.weight[i] = s * rng.normal();
            if (c->has_bias) p.bias = Tensor({c->out_ch});
        } else if (const auto* l = std::get_if<LinearSpec>(&layer)) {
            p.weight = Tensor({l->out_dim, l->in_dim});
            const double s = std::sqrt(2.0 / (double)l->in_dim);
            for (std::size_t i = 0; i < p.weight.size(); ++i) p.weight[i] = s * rng.normal();
            if (l->has_bias) p.bias = Tensor({l->out_dim});
        }
    }
    return params;
}

Params zero_like(const Params& params) {
    Params out;
    out.layers.resize(params.layers.size());
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        if (params.layers[i].has_weight()) out.layers[i].weight = Tensor(params.layers[i].weight.shape());
        if (params.layers[i].has_bias()) out.layers[i].bias = Tensor(params.layers[i].bias.shape());
    }
    return out;
}

EncoderSpec make_encoder_preset(const std::string& name, std::size_t input_h,
                                std::size_t input_w, std::size_t num_classes,
                                bool with_bias) {
    std::string base = name;
    std::size_t width = 8;
    if (auto pos = name.find(':'); pos != std::string::npos) {
        base = name.substr(0, pos);
        width = (std::size_t)std::stoul(name.substr(pos + 1));
    }
    std::size_t blocks;
    if (base == "vgg-mini-2") blocks = 2;
    else if (base == "vgg-mini-3") blocks = 3;
    else throw std::invalid_argument("unknown encoder preset: " + name);

    EncoderSpec spec;
    spec.input_channels = 3;
    spec.input_h = input_h;
    spec.input_w = input_w;
    std::size_t ch = 3;
    std::size_t out_ch = width;
    for (std::size_t b = 0; b < blocks; ++b) {
        spec.layers.push_back(ConvSpec{ch, out_ch, 3, 1, 1, with_bias});
        spec.layers.push_back(ReluSpec{});
        // the head pools via GAP, so the last block skips the max-pool
        if (b + 1 < blocks) spec.layers.push_back(MaxPoolSpec{2, 2});
        ch = out_ch;
        out_ch *= 2;
    }
    spec.layers.push_back(GapSpec{});
    spec.layers.push_back(LinearSpec{ch, num_classes, with_bias});
    spec.validate();
    return spec;
}

}  // namespace relseg
