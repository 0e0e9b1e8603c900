#include "relseg/models.hpp"

#include <cmath>
#include <stdexcept>

namespace relseg {

std::string model_kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::UnrolledLrp: return "unrolled_lrp";
        case ModelKind::UNet: return "unet";
        case ModelKind::MultiTaskUNet: return "multitask_unet";
        case ModelKind::WsAe: return "wsae";
        case ModelKind::Fcn: return "fcn";
    }
    throw std::logic_error("model_kind_name");
}

ModelKind model_kind_from_name(const std::string& name) {
    if (name == "unrolled_lrp") return ModelKind::UnrolledLrp;
    if (name == "unet") return ModelKind::UNet;
    if (name == "multitask_unet") return ModelKind::MultiTaskUNet;
    if (name == "wsae") return ModelKind::WsAe;
    if (name == "fcn") return ModelKind::Fcn;
    throw std::invalid_argument("unknown model kind: " + name);
}

namespace {

std::size_t last_conv_index(const EncoderSpec& spec) {
    for (std::size_t i = spec.layers.size(); i-- > 0;) {
        if (std::holds_alternative<ConvSpec>(spec.layers[i])) return i;
    }
    throw std::invalid_argument("spec has no conv layer");
}

// Tied activation gate: a^(l)/z^(l) of the encoder, i.e. H(z) at eps = 0 and
// relu(z)/(z + sign(z) eps) otherwise.
Tensor tied_gate(const Tensor& z, double eps) {
    if (eps == 0.0) return heaviside(z);
    Tensor g(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double zi = z[i];
        g[i] = zi > 0.0 ? zi / (zi + eps) : 0.0;
    }
    return g;
}

// d gate / dz, nonzero only in the positive regime and only for eps > 0.
Tensor tied_gate_deriv(const Tensor& z, double eps) {
    Tensor g(z.shape());
    if (eps == 0.0) return g;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double zi = z[i];
        g[i] = zi > 0.0 ? eps / ((zi + eps) * (zi + eps)) : 0.0;
    }
    return g;
}

enum class DecoderActivation { TiedGate, OwnRelu };

struct BranchEval {
    std::vector<DecoderStage> stages;  // eval order, deepest conv first
    Tensor pre_skip;
    Tensor heat3;
};

// One decoder branch: bottleneck constant maps (class weights / pixel
// count), then per encoder layer in reverse: gated unrolled convolution,
// switch-driven unpooling, terminal multiplication with the input image.
BranchEval eval_branch(const EncoderSpec& spec, const Params& params,
                       const ForwardTrace& trace, const Tensor& image,
                       std::size_t class_id, double eps, DecoderActivation act) {
    const std::size_t lc = last_conv_index(spec);
    const auto& lin = std::get<LinearSpec>(spec.layers.back());
    const Tensor& head_w = params.layers.back().weight;
    const Tensor& z_last = trace.layers[lc].pre_act;
    const std::size_t Cb = z_last.dim(0), bh = z_last.dim(1), bw = z_last.dim(2);
    if (lin.in_dim != Cb) {
        throw std::invalid_argument("eval_branch: head expects GAP directly after last conv");
    }
    const double inv_n = 1.0 / (double)(bh * bw);

    Tensor u({Cb, bh, bw});
    for (std::size_t c = 0; c < Cb; ++c) {
        const double v = head_w[class_id * lin.in_dim + c] * inv_n;
        for (std::size_t i = 0; i < bh * bw; ++i) u[c * bh * bw + i] = v;
    }

    BranchEval ev;
    for (std::size_t li = lc + 1; li-- > 0;) {
        const auto& layer = spec.layers[li];
        const auto& lt = trace.layers[li];
        if (const auto* cs = std::get_if<ConvSpec>(&layer)) {
            DecoderStage st;
            st.layer_index = li;
            st.u_in = u;
            st.gate = act == DecoderActivation::TiedGate ? tied_gate(lt.pre_act, eps)
                                                         : heaviside(u);
            st.q = mul(st.gate, st.u_in);
            u = conv2d_backward_data(st.q, params.layers[li].weight, cs->stride, cs->pad,
                                     lt.input.dim(1), lt.input.dim(2));
            ev.stages.push_back(std::move(st));
        } else if (std::holds_alternative<MaxPoolSpec>(layer)) {
            u = unpool_switches(u, lt.switches, lt.input.shape());
        } else if (std::holds_alternative<ReluSpec>(layer)) {
            // tied/own activation handled at the conv below
        } else {
            throw std::invalid_argument("eval_branch: unsupported layer in body");
        }
    }
    ev.pre_skip = u;
    ev.heat3 = mul(image, u);
    return ev;
}

struct BranchGrads {
    Params shared;             // grads on tied weights through the decoder
    std::vector<Tensor> dz;    // gate-path grads at conv pre-activations
};

// Adjoint of eval_branch for a gradient on heat3.
void backprop_branch(const EncoderSpec& spec, const Params& params,
                     const ForwardTrace& trace, const Tensor& image,
                     std::size_t class_id, double eps, DecoderActivation act,
                     const std::vector<DecoderStage>& stages, const Tensor& dheat3,
                     BranchGrads& out) {
    const std::size_t lc = last_conv_index(spec);
    Tensor du = mul(image, dheat3);  // through the terminal skip multiplication

    std::size_t stage_idx = stages.size();
    for (std::size_t li = 0; li <= lc; ++li) {
        const auto& layer = spec.layers[li];
        const auto& lt = trace.layers[li];
        if (const auto* cs = std::get_if<ConvSpec>(&layer)) {
            const DecoderStage& st = stages[--stage_idx];
            const Tensor& kernel = params.layers[li].weight;
            Tensor dq = conv2d(du, kernel, nullptr, cs->stride, cs->pad);
            Tensor dk = conv2d_backward_weights(du, st.q, kernel.shape(), cs->stride, cs->pad);
            auto& wacc = out.shared.layers[li].weight;
            for (std::size_t i = 0; i < dk.size(); ++i) wacc[i] += dk[i];
            if (act == DecoderActivation::TiedGate && eps > 0.0) {
                Tensor gd = tied_gate_deriv(lt.pre_act, eps);
                Tensor dz = mul(mul(dq, st.u_in), gd);
                if (out.dz[li].size() == 0) out.dz[li] = std::move(dz);
                else out.dz[li] = add(out.dz[li], dz);
            }
            du = mul(dq, st.gate);
        } else if (std::holds_alternative<MaxPoolSpec>(layer)) {
            du = gather_switches(du, lt.switches);
        }
    }
    // du now sits at the bottleneck constant maps; fold into the head row.
    const auto& lin = std::get<LinearSpec>(spec.layers.back());
    const Tensor& z_last = trace.layers[lc].pre_act;
    const double inv_n = 1.0 / (double)(z_last.dim(1) * z_last.dim(2));
    auto& head_grad = out.shared.layers.back().weight;
    const std::size_t plane = z_last.dim(1) * z_last.dim(2);
    for (std::size_t c = 0; c < lin.in_dim; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += du[c * plane + i];
        head_grad[class_id * lin.in_dim + c] += s * inv_n;
    }
}

Tensor sum_channels(const Tensor& map3) {
    return reduce_sum(map3, {0});
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
        throw std::invalid_argument("concat_channels: spatial mismatch");
    }
    Tensor out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
    std::copy(a.raw().begin(), a.raw().end(), out.raw().begin());
    std::copy(b.raw().begin(), b.raw().end(), out.raw().begin() + (long)a.size());
    return out;
}

}  // namespace

Tensor upsample_nearest2(const Tensor& input) {
    const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
    Tensor out({C, 2 * H, 2 * W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < 2 * H; ++y)
            for (std::size_t x = 0; x < 2 * W; ++x)
                out.at3(c, y, x) = input.at3(c, y / 2, x / 2);
    return out;
}

Tensor upsample_nearest2_adjoint(const Tensor& out_grad) {
    const std::size_t C = out_grad.dim(0), H = out_grad.dim(1) / 2, W = out_grad.dim(2) / 2;
    Tensor in({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < 2 * H; ++y)
            for (std::size_t x = 0; x < 2 * W; ++x)
                in.at3(c, y / 2, x / 2) += out_grad.at3(c, y, x);
    return in;
}

UnrolledNet UnrolledNet::build(EncoderSpec spec, std::shared_ptr<Params> params,
                               double epsilon) {
    spec.validate();
    if (epsilon < 0) throw std::invalid_argument("UnrolledNet: negative epsilon");
    const std::size_t lc = last_conv_index(spec);
    const auto& lin = std::get<LinearSpec>(spec.layers.back());
    const auto& cs = std::get<ConvSpec>(spec.layers[lc]);
    if (cs.out_ch != lin.in_dim) {
        throw std::invalid_argument("UnrolledNet: GAP must directly follow the last conv/ReLU");
    }
    return UnrolledNet{std::move(spec), std::move(params), epsilon};
}

Tensor UnrolledNet::unrolled_kernel(std::size_t layer_index) const {
    const auto* cs = std::get_if<ConvSpec>(&spec.layers.at(layer_index));
    if (!cs) throw std::invalid_argument("unrolled_kernel: not a conv layer");
    const Tensor& k = params->layers[layer_index].weight;
    const std::size_t O = k.dim(0), C = k.dim(1), KH = k.dim(2), KW = k.dim(3);
    Tensor u({C, O, KH, KW});
    for (std::size_t o = 0; o < O; ++o)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < KH; ++i)
                for (std::size_t j = 0; j < KW; ++j)
                    u.at4(c, o, KH - 1 - i, KW - 1 - j) = k.at4(o, c, i, j);
    return u;
}

UnrolledForward unrolled_forward(const UnrolledNet& net, const Tensor& image) {
    UnrolledForward fwd;
    fwd.trace = forward(net.spec, *net.params, image);
    fwd.scores = fwd.trace.scores;

    const std::size_t K = net.num_classes();
    const std::size_t H = image.dim(1), W = image.dim(2);
    fwd.heatmaps = Tensor({K, H, W});
    fwd.heat3.resize(K);
    fwd.stages.resize(K);
    fwd.pre_skip.resize(K);
    for (std::size_t j = 0; j < K; ++j) {
        BranchEval ev = eval_branch(net.spec, *net.params, fwd.trace, image, j,
                                    net.epsilon, DecoderActivation::TiedGate);
        Tensor flat = sum_channels(ev.heat3);
        std::copy(flat.raw().begin(), flat.raw().end(),
                  fwd.heatmaps.raw().begin() + (long)(j * H * W));
        fwd.heat3[j] = std::move(ev.heat3);
        fwd.stages[j] = std::move(ev.stages);
        fwd.pre_skip[j] = std::move(ev.pre_skip);
    }
    check_finite(fwd.heatmaps, "unrolled_forward heatmaps");
    return fwd;
}

UnrolledBackward unrolled_backward(const UnrolledNet& net, const UnrolledForward& fwd,
                                   const Tensor& image, const Tensor& heatmap_grads) {
    const std::size_t K = net.num_classes();
    const std::size_t H = image.dim(1), W = image.dim(2);
    if (heatmap_grads.rank() != 3 || heatmap_grads.dim(0) != K) {
        throw std::invalid_argument("unrolled_backward: bad heatmap grad shape");
    }

    BranchGrads acc;
    acc.shared = zero_like(*net.params);
    acc.dz.resize(net.spec.layers.size());

    const std::size_t C = image.dim(0);
    for (std::size_t j = 0; j < K; ++j) {
        // channel-sum adjoint: broadcast the class-j map over input channels
        Tensor dheat3({C, H, W});
        for (std::size_t c = 0; c < C; ++c) {
            std::copy(heatmap_grads.raw().begin() + (long)(j * H * W),
                      heatmap_grads.raw().begin() + (long)((j + 1) * H * W),
                      dheat3.raw().begin() + (long)(c * H * W));
        }
        backprop_branch(net.spec, *net.params, fwd.trace, image, j, net.epsilon,
                        DecoderActivation::TiedGate, fwd.stages[j], dheat3, acc);
    }

    UnrolledBackward bwd;
    bwd.decoder_grads = std::move(acc.shared);
    bool any_dz = false;
    for (const auto& t : acc.dz) any_dz |= t.size() > 0;
    if (any_dz) {
        Tensor zero_scores({net.num_classes()});
        bwd.encoder_grads =
            backward(net.spec, *net.params, fwd.trace, zero_scores, acc.dz).params;
    } else {
        bwd.encoder_grads = zero_like(*net.params);
    }
    return bwd;
}

BaselineNet BaselineNet::build(ModelKind kind, EncoderSpec spec,
                               std::shared_ptr<Params> params, SeededRng& rng) {
    spec.validate();
    if (kind == ModelKind::UnrolledLrp) {
        throw std::invalid_argument("BaselineNet: use UnrolledNet for unrolled_lrp");
    }
    BaselineNet net;
    net.kind = kind;
    net.spec = std::move(spec);
    net.params = std::move(params);
    if (kind == ModelKind::WsAe) return net;

    // Free decoder: one 3x3 conv per pooling level (deepest first), then a
    // 1x1 conv to class logits. UNet variants concatenate the encoder skip
    // before each conv.
    const bool concat = kind == ModelKind::UNet || kind == ModelKind::MultiTaskUNet;
    std::vector<std::size_t> skip_ch;  // channels at each pool input, deepest first
    auto shapes = layer_output_shapes(net.spec);
    std::size_t cur_ch = 0;
    for (std::size_t li = net.spec.layers.size(); li-- > 0;) {
        if (std::holds_alternative<GapSpec>(net.spec.layers[li])) {
            cur_ch = shapes[li - 1][0];  // bottleneck channels
        } else if (std::holds_alternative<MaxPoolSpec>(net.spec.layers[li])) {
            skip_ch.push_back(shapes[li][0]);
        }
    }
    for (std::size_t ch : skip_ch) {
        const std::size_t in_ch = concat ? cur_ch + ch : cur_ch;
        LayerParams p;
        p.weight = Tensor({ch, in_ch, 3, 3});
        const double s = std::sqrt(2.0 / (double)(in_ch * 9));
        for (std::size_t i = 0; i < p.weight.size(); ++i) p.weight[i] = s * rng.normal();
        p.bias = Tensor({ch});
        net.decoder.push_back(std::move(p));
        cur_ch = ch;
    }
    LayerParams head;
    head.weight = Tensor({net.num_classes(), cur_ch, 1, 1});
    const double s = std::sqrt(2.0 / (double)cur_ch);
    for (std::size_t i = 0; i < head.weight.size(); ++i) head.weight[i] = s * rng.normal();
    head.bias = Tensor({net.num_classes()});
    net.decoder.push_back(std::move(head));
    return net;
}

BaselineForward baseline_forward(const BaselineNet& net, const Tensor& image) {
    BaselineForward fwd;
    fwd.trace = forward(net.spec, *net.params, image);
    const std::size_t K = net.num_classes();
    const std::size_t H = image.dim(1), W = image.dim(2);

    if (net.kind == ModelKind::WsAe) {
        fwd.scores = fwd.trace.scores;
        fwd.logits = Tensor({K, H, W});
        fwd.wsae_stages.resize(K);
        fwd.wsae_pre_skip.resize(K);
        fwd.wsae_heat3.resize(K);
        for (std::size_t j = 0; j < K; ++j) {
            BranchEval ev = eval_branch(net.spec, *net.params, fwd.trace, image, j, 0.0,
                                        DecoderActivation::OwnRelu);
            Tensor flat = sum_channels(ev.heat3);
            std::copy(flat.raw().begin(), flat.raw().end(),
                      fwd.logits.raw().begin() + (long)(j * H * W));
            fwd.wsae_stages[j] = std::move(ev.stages);
            fwd.wsae_pre_skip[j] = std::move(ev.pre_skip);
            fwd.wsae_heat3[j] = std::move(ev.heat3);
        }
        return fwd;
    }

    const bool concat = net.kind == ModelKind::UNet || net.kind == ModelKind::MultiTaskUNet;
    if (net.kind == ModelKind::MultiTaskUNet) fwd.scores = fwd.trace.scores;

    // pool layer indices, deepest first, with their stored inputs as skips
    std::vector<std::size_t> pools;
    for (std::size_t li = net.spec.layers.size(); li-- > 0;) {
        if (std::holds_alternative<MaxPoolSpec>(net.spec.layers[li])) pools.push_back(li);
    }
    const std::size_t gap_index = net.spec.layers.size() - 2;
    Tensor x = fwd.trace.layers[gap_index].input;  // bottleneck feature map
    for (std::size_t k = 0; k < pools.size(); ++k) {
        x = upsample_nearest2(x);
        if (concat) x = concat_channels(x, fwd.trace.layers[pools[k]].input);
        fwd.dec_in.push_back(x);
        const auto& p = net.decoder[k];
        Tensor z = conv2d(x, p.weight, &p.bias, 1, 1);
        fwd.dec_z.push_back(z);
        x = relu(z);
    }
    fwd.dec_in.push_back(x);
    const auto& head = net.decoder.back();
    fwd.logits = conv2d(x, head.weight, &head.bias, 1, 0);
    return fwd;
}

BaselineBackward baseline_backward(const BaselineNet& net, const BaselineForward& fwd,
                                   const Tensor& image, const Tensor& dlogits,
                                   const Tensor* dscores) {
    BaselineBackward bwd;
    const std::size_t K = net.num_classes();
    Tensor score_grad = dscores ? *dscores : Tensor({K});

    if (net.kind == ModelKind::WsAe) {
        BranchGrads acc;
        acc.shared = zero_like(*net.params);
        acc.dz.resize(net.spec.layers.size());
        const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
        for (std::size_t j = 0; j < K; ++j) {
            Tensor dheat3({C, H, W});
            for (std::size_t c = 0; c < C; ++c) {
                std::copy(dlogits.raw().begin() + (long)(j * H * W),
                          dlogits.raw().begin() + (long)((j + 1) * H * W),
                          dheat3.raw().begin() + (long)(c * H * W));
            }
            backprop_branch(net.spec, *net.params, fwd.trace, image, j, 0.0,
                            DecoderActivation::OwnRelu, fwd.wsae_stages[j], dheat3, acc);
        }
        bwd.encoder_grads = std::move(acc.shared);
        GradientSet enc = backward(net.spec, *net.params, fwd.trace, score_grad);
        bwd.encoder_grads.add_scaled(enc.params, 1.0);
        return bwd;
    }

    std::vector<std::size_t> pools;
    for (std::size_t li = net.spec.layers.size(); li-- > 0;) {
        if (std::holds_alternative<MaxPoolSpec>(net.spec.layers[li])) pools.push_back(li);
    }
    const bool concat = net.kind == ModelKind::UNet || net.kind == ModelKind::MultiTaskUNet;

    bwd.decoder_grads.resize(net.decoder.size());
    std::vector<Tensor> inject(net.spec.layers.size());

    const auto& head = net.decoder.back();
    auto& hg = bwd.decoder_grads.back();
    hg.weight = conv2d_backward_weights(fwd.dec_in.back(), dlogits, head.weight.shape(), 1, 0);
    hg.bias = conv2d_backward_bias(dlogits);
    Tensor dx = conv2d_backward_data(dlogits, head.weight, 1, 0,
                                     fwd.dec_in.back().dim(1), fwd.dec_in.back().dim(2));

    for (std::size_t k = pools.size(); k-- > 0;) {
        const auto& p = net.decoder[k];
        Tensor dz = mul(dx, heaviside(fwd.dec_z[k]));
        auto& g = bwd.decoder_grads[k];
        g.weight = conv2d_backward_weights(fwd.dec_in[k], dz, p.weight.shape(), 1, 1);
        g.bias = conv2d_backward_bias(dz);
        Tensor din = conv2d_backward_data(dz, p.weight, 1, 1,
                                          fwd.dec_in[k].dim(1), fwd.dec_in[k].dim(2));
        const std::size_t pool_li = pools[k];
        const Tensor& skip = fwd.trace.layers[pool_li].input;
        std::size_t up_ch = din.dim(0);
        Tensor d_up = din;
        if (concat) {
            up_ch = din.dim(0) - skip.dim(0);
            const std::size_t plane = din.dim(1) * din.dim(2);
            d_up = Tensor({up_ch, din.dim(1), din.dim(2)});
            std::copy(din.raw().begin(), din.raw().begin() + (long)(up_ch * plane),
                      d_up.raw().begin());
            Tensor d_skip({skip.dim(0), din.dim(1), din.dim(2)});
            std::copy(din.raw().begin() + (long)(up_ch * plane), din.raw().end(),
                      d_skip.raw().begin());
            // skip is the ReLU output feeding this pool; find its conv below
            for (std::size_t li = pool_li; li-- > 0;) {
                if (std::holds_alternative<ConvSpec>(net.spec.layers[li])) {
                    Tensor dz_enc = mul(d_skip, heaviside(fwd.trace.layers[li].pre_act));
                    if (inject[li].size() == 0) inject[li] = std::move(dz_enc);
                    else inject[li] = add(inject[li], dz_enc);
                    break;
                }
            }
        }
        dx = upsample_nearest2_adjoint(d_up);
    }
    // dx is now the bottleneck gradient; inject at the last conv.
    const std::size_t lc = last_conv_index(net.spec);
    Tensor dz_b = mul(dx, heaviside(fwd.trace.layers[lc].pre_act));
    if (inject[lc].size() == 0) inject[lc] = std::move(dz_b);
    else inject[lc] = add(inject[lc], dz_b);

    bwd.encoder_grads = backward(net.spec, *net.params, fwd.trace, score_grad, inject).params;
    return bwd;
}

}  // namespace relseg
