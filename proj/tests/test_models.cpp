#include <doctest.h>

#include <cmath>

#include "relseg/lrp.hpp"
#include "relseg/models.hpp"

using namespace relseg;

namespace {

Tensor random_positive(std::vector<std::size_t> shape, SeededRng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.raw()) v = rng.uniform(0.05, 1.0);
    return t;
}

Tensor random_tensor(std::vector<std::size_t> shape, SeededRng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.raw()) v = rng.normal();
    return t;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

EncoderSpec small_spec() {
    EncoderSpec spec;
    spec.input_channels = 3;
    spec.input_h = 8;
    spec.input_w = 8;
    spec.layers = {ConvSpec{3, 4, 3, 1, 1, false}, ReluSpec{}, MaxPoolSpec{2, 2},
                   ConvSpec{4, 6, 3, 1, 1, false}, ReluSpec{}, GapSpec{},
                   LinearSpec{6, 4, false}};
    return spec;
}

}  // namespace

TEST_CASE("model kind names round-trip") {
    for (ModelKind k : {ModelKind::UnrolledLrp, ModelKind::UNet, ModelKind::MultiTaskUNet,
                        ModelKind::WsAe, ModelKind::Fcn}) {
        CHECK(model_kind_from_name(model_kind_name(k)) == k);
    }
    CHECK_THROWS(model_kind_from_name("transformer"));
}

TEST_CASE("unrolled decoder owns no parameters") {
    EncoderSpec spec = small_spec();
    SeededRng rng(7);
    auto params = std::make_shared<Params>(init_params(spec, rng));
    UnrolledNet net = UnrolledNet::build(spec, params, 0.0);
    CHECK(net.decoder_free_param_count() == 0);
}

TEST_CASE("explicit unrolled kernel equals the conv adjoint") {
    EncoderSpec spec = small_spec();
    SeededRng rng(8);
    auto params = std::make_shared<Params>(init_params(spec, rng));
    UnrolledNet net = UnrolledNet::build(spec, params, 0.0);

    for (std::size_t li : {0ul, 3ul}) {
        const auto& cs = std::get<ConvSpec>(spec.layers[li]);
        Tensor uk = net.unrolled_kernel(li);
        CHECK(uk.shape() == std::vector<std::size_t>{cs.in_ch, cs.out_ch, 3, 3});

        // slice check: uk[i][o] is the spatial flip of kernel[o][i]
        const Tensor& k = params->layers[li].weight;
        CHECK(uk.at4(1, 0, 0, 0) == k.at4(0, 1, 2, 2));
        CHECK(uk.at4(0, 2 % cs.out_ch, 1, 2) == k.at4(2 % cs.out_ch, 0, 1, 0));

        // conv with the unrolled kernel == backward-data with the original
        const std::size_t h = li == 0 ? 8 : 4;
        Tensor q = random_tensor({cs.out_ch, h, h}, rng);
        Tensor via_kernel = conv2d(q, uk, nullptr, 1, cs.kernel - 1 - cs.pad);
        Tensor via_adjoint = conv2d_backward_data(q, k, 1, cs.pad, h, h);
        CHECK(max_abs_diff(via_kernel, via_adjoint) < 1e-12);
    }
}

TEST_CASE("unrolled forward equals reference relevance propagation") {
    EncoderSpec spec = small_spec();
    SeededRng rng(9);
    auto params = std::make_shared<Params>(init_params(spec, rng));
    Tensor image = random_positive({3, 8, 8}, rng);

    UnrolledNet net = UnrolledNet::build(spec, params, 0.0);
    UnrolledForward fwd = unrolled_forward(net, image);

    CHECK(fwd.heatmaps.shape() == std::vector<std::size_t>{4, 8, 8});
    CHECK(fwd.scores.raw() == forward(spec, *params, image).scores.raw());

    for (std::size_t c = 0; c < 4; ++c) {
        RelevanceMap rm = lrp_full(spec, *params, fwd.trace, c, LrpConfig{0.0});
        CHECK(max_rel_diff(fwd.heat3[c], rm.relevance) < 1e-9);
        // heatmap channel = channel sum of heat3
        Tensor summed = reduce_sum(fwd.heat3[c], {0});
        for (std::size_t i = 0; i < 64; ++i) {
            CHECK(fwd.heatmaps[c * 64 + i] == doctest::Approx(summed[i]));
        }
    }
}

TEST_CASE("heatmap sums equal class scores (conservation through the decoder)") {
    EncoderSpec spec = small_spec();
    SeededRng rng(10);
    auto params = std::make_shared<Params>(init_params(spec, rng));
    Tensor image = random_positive({3, 8, 8}, rng);
    UnrolledNet net = UnrolledNet::build(spec, params, 0.0);
    UnrolledForward fwd = unrolled_forward(net, image);
    for (std::size_t c = 0; c < 4; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < 64; ++i) s += fwd.heatmaps[c * 64 + i];
        CHECK(s == doctest::Approx(fwd.scores[c]).epsilon(1e-9));
    }
}

TEST_CASE("heatmap-loss gradient does not reach the encoder at epsilon 0") {
    EncoderSpec spec = small_spec();
    SeededRng rng(11);
    auto params = std::make_shared<Params>(init_params(spec, rng));
    Tensor image = random_positive({3, 8, 8}, rng);

    UnrolledNet net = UnrolledNet::build(spec, params, 0.0);
    UnrolledForward fwd = unrolled_forward(net, image);
    Tensor dheat = random_tensor({4, 8, 8}, rng);
    UnrolledBackward ub = unrolled_backward(net, fwd, image, dheat);

    for (const auto& lp : ub.encoder_grads.layers) {
        if (lp.has_weight()) CHECK(max_abs(lp.weight) == 0.0);
    }
    // the decoder path itself must carry gradient
    double dec_mag = 0.0;
    for (const auto& lp : ub.decoder_grads.layers) {
        if (lp.has_weight()) dec_mag = std::max(dec_mag, max_abs(lp.weight));
    }
    CHECK(dec_mag > 0.0);
}

TEST_CASE("gate path carries encoder gradient at epsilon > 0") {
    EncoderSpec spec = small_spec();
    SeededRng rng(12);
    auto params = std::make_shared<Params>(init_params(spec, rng));
    Tensor image = random_positive({3, 8, 8}, rng);

    UnrolledNet net = UnrolledNet::build(spec, params, 1e-2);
    UnrolledForward fwd = unrolled_forward(net, image);
    Tensor dheat = random_tensor({4, 8, 8}, rng);
    UnrolledBackward ub = unrolled_backward(net, fwd, image, dheat);

    double enc_mag = 0.0;
    for (const auto& lp : ub.encoder_grads.layers) {
        if (lp.has_weight()) enc_mag = std::max(enc_mag, max_abs(lp.weight));
    }
    CHECK(enc_mag > 0.0);
}

TEST_CASE("unrolled backward matches finite differences") {
    EncoderSpec spec = small_spec();
    SeededRng rng(13);
    auto params = std::make_shared<Params>(init_params(spec, rng));
    Tensor image = random_positive({3, 8, 8}, rng);
    Tensor dheat = random_tensor({4, 8, 8}, rng);

    for (double eps : {0.0, 1e-2}) {
        UnrolledNet net = UnrolledNet::build(spec, params, eps);
        UnrolledForward fwd = unrolled_forward(net, image);
        UnrolledBackward ub = unrolled_backward(net, fwd, image, dheat);
        Params analytic = ub.decoder_grads;
        analytic.add_scaled(ub.encoder_grads, 1.0);

        auto loss = [&]() {
            return dot(unrolled_forward(net, image).heatmaps, dheat);
        };
        const double h = 1e-6;
        SeededRng pick(14);
        for (std::size_t li : {0ul, 3ul, 6ul}) {
            Tensor& w = net.params->layers[li].weight;
            for (int rep = 0; rep < 3; ++rep) {
                const std::size_t i = pick.index(w.size());
                const double orig = w[i];
                w[i] = orig + h;
                const double lp = loss();
                w[i] = orig - h;
                const double lm = loss();
                w[i] = orig;
                const double fd = (lp - lm) / (2 * h);
                const double an = analytic.layers[li].weight[i];
                CHECK(an == doctest::Approx(fd).epsilon(1e-4));
            }
        }
    }
}

TEST_CASE("baseline decoders have the expected shapes") {
    EncoderSpec spec = small_spec();
    SeededRng rng(15);

    auto make = [&](ModelKind kind) {
        auto params = std::make_shared<Params>(init_params(spec, rng));
        return BaselineNet::build(kind, spec, params, rng);
    };

    BaselineNet unet = make(ModelKind::UNet);
    // one pool level: one up-conv plus the final 1x1 head
    CHECK(unet.decoder.size() == 2);
    // concat skip doubles the up-conv input channels
    CHECK(unet.decoder[0].weight.dim(1) == 6 + 4);

    BaselineNet fcn = make(ModelKind::Fcn);
    CHECK(fcn.decoder.size() == 2);
    CHECK(fcn.decoder[0].weight.dim(1) == 6);  // no skip concat

    BaselineNet wsae = make(ModelKind::WsAe);
    CHECK(wsae.decoder.empty());

    CHECK_THROWS(BaselineNet::build(ModelKind::UnrolledLrp, spec,
                                    std::make_shared<Params>(init_params(spec, rng)), rng));
}

TEST_CASE("baseline forward exposes scores only for classifier-bearing kinds") {
    EncoderSpec spec = small_spec();
    SeededRng rng(16);
    Tensor image = random_positive({3, 8, 8}, rng);

    for (ModelKind kind :
         {ModelKind::UNet, ModelKind::MultiTaskUNet, ModelKind::WsAe, ModelKind::Fcn}) {
        auto params = std::make_shared<Params>(init_params(spec, rng));
        BaselineNet net = BaselineNet::build(kind, spec, params, rng);
        BaselineForward fwd = baseline_forward(net, image);
        CHECK(fwd.logits.shape() == std::vector<std::size_t>{4, 8, 8});
        const bool has_scores =
            kind == ModelKind::MultiTaskUNet || kind == ModelKind::WsAe;
        CHECK(fwd.scores.has_value() == has_scores);
    }
}

TEST_CASE("weight-shared autoencoder equals the unrolled net when nothing clips") {
    // all-positive weights and inputs: every tied gate is open and every
    // decoder value stays positive, so the ReLU decoder acts as identity and
    // only then do the two formulations coincide
    EncoderSpec spec = small_spec();
    SeededRng rng(17);
    auto params = std::make_shared<Params>(init_params(spec, rng));
    for (auto& lp : params->layers) {
        for (auto& v : lp.weight.raw()) v = std::abs(v);
    }
    Tensor image = random_positive({3, 8, 8}, rng);

    UnrolledNet unet = UnrolledNet::build(spec, params, 0.0);
    UnrolledForward ufwd = unrolled_forward(unet, image);
    SeededRng rng2(18);
    BaselineNet wsae = BaselineNet::build(ModelKind::WsAe, spec, params, rng2);
    BaselineForward bfwd = baseline_forward(wsae, image);
    CHECK(max_rel_diff(bfwd.logits, ufwd.heatmaps) < 1e-9);

    // a negative head weight closes a ReLU but not a tied gate
    params->layers[6].weight[0] = -std::abs(params->layers[6].weight[0]) - 0.5;
    UnrolledForward ufwd2 = unrolled_forward(unet, image);
    BaselineForward bfwd2 = baseline_forward(wsae, image);
    CHECK(max_rel_diff(bfwd2.logits, ufwd2.heatmaps) > 1e-6);
}

TEST_CASE("baseline backward matches finite differences") {
    EncoderSpec spec = small_spec();
    SeededRng rng(19);
    Tensor image = random_positive({3, 8, 8}, rng);
    Tensor dlogits = random_tensor({4, 8, 8}, rng);
    Tensor dscores = random_tensor({4}, rng);

    for (ModelKind kind :
         {ModelKind::UNet, ModelKind::MultiTaskUNet, ModelKind::WsAe, ModelKind::Fcn}) {
        auto params = std::make_shared<Params>(init_params(spec, rng));
        BaselineNet net = BaselineNet::build(kind, spec, params, rng);
        const bool has_scores =
            kind == ModelKind::MultiTaskUNet || kind == ModelKind::WsAe;

        auto loss = [&]() {
            BaselineForward f = baseline_forward(net, image);
            double s = dot(f.logits, dlogits);
            if (has_scores) s += dot(*f.scores, dscores);
            return s;
        };

        BaselineForward fwd = baseline_forward(net, image);
        BaselineBackward bb = baseline_backward(net, fwd, image, dlogits,
                                                has_scores ? &dscores : nullptr);

        const double h = 1e-6;
        SeededRng pick(20);
        // encoder coordinates
        for (std::size_t li : {0ul, 3ul, 6ul}) {
            Tensor& w = net.params->layers[li].weight;
            for (int rep = 0; rep < 3; ++rep) {
                const std::size_t i = pick.index(w.size());
                const double orig = w[i];
                w[i] = orig + h;
                const double lp = loss();
                w[i] = orig - h;
                const double lm = loss();
                w[i] = orig;
                const double fd = (lp - lm) / (2 * h);
                CHECK(bb.encoder_grads.layers[li].weight[i] ==
                      doctest::Approx(fd).epsilon(1e-4));
            }
        }
        // decoder coordinates
        for (std::size_t dl = 0; dl < net.decoder.size(); ++dl) {
            Tensor& w = net.decoder[dl].weight;
            for (int rep = 0; rep < 3; ++rep) {
                const std::size_t i = pick.index(w.size());
                const double orig = w[i];
                w[i] = orig + h;
                const double lp = loss();
                w[i] = orig - h;
                const double lm = loss();
                w[i] = orig;
                const double fd = (lp - lm) / (2 * h);
                CHECK(bb.decoder_grads[dl].weight[i] ==
                      doctest::Approx(fd).epsilon(1e-4));
            }
        }
    }
}

TEST_CASE("nearest-neighbor upsampling and its adjoint") {
    Tensor x({1, 2, 2}, {1, 2, 3, 4});
    Tensor up = upsample_nearest2(x);
    CHECK(up.shape() == std::vector<std::size_t>{1, 4, 4});
    CHECK(up.at3(0, 0, 0) == 1);
    CHECK(up.at3(0, 0, 1) == 1);
    CHECK(up.at3(0, 1, 1) == 1);
    CHECK(up.at3(0, 3, 3) == 4);

    SeededRng rng(21);
    Tensor g = random_tensor({1, 4, 4}, rng);
    Tensor down = upsample_nearest2_adjoint(g);
    CHECK(down.shape() == x.shape());
    CHECK(dot(up, g) == doctest::Approx(dot(x, down)).epsilon(1e-12));
}
