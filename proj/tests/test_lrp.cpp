#include <doctest.h>

#include <cmath>

#include "relseg/lrp.hpp"

using namespace relseg;

namespace {

Tensor random_positive(std::vector<std::size_t> shape, SeededRng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.raw()) v = rng.uniform(0.05, 1.0);
    return t;
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

TEST_CASE("lrp_linear reproduces a hand-stepped example") {
    // 2 inputs a = (1, 2), weights rows w0 = (1, 1), w1 = (2, -1)
    // z = (3, 0+... ) -> z0 = 1*1+2*1 = 3, z1 = 1*2+2*(-1) = 0 -> use nonzero
    Tensor a({2}, {1, 2});
    Tensor w({2, 2}, {1, 1, 2, -1});
    Tensor z({2}, {3, 0});
    Tensor r({2}, {6, 5});

    // z1 = 0 with epsilon 0 must error
    CHECK_THROWS(lrp_linear(r, a, z, w, LrpConfig{0.0}));

    // with epsilon 1: q = (6/4, 5/1), p_i = sum_j w_ij q_j
    // p0 = 1*1.5 + 2*5 = 11.5 ; p1 = 1*1.5 + (-1)*5 = -3.5
    // R = a * p = (11.5, -7)
    Tensor out = lrp_linear(r, a, z, w, LrpConfig{1.0});
    CHECK(out[0] == doctest::Approx(11.5));
    CHECK(out[1] == doctest::Approx(-7.0));
}

TEST_CASE("lrp_linear conserves relevance at epsilon 0") {
    SeededRng rng(17);
    Tensor a = random_positive({5}, rng);
    Tensor w({3, 5});
    for (auto& v : w.raw()) v = rng.normal();
    Tensor z({3});
    for (std::size_t o = 0; o < 3; ++o) {
        double s = 0.0;
        for (std::size_t i = 0; i < 5; ++i) s += w[o * 5 + i] * a[i];
        z[o] = s;
    }
    Tensor r({3});
    for (auto& v : r.raw()) v = rng.normal();

    Tensor out = lrp_linear(r, a, z, w, LrpConfig{0.0});
    CHECK(sum_all(out) == doctest::Approx(sum_all(r)).epsilon(1e-10));
}

TEST_CASE("lrp_conv conserves relevance at epsilon 0") {
    SeededRng rng(18);
    Tensor a = random_positive({2, 6, 6}, rng);
    Tensor k({3, 2, 3, 3});
    for (auto& v : k.raw()) v = rng.normal();
    Tensor z = conv2d(a, k, nullptr, 1, 1);
    Tensor r({3, 6, 6});
    for (auto& v : r.raw()) v = rng.normal();

    Tensor out = lrp_conv(r, a, z, k, 1, 1, LrpConfig{0.0});
    CHECK(out.shape() == a.shape());
    CHECK(sum_all(out) == doctest::Approx(sum_all(r)).epsilon(1e-9));
}

TEST_CASE("lrp_maxpool routes relevance to the winners") {
    Tensor x({1, 2, 2}, {1, 5, 2, 3});
    PoolResult pr = maxpool2d(x, 2, 2);
    Tensor r({1, 1, 1}, {7});
    Tensor out = lrp_maxpool(r, pr.switches, x.shape());
    CHECK(out.raw() == std::vector<double>{0, 7, 0, 0});
}

TEST_CASE("lrp_head builds Heaviside-masked constant quotient maps") {
    Tensor z({2, 2, 2}, {1, -1, 2, 0, -3, 4, 5, 6});
    Tensor w_row({2}, {8, -12});  // class weight per channel, n_pixels = 4
    Tensor q = lrp_head(z, w_row, LrpConfig{0.0});
    CHECK(q.shape() == z.shape());
    // channel 0: w/n = 2, masked by z > 0
    CHECK(q.raw() == std::vector<double>{2, 0, 2, 0, 0, -3, -3, -3});
}

TEST_CASE("lrp_full conserves every layer total at epsilon 0") {
    EncoderSpec spec = small_spec();
    SeededRng rng(19);
    Params params = init_params(spec, rng);
    Tensor image = random_positive({3, 8, 8}, rng);
    ForwardTrace trace = forward(spec, params, image);

    for (std::size_t c = 0; c < 4; ++c) {
        std::vector<double> totals;
        RelevanceMap rm = lrp_full(spec, params, trace, c, LrpConfig{0.0}, &totals);
        CHECK(rm.class_id == c);
        CHECK(rm.relevance.shape() == image.shape());
        CHECK(totals.size() >= 3);
        for (double t : totals) {
            CHECK(t == doctest::Approx(trace.scores[c]).epsilon(1e-9));
        }
        CHECK(sum_all(rm.relevance) == doctest::Approx(trace.scores[c]).epsilon(1e-9));
    }
}

TEST_CASE("lrp-0 equals input times gradient on a bias-free ReLU net") {
    // dense-linearization oracle: for piecewise-linear bias-free nets the
    // score is locally z = <grad, x>, and LRP-0 redistributes exactly that
    // product pattern
    EncoderSpec spec = small_spec();
    SeededRng rng(23);
    Params params = init_params(spec, rng);
    Tensor image = random_positive({3, 8, 8}, rng);
    ForwardTrace trace = forward(spec, params, image);

    for (std::size_t c = 0; c < 4; ++c) {
        RelevanceMap rm = lrp_full(spec, params, trace, c, LrpConfig{0.0});
        Tensor onehot({4});
        onehot[c] = 1.0;
        GradientSet gs = backward(spec, params, trace, onehot);
        Tensor ixg = mul(image, gs.input_grad);
        CHECK(max_rel_diff(rm.relevance, ixg) < 1e-9);
    }
}

TEST_CASE("epsilon breaks exact conservation but stays close") {
    EncoderSpec spec = small_spec();
    SeededRng rng(29);
    Params params = init_params(spec, rng);
    Tensor image = random_positive({3, 8, 8}, rng);
    ForwardTrace trace = forward(spec, params, image);

    RelevanceMap exact = lrp_full(spec, params, trace, 0, LrpConfig{0.0});
    RelevanceMap stab = lrp_full(spec, params, trace, 0, LrpConfig{1e-4});
    const double drift = std::abs(sum_all(stab.relevance) - trace.scores[0]);
    CHECK(drift > 0.0);
    // near-zero pre-activations amplify the pointwise relative deviation, so
    // the bound is loose; the bulk of the map moves by O(epsilon)
    CHECK(max_rel_diff(stab.relevance, exact.relevance) < 0.5);
    CHECK(max_abs_diff(stab.relevance, exact.relevance) <
          1e-2 * std::max(1.0, max_abs(exact.relevance)));
}
