#include <benchmark/benchmark.h>

#include "relseg/lrp.hpp"
#include "relseg/models.hpp"
#include "relseg/train.hpp"

using namespace relseg;

namespace {

struct Fixture {
    EncoderSpec spec;
    std::shared_ptr<Params> params;
    Tensor image;

    explicit Fixture(const std::string& preset, std::size_t hw) {
        spec = make_encoder_preset(preset, hw, hw, 5);
        SeededRng rng(1);
        params = std::make_shared<Params>(init_params(spec, rng));
        image = Tensor({3, hw, hw});
        for (auto& v : image.raw()) v = rng.uniform(0.05, 1.0);
    }
};

void bm_conv2d(benchmark::State& state) {
    SeededRng rng(2);
    Tensor x({8, 32, 32});
    for (auto& v : x.raw()) v = rng.normal();
    Tensor k({16, 8, 3, 3});
    for (auto& v : k.raw()) v = rng.normal();
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv2d(x, k, nullptr, 1, 1));
    }
}
BENCHMARK(bm_conv2d);

void bm_encoder_forward(benchmark::State& state) {
    Fixture f("vgg-mini-2:8", 32);
    for (auto _ : state) {
        benchmark::DoNotOptimize(forward(f.spec, *f.params, f.image));
    }
}
BENCHMARK(bm_encoder_forward);

void bm_lrp_full(benchmark::State& state) {
    Fixture f("vgg-mini-2:8", 32);
    ForwardTrace trace = forward(f.spec, *f.params, f.image);
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            lrp_full(f.spec, *f.params, trace, 1, LrpConfig{0.0}));
    }
}
BENCHMARK(bm_lrp_full);

void bm_unrolled_forward(benchmark::State& state) {
    Fixture f("vgg-mini-2:8", 32);
    UnrolledNet net = UnrolledNet::build(f.spec, f.params, 0.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(unrolled_forward(net, f.image));
    }
}
BENCHMARK(bm_unrolled_forward);

void bm_unrolled_backward(benchmark::State& state) {
    Fixture f("vgg-mini-2:8", 32);
    UnrolledNet net = UnrolledNet::build(f.spec, f.params, 0.0);
    UnrolledForward fwd = unrolled_forward(net, f.image);
    SeededRng rng(3);
    Tensor dheat({5, 32, 32});
    for (auto& v : dheat.raw()) v = rng.normal();
    for (auto _ : state) {
        benchmark::DoNotOptimize(unrolled_backward(net, fwd, f.image, dheat));
    }
}
BENCHMARK(bm_unrolled_backward);

}  // namespace

BENCHMARK_MAIN();
