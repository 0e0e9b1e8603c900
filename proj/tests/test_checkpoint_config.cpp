#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "relseg/checkpoint.hpp"
#include "relseg/config.hpp"

using namespace relseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& tag) {
    return fs::temp_directory_path() /
           ("relseg-" + tag + "-" + std::to_string((unsigned long)::getpid()));
}

EncoderSpec demo_spec() {
    return make_encoder_preset("vgg-mini-2:4", 16, 16, 5, true);
}

}  // namespace

TEST_CASE("encoder spec survives the json round trip") {
    EncoderSpec spec = demo_spec();
    EncoderSpec back = spec_from_json(spec_to_json(spec));
    CHECK(back.input_channels == spec.input_channels);
    CHECK(back.input_h == spec.input_h);
    CHECK(back.layers.size() == spec.layers.size());
    CHECK(std::get<ConvSpec>(back.layers[0]).out_ch == 4);
    CHECK(std::get<LinearSpec>(back.layers.back()).out_dim == 5);
}

TEST_CASE("checkpoint round-trips parameters bit-exactly") {
    EncoderSpec spec = demo_spec();
    SeededRng rng(5);

    Checkpoint ckpt;
    ckpt.kind = ModelKind::UNet;
    ckpt.spec = spec;
    ckpt.epsilon = 1e-2;
    ckpt.seed = 99;
    ckpt.epoch = 7;
    ckpt.params = init_params(spec, rng);
    BaselineNet net = BaselineNet::build(ModelKind::UNet, spec,
                                         std::make_shared<Params>(ckpt.params), rng);
    ckpt.decoder = net.decoder;

    const fs::path path = temp_file("ckpt");
    save_checkpoint(path.string(), ckpt);
    Checkpoint back = load_checkpoint(path.string());
    fs::remove(path);

    CHECK(back.kind == ModelKind::UNet);
    CHECK(back.epsilon == 1e-2);
    CHECK(back.seed == 99);
    CHECK(back.epoch == 7);
    CHECK(back.spec.layers.size() == spec.layers.size());
    REQUIRE(back.params.layers.size() == ckpt.params.layers.size());
    for (std::size_t i = 0; i < ckpt.params.layers.size(); ++i) {
        CHECK(back.params.layers[i].weight == ckpt.params.layers[i].weight);
        CHECK(back.params.layers[i].bias == ckpt.params.layers[i].bias);
    }
    REQUIRE(back.decoder.size() == ckpt.decoder.size());
    for (std::size_t i = 0; i < ckpt.decoder.size(); ++i) {
        CHECK(back.decoder[i].weight == ckpt.decoder[i].weight);
        CHECK(back.decoder[i].bias == ckpt.decoder[i].bias);
    }
}

TEST_CASE("checkpoint loading rejects junk") {
    const fs::path path = temp_file("junk");
    {
        std::ofstream os(path, std::ios::binary);
        os << "not a checkpoint at all";
    }
    CHECK_THROWS(load_checkpoint(path.string()));
    fs::remove(path);
    CHECK_THROWS(load_checkpoint(path.string()));  // missing file
}

TEST_CASE("run config defaults, file loading and overrides") {
    RunConfig def = run_config_from_json(nlohmann::json::object());
    CHECK(def.model_kind == "unrolled_lrp");
    CHECK(def.lr == 1e-5);
    CHECK(def.batch_size == 10);
    CHECK(def.regime == "full");

    const fs::path path = temp_file("cfg");
    {
        std::ofstream os(path);
        os << R"({"model_kind": "unet", "epochs": 3, "seed": 17})";
    }
    RunConfig cfg = load_run_config(path.string(), {"lr=0.001", "regime=5"});
    fs::remove(path);
    CHECK(cfg.model_kind == "unet");
    CHECK(cfg.epochs == 3);
    CHECK(cfg.seed == 17);
    CHECK(cfg.lr == doctest::Approx(0.001));
    CHECK(cfg.regime == "5");
}

TEST_CASE("unknown config fields are rejected") {
    nlohmann::json j = {{"model_kind", "fcn"}, {"momentum", 0.9}};
    CHECK_THROWS_WITH_AS(run_config_from_json(j),
                         doctest::Contains("momentum"), std::invalid_argument);
    CHECK_THROWS(load_run_config("", {"lr"}));          // malformed --set
    CHECK_THROWS(load_run_config("", {"epsilon=-1"}));  // invalid value
}

TEST_CASE("regime strings resolve against the dataset") {
    SceneConfig scene;
    scene.height = 16;
    scene.width = 16;
    scene.num_fg = 4;
    scene.max_objects = 3;
    Dataset ds = generate(scene, 30, 20);
    CHECK(resolve_regime("full", ds) == 20);
    CHECK(resolve_regime("1", ds) == 4);
    CHECK(resolve_regime("5", ds) == 20);   // capped at the train split
    CHECK(resolve_regime("25", ds) == 20);  // capped
    CHECK_THROWS(resolve_regime("some", ds));
    CHECK_THROWS(resolve_regime("0", ds));
}

TEST_CASE("gen config parses and validates") {
    nlohmann::json j = {{"height", 32}, {"width", 32}, {"n_images", 50},
                        {"train_count", 40}, {"seed", 3}};
    GenConfig cfg = gen_config_from_json(j);
    CHECK(cfg.scene.height == 32);
    CHECK(cfg.n_images == 50);
    CHECK(cfg.train_count == 40);
    CHECK(cfg.scene.seed == 3);

    nlohmann::json bad = j;
    bad["train_count"] = 60;
    CHECK_THROWS(gen_config_from_json(bad));
    nlohmann::json unknown = j;
    unknown["shapes"] = 2;
    CHECK_THROWS(gen_config_from_json(unknown));
}
