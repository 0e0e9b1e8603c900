#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <unistd.h>

#include "relseg/image_io.hpp"
#include "relseg/metrics.hpp"

using namespace relseg;
namespace fs = std::filesystem;

TEST_CASE("segment takes the per-pixel argmax with low-index ties") {
    Tensor logits({3, 1, 3}, {5, 1, 2,    // class 0
                              5, 3, 2,    // class 1 (tie at pixel 0 and 2)
                              0, 3, 1});  // class 2 (tie at pixel 1)
    std::vector<std::uint8_t> mask = segment(logits);
    CHECK(mask == std::vector<std::uint8_t>{0, 1, 0});
}

TEST_CASE("miou matches a hand-counted confusion") {
    // 2 classes over 6 pixels:
    // target: 0 0 0 1 1 1
    // pred:   0 0 1 1 1 0
    // class 0: inter 2, union 4 -> 1/2 ; class 1: inter 2, union 4 -> 1/2
    ConfusionAccumulator acc(2);
    acc.add({0, 0, 1, 1, 1, 0}, {0, 0, 0, 1, 1, 1});
    MiouResult r = miou(acc);
    CHECK(r.per_class[0] == doctest::Approx(0.5));
    CHECK(r.per_class[1] == doctest::Approx(0.5));
    CHECK(r.miou == doctest::Approx(0.5));
}

TEST_CASE("miou on a three-class hand-counted example") {
    // target: 0 0 1 1 2 2 ; pred: 0 1 1 1 2 0
    // class 0: inter 1, union 3 -> 1/3
    // class 1: inter 2, union 3 -> 2/3
    // class 2: inter 1, union 2 -> 1/2  => mean = (1/3 + 2/3 + 1/2)/3 = 1/2
    ConfusionAccumulator acc(3);
    acc.add({0, 1, 1, 1, 2, 0}, {0, 0, 1, 1, 2, 2});
    MiouResult r = miou(acc);
    CHECK(r.per_class[0] == doctest::Approx(1.0 / 3));
    CHECK(r.per_class[1] == doctest::Approx(2.0 / 3));
    CHECK(r.per_class[2] == doctest::Approx(0.5));
    CHECK(r.miou == doctest::Approx(0.5));
}

TEST_CASE("unlabeled pixels and absent classes are excluded") {
    ConfusionAccumulator acc(3);
    acc.add({0, 1, 2}, {0, 1, 255});  // sentinel skipped, class 2 predicted only
    // class 2 was predicted once against a sentinel -> skipped entirely
    MiouResult r = miou(acc);
    CHECK(r.per_class[0] == doctest::Approx(1.0));
    CHECK(r.per_class[1] == doctest::Approx(1.0));
    CHECK(std::isnan(r.per_class[2]));
    CHECK(r.miou == doctest::Approx(1.0));

    ConfusionAccumulator empty(3);
    CHECK(empty.empty());
    CHECK_THROWS(miou(empty));
}

TEST_CASE("accumulators merge additively") {
    ConfusionAccumulator a(2), b(2);
    a.add({0, 1}, {0, 0});
    b.add({1, 1}, {1, 0});
    ConfusionAccumulator whole(2);
    whole.add({0, 1, 1, 1}, {0, 0, 1, 0});
    a.merge(b);
    CHECK(a.intersection == whole.intersection);
    CHECK(a.union_ == whole.union_);
    CHECK(miou(a).miou == miou(whole).miou);
}

TEST_CASE("micro F1 matches a hand-counted example") {
    // 2 images x 2 fg classes; scores > 0 mean predicted present
    // image 0: pred {1}, truth {1}      -> tp 1
    // image 1: pred {1}, truth {2}      -> fp 1, fn 1
    // F1 = 2tp / (2tp + fp + fn) = 2/4 = 1/2
    std::vector<Tensor> scores = {Tensor({3}, {0.0, 2.0, -1.0}),
                                  Tensor({3}, {0.0, 1.0, -2.0})};
    std::vector<std::vector<std::uint8_t>> labels = {{1, 0}, {0, 1}};
    CHECK(f1_multilabel(scores, labels) == doctest::Approx(0.5));
}

TEST_CASE("micro F1 equals 2/3 with one miss") {
    // image 0: pred {1,2}, truth {1} -> tp 1, fp 1
    // image 1: pred {},   truth {}   -> nothing
    std::vector<Tensor> scores = {Tensor({3}, {0.0, 1.0, 1.0}),
                                  Tensor({3}, {0.0, -1.0, -1.0})};
    std::vector<std::vector<std::uint8_t>> labels = {{1, 0}, {0, 0}};
    CHECK(f1_multilabel(scores, labels) == doctest::Approx(2.0 / 3.0));

    // no predictions and no truths: perfect by convention
    std::vector<Tensor> none = {Tensor({3}, {0.0, -1.0, -1.0})};
    CHECK(f1_multilabel(none, {{0, 0}}) == 1.0);
}

TEST_CASE("diverging colormap endpoints and center") {
    std::uint8_t rgb[3];
    heatmap_color(0.0, rgb);
    CHECK(rgb[0] == 255);
    CHECK(rgb[1] == 255);
    CHECK(rgb[2] == 255);
    heatmap_color(1.0, rgb);
    CHECK(rgb[0] == 255);
    CHECK(rgb[1] == 0);
    CHECK(rgb[2] == 0);
    heatmap_color(-1.0, rgb);
    CHECK(rgb[0] == 0);
    CHECK(rgb[1] == 0);
    CHECK(rgb[2] == 255);
    heatmap_color(9.0, rgb);  // clamped
    CHECK(rgb[1] == 0);
}

TEST_CASE("heatmap export writes a decodable colormapped PNG") {
    const fs::path path = fs::temp_directory_path() /
                          ("relseg-heat-" + std::to_string((unsigned long)::getpid()) +
                           ".png");
    Tensor heat({2, 2}, {1.0, -1.0, 0.0, 0.5});
    export_heatmap_png(heat, path.string(), HeatmapMode::Raw, 3);
    ImageU8 img = read_png(path.string());
    CHECK(img.width == 2);
    CHECK(img.height == 2);
    CHECK(img.channels == 3);
    // pixel 0 is the positive extreme -> pure red
    CHECK(img.pixels[0] == 255);
    CHECK(img.pixels[1] == 0);
    // pixel 1 is the negative extreme -> pure blue
    CHECK(img.pixels[3 + 2] == 255);
    CHECK(img.pixels[3 + 0] == 0);
    // pixel 2 is the center -> white
    CHECK(img.pixels[6 + 0] == 255);
    CHECK(img.pixels[6 + 1] == 255);
    CHECK(img.pixels[6 + 2] == 255);
    fs::remove(path);
}

TEST_CASE("mask export uses the fixed color table") {
    const fs::path path = fs::temp_directory_path() /
                          ("relseg-mask-" + std::to_string((unsigned long)::getpid()) +
                           ".png");
    export_mask_png({0, 1, 2, 3}, 2, 2, path.string());
    ImageU8 img = read_png(path.string());
    CHECK(img.width == 2);
    CHECK(img.channels == 3);
    CHECK(img.pixels[0] == 30);       // background
    CHECK(img.pixels[3 + 0] == 220);  // class 1 red-ish
    fs::remove(path);
}

TEST_CASE("png io round-trips gray and rgb images") {
    const fs::path base = fs::temp_directory_path();
    ImageU8 gray;
    gray.width = 3;
    gray.height = 2;
    gray.channels = 1;
    gray.pixels = {0, 50, 100, 150, 200, 255};
    const std::string gpath =
        (base / ("relseg-gray-" + std::to_string((unsigned long)::getpid()) + ".png"))
            .string();
    write_png(gpath, gray);
    ImageU8 gback = read_png(gpath);
    CHECK(gback.channels == 1);
    CHECK(gback.pixels == gray.pixels);
    fs::remove(gpath);

    ImageU8 rgb;
    rgb.width = 2;
    rgb.height = 1;
    rgb.channels = 3;
    rgb.pixels = {255, 0, 0, 0, 255, 0};
    const std::string cpath =
        (base / ("relseg-rgb-" + std::to_string((unsigned long)::getpid()) + ".png"))
            .string();
    write_png(cpath, rgb);
    ImageU8 cback = read_png(cpath);
    CHECK(cback.pixels == rgb.pixels);
    fs::remove(cpath);

    CHECK_THROWS(read_png((base / "relseg-definitely-missing.png").string()));
}
