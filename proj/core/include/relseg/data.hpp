#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "relseg/tensor.hpp"

namespace relseg {

/// Pixel value reserved in masks for "no pixel labels".
inline constexpr std::uint8_t kUnlabeled = 255;

/// Synthetic shapes scene: colored shapes (one per foreground class) on a
/// textured background. Class 0 is always background.
struct SceneConfig {
    std::size_t height = 64, width = 64;
    std::size_t num_fg = 4;  // circle, square, triangle, cross
    std::size_t min_objects = 1, max_objects = 3;
    double noise_amplitude = 0.04;
    double color_jitter = 0.12;
    double max_rotation = 0.3;  // radians; objects rotate uniformly in +-max_rotation
    double min_radius_frac = 1.0 / 6.0;  // object radius range, fraction of min(H, W)
    double max_radius_frac = 1.0 / 4.0;
    std::uint64_t seed = 1;

    void validate() const;
};

struct Sample {
    Tensor image;                      // (3, H, W), values on the 8-bit grid k/255
    std::vector<std::uint8_t> mask;    // H*W class indices (0 = background)
    std::vector<std::uint8_t> labels;  // num_fg multi-hot

    bool operator==(const Sample&) const = default;
};

struct Dataset {
    SceneConfig config;
    std::vector<std::string> class_names;  // foreground names, index 1..num_fg
    std::size_t train_count = 0;           // first train_count samples = train split
    std::vector<Sample> samples;

    std::size_t num_fg() const { return class_names.size(); }
};

std::vector<std::uint8_t> labels_from_mask(const std::vector<std::uint8_t>& mask,
                                           std::size_t num_fg);

/// Deterministic: sample i depends only on (config.seed, i).
Dataset generate(const SceneConfig& config, std::size_t n_images, std::size_t train_count);
Sample generate_sample(const SceneConfig& config, std::size_t index);

/// Directory layout: images/NNNN.png, masks/NNNN.png, labels.csv, meta.json.
void write_dataset(const Dataset& dataset, const std::string& dir);
Dataset read_dataset(const std::string& dir);

/// Horizontal flip (p = 0.5) + random crop. Labels are recomputed from the
/// cropped mask. Masks of unlabeled samples stay unlabeled.
Sample augment(const Sample& sample, SeededRng& rng, std::size_t crop_h, std::size_t crop_w);
Sample hflip(const Sample& sample);

}  // namespace relseg
