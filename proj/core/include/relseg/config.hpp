#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relseg/data.hpp"

namespace relseg {

/// Training/eval run configuration. Loaded from a JSON file; every field has
/// a default, unknown fields are rejected, and `--set key=value` overrides
/// are applied after the file.
struct RunConfig {
    std::string model_kind = "unrolled_lrp";
    std::string encoder_preset = "vgg-mini-2:8";
    double epsilon = 0.0;
    double lr = 1e-5;
    double pretrain_lr = 0.0;  // 0: use lr
    double cls_weight = 1.0;
    std::size_t epochs = 100;
    std::size_t batch_size = 10;
    std::string regime = "full";  // labels per class ("1", "5", ...) or "full"
    std::uint64_t seed = 1;
    std::string data_dir;
    std::string out_dir;
    std::string pretrain_checkpoint;  // optional encoder warm start
    std::size_t pretrain_epochs = 20;
    std::size_t input_h = 0, input_w = 0;  // 0: dataset canvas size
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides);
void apply_override(nlohmann::json& j, const std::string& key_value);

/// Number of pixel-labeled training images the regime string denotes.
std::size_t resolve_regime(const std::string& regime, const Dataset& dataset);

/// Data-generation configuration for the gen-data verb.
struct GenConfig {
    SceneConfig scene;
    std::size_t n_images = 1000;
    std::size_t train_count = 800;
    std::string out_dir;
};

GenConfig gen_config_from_json(const nlohmann::json& j);
GenConfig load_gen_config(const std::string& path,
                          const std::vector<std::string>& overrides);

}  // namespace relseg
