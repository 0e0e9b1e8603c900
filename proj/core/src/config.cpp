#include "relseg/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

using nlohmann::json;

namespace relseg {

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const char* context) {
    if (!j.is_object()) {
        throw std::invalid_argument(std::string(context) + ": expected a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key)) {
            throw std::invalid_argument(std::string(context) + ": unknown field '" + key +
                                        "'");
        }
    }
}

json parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
    return json::parse(is);
}

/// Parse the value side of --set as JSON when possible, else a bare string.
json parse_value(const std::string& raw) {
    json v = json::parse(raw, nullptr, false);
    if (v.is_discarded()) return json(raw);
    return v;
}

}  // namespace

void apply_override(json& j, const std::string& key_value) {
    const auto eq = key_value.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw std::invalid_argument("--set expects key=value, got '" + key_value + "'");
    }
    j[key_value.substr(0, eq)] = parse_value(key_value.substr(eq + 1));
}

RunConfig run_config_from_json(const json& j) {
    reject_unknown(j,
                   {"model_kind", "encoder_preset", "epsilon", "lr", "epochs",
                    "batch_size", "regime", "seed", "data_dir", "out_dir",
                    "pretrain_checkpoint", "pretrain_epochs", "pretrain_lr", "cls_weight", "input_h", "input_w"},
                   "run config");
    RunConfig cfg;
    if (j.contains("model_kind")) cfg.model_kind = j["model_kind"].get<std::string>();
    if (j.contains("encoder_preset"))
        cfg.encoder_preset = j["encoder_preset"].get<std::string>();
    if (j.contains("epsilon")) cfg.epsilon = j["epsilon"].get<double>();
    if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
    if (j.contains("epochs")) cfg.epochs = j["epochs"].get<std::size_t>();
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("regime")) {
        const auto& r = j["regime"];
        cfg.regime = r.is_string() ? r.get<std::string>()
                                   : std::to_string(r.get<std::size_t>());
    }
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("data_dir")) cfg.data_dir = j["data_dir"].get<std::string>();
    if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("pretrain_checkpoint"))
        cfg.pretrain_checkpoint = j["pretrain_checkpoint"].get<std::string>();
    if (j.contains("pretrain_lr")) cfg.pretrain_lr = j["pretrain_lr"].get<double>();
    if (j.contains("cls_weight")) cfg.cls_weight = j["cls_weight"].get<double>();
    if (j.contains("pretrain_epochs"))
        cfg.pretrain_epochs = j["pretrain_epochs"].get<std::size_t>();
    if (j.contains("input_h")) cfg.input_h = j["input_h"].get<std::size_t>();
    if (j.contains("input_w")) cfg.input_w = j["input_w"].get<std::size_t>();

    if (cfg.epsilon < 0) throw std::invalid_argument("run config: epsilon must be >= 0");
    if (cfg.batch_size == 0) throw std::invalid_argument("run config: batch_size must be > 0");
    if (cfg.lr <= 0) throw std::invalid_argument("run config: lr must be > 0");
    return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
    json j;
    j["model_kind"] = cfg.model_kind;
    j["encoder_preset"] = cfg.encoder_preset;
    j["epsilon"] = cfg.epsilon;
    j["lr"] = cfg.lr;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["regime"] = cfg.regime;
    j["seed"] = cfg.seed;
    j["data_dir"] = cfg.data_dir;
    j["out_dir"] = cfg.out_dir;
    j["pretrain_checkpoint"] = cfg.pretrain_checkpoint;
    j["pretrain_epochs"] = cfg.pretrain_epochs;
    j["pretrain_lr"] = cfg.pretrain_lr;
    j["cls_weight"] = cfg.cls_weight;
    j["input_h"] = cfg.input_h;
    j["input_w"] = cfg.input_w;
    return j;
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
    json j = path.empty() ? json::object() : parse_file(path);
    for (const auto& kv : overrides) apply_override(j, kv);
    return run_config_from_json(j);
}

std::size_t resolve_regime(const std::string& regime, const Dataset& dataset) {
    if (regime == "full") return dataset.train_count;
    std::size_t per_class = 0;
    try {
        std::size_t pos = 0;
        per_class = std::stoul(regime, &pos);
        if (pos != regime.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
        throw std::invalid_argument("regime must be 'full' or labels per class, got '" +
                                    regime + "'");
    }
    if (per_class == 0) throw std::invalid_argument("regime: labels per class must be > 0");
    return std::min(per_class * dataset.num_fg(), dataset.train_count);
}

GenConfig gen_config_from_json(const json& j) {
    reject_unknown(j,
                   {"height", "width", "num_fg", "min_objects", "max_objects",
                    "noise_amplitude", "color_jitter", "max_rotation", "min_radius_frac",
                    "max_radius_frac", "seed", "n_images", "train_count",
                    "out_dir"},
                   "gen config");
    GenConfig cfg;
    if (j.contains("height")) cfg.scene.height = j["height"].get<std::size_t>();
    if (j.contains("width")) cfg.scene.width = j["width"].get<std::size_t>();
    if (j.contains("num_fg")) cfg.scene.num_fg = j["num_fg"].get<std::size_t>();
    if (j.contains("min_objects")) cfg.scene.min_objects = j["min_objects"].get<std::size_t>();
    if (j.contains("max_objects")) cfg.scene.max_objects = j["max_objects"].get<std::size_t>();
    if (j.contains("noise_amplitude"))
        cfg.scene.noise_amplitude = j["noise_amplitude"].get<double>();
    if (j.contains("color_jitter")) cfg.scene.color_jitter = j["color_jitter"].get<double>();
    if (j.contains("max_rotation")) cfg.scene.max_rotation = j["max_rotation"].get<double>();
    if (j.contains("min_radius_frac"))
        cfg.scene.min_radius_frac = j["min_radius_frac"].get<double>();
    if (j.contains("max_radius_frac"))
        cfg.scene.max_radius_frac = j["max_radius_frac"].get<double>();
    if (j.contains("seed")) cfg.scene.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("n_images")) cfg.n_images = j["n_images"].get<std::size_t>();
    if (j.contains("train_count")) cfg.train_count = j["train_count"].get<std::size_t>();
    if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();

    cfg.scene.validate();
    if (cfg.train_count > cfg.n_images) {
        throw std::invalid_argument("gen config: train_count exceeds n_images");
    }
    return cfg;
}

GenConfig load_gen_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
    json j = path.empty() ? json::object() : parse_file(path);
    for (const auto& kv : overrides) apply_override(j, kv);
    return gen_config_from_json(j);
}

}  // namespace relseg
