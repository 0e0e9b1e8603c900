#include "relseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

using nlohmann::json;

namespace relseg {

namespace {

constexpr char kMagic[4] = {'R', 'S', 'C', '1'};

json layer_to_json(const LayerSpec& layer) {
    json j;
    if (const auto* c = std::get_if<ConvSpec>(&layer)) {
        j["type"] = "conv";
        j["in_ch"] = c->in_ch;
        j["out_ch"] = c->out_ch;
        j["kernel"] = c->kernel;
        j["stride"] = c->stride;
        j["pad"] = c->pad;
        j["bias"] = c->has_bias;
    } else if (std::holds_alternative<ReluSpec>(layer)) {
        j["type"] = "relu";
    } else if (const auto* p = std::get_if<MaxPoolSpec>(&layer)) {
        j["type"] = "maxpool";
        j["kernel"] = p->kernel;
        j["stride"] = p->stride;
    } else if (std::holds_alternative<GapSpec>(layer)) {
        j["type"] = "gap";
    } else {
        const auto& l = std::get<LinearSpec>(layer);
        j["type"] = "linear";
        j["in_dim"] = l.in_dim;
        j["out_dim"] = l.out_dim;
        j["bias"] = l.has_bias;
    }
    return j;
}

LayerSpec layer_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "conv") {
        return ConvSpec{j.at("in_ch").get<std::size_t>(), j.at("out_ch").get<std::size_t>(),
                        j.at("kernel").get<std::size_t>(), j.at("stride").get<std::size_t>(),
                        j.at("pad").get<std::size_t>(), j.at("bias").get<bool>()};
    }
    if (type == "relu") return ReluSpec{};
    if (type == "maxpool") {
        return MaxPoolSpec{j.at("kernel").get<std::size_t>(),
                           j.at("stride").get<std::size_t>()};
    }
    if (type == "gap") return GapSpec{};
    if (type == "linear") {
        return LinearSpec{j.at("in_dim").get<std::size_t>(),
                          j.at("out_dim").get<std::size_t>(), j.at("bias").get<bool>()};
    }
    throw std::runtime_error("checkpoint: unknown layer type '" + type + "'");
}

json group_directory(const std::vector<LayerParams>& layers, const std::string& prefix) {
    json dir = json::array();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].has_weight()) dir.push_back(prefix + std::to_string(i) + ".weight");
        if (layers[i].has_bias()) dir.push_back(prefix + std::to_string(i) + ".bias");
    }
    return dir;
}

void write_group(std::ostream& os, const std::vector<LayerParams>& layers) {
    for (const auto& lp : layers) {
        if (lp.has_weight()) write_tensor(os, lp.weight);
        if (lp.has_bias()) write_tensor(os, lp.bias);
    }
}

}  // namespace

json spec_to_json(const EncoderSpec& spec) {
    json j;
    j["input_channels"] = spec.input_channels;
    j["input_h"] = spec.input_h;
    j["input_w"] = spec.input_w;
    j["layers"] = json::array();
    for (const auto& layer : spec.layers) j["layers"].push_back(layer_to_json(layer));
    return j;
}

EncoderSpec spec_from_json(const json& j) {
    EncoderSpec spec;
    spec.input_channels = j.at("input_channels").get<std::size_t>();
    spec.input_h = j.at("input_h").get<std::size_t>();
    spec.input_w = j.at("input_w").get<std::size_t>();
    for (const auto& lj : j.at("layers")) spec.layers.push_back(layer_from_json(lj));
    spec.validate();
    return spec;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json header;
    header["format"] = 1;
    header["kind"] = model_kind_name(ckpt.kind);
    header["spec"] = spec_to_json(ckpt.spec);
    header["epsilon"] = ckpt.epsilon;
    header["seed"] = ckpt.seed;
    header["epoch"] = ckpt.epoch;
    header["tensors"] = group_directory(ckpt.params.layers, "encoder.");
    header["decoder_layers"] = ckpt.decoder.size();
    for (const auto& name : group_directory(ckpt.decoder, "decoder."))
        header["tensors"].push_back(name);

    const std::string hs = header.dump();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    const std::uint32_t len = (std::uint32_t)hs.size();
    unsigned char lenb[4] = {(unsigned char)(len & 0xff), (unsigned char)((len >> 8) & 0xff),
                             (unsigned char)((len >> 16) & 0xff),
                             (unsigned char)((len >> 24) & 0xff)};
    os.write((const char*)lenb, 4);
    os.write(hs.data(), (std::streamsize)hs.size());
    write_group(os, ckpt.params.layers);
    write_group(os, ckpt.decoder);
    if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
    }
    unsigned char lenb[4];
    is.read((char*)lenb, 4);
    if (!is) throw std::runtime_error("checkpoint: truncated header in '" + path + "'");
    const std::uint32_t len = (std::uint32_t)lenb[0] | ((std::uint32_t)lenb[1] << 8) |
                              ((std::uint32_t)lenb[2] << 16) | ((std::uint32_t)lenb[3] << 24);
    std::string hs(len, '\0');
    is.read(hs.data(), (std::streamsize)len);
    if (!is) throw std::runtime_error("checkpoint: truncated header in '" + path + "'");

    json header = json::parse(hs);
    if (header.at("format").get<int>() != 1) {
        throw std::runtime_error("checkpoint: unsupported format version");
    }
    Checkpoint ckpt;
    ckpt.kind = model_kind_from_name(header.at("kind").get<std::string>());
    ckpt.spec = spec_from_json(header.at("spec"));
    ckpt.epsilon = header.at("epsilon").get<double>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.epoch = header.at("epoch").get<std::size_t>();

    const auto names = header.at("tensors").get<std::vector<std::string>>();
    ckpt.params.layers.resize(ckpt.spec.layers.size());
    ckpt.decoder.resize(header.at("decoder_layers").get<std::size_t>());
    for (const auto& name : names) {
        const auto dot1 = name.find('.');
        const auto dot2 = name.rfind('.');
        if (dot1 == std::string::npos || dot2 == dot1) {
            throw std::runtime_error("checkpoint: malformed tensor name '" + name + "'");
        }
        const std::string group = name.substr(0, dot1);
        const std::size_t li = std::stoul(name.substr(dot1 + 1, dot2 - dot1 - 1));
        const std::string part = name.substr(dot2 + 1);
        std::vector<LayerParams>* target = nullptr;
        if (group == "encoder") target = &ckpt.params.layers;
        else if (group == "decoder") target = &ckpt.decoder;
        else throw std::runtime_error("checkpoint: unknown tensor group '" + group + "'");
        if (li >= target->size()) {
            throw std::runtime_error("checkpoint: tensor index out of range: " + name);
        }
        Tensor t = read_tensor(is);
        if (part == "weight") (*target)[li].weight = std::move(t);
        else if (part == "bias") (*target)[li].bias = std::move(t);
        else throw std::runtime_error("checkpoint: unknown tensor part '" + part + "'");
    }
    return ckpt;
}

}  // namespace relseg
