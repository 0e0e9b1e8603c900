#include "relseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "nlohmann/json.hpp"
#include "relseg/image_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace relseg {

namespace {

const char* kShapeNames[4] = {"disk", "ring", "square", "bar"};

// object palette; an object's colour is drawn independently of its class
const double kBaseColors[4][3] = {
    {0.85, 0.20, 0.20},  // red
    {0.20, 0.80, 0.20},  // green
    {0.20, 0.30, 0.85},  // blue
    {0.85, 0.80, 0.20},  // yellow
};

double snap8(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return std::round(v * 255.0) / 255.0;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed ^ (index * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    z = (z ^ (z >> 33)) * 0xff51afd7ed558ccdULL;
    return z ^ (z >> 33);
}

// membership test in the shape's own frame; callers rotate into it. The four
// geometries are chosen to stay distinguishable at small radii: filled disk,
// annulus, filled square, elongated bar.
bool inside_shape(std::size_t kind, double dx, double dy, double r) {
    const double d2 = dx * dx + dy * dy;
    switch (kind) {
        case 0: return d2 <= r * r;
        case 1: return d2 <= r * r && d2 >= 0.3 * r * r;
        case 2: return std::abs(dx) <= r * 0.85 && std::abs(dy) <= r * 0.85;
        case 3: return std::abs(dx) <= r * 1.15 && std::abs(dy) <= r * 0.4;
    }
    return false;
}

// per-class fill pattern, evaluated in the shape's own frame. Every class has
// a characteristic local appearance (solid / stripes / checker / dots) so the
// pixel labels stay well-posed at the small receptive fields used here; the
// pattern rotates with the object, so it carries no orientation shortcut.
double fill_shade(std::size_t kind, double dx, double dy) {
    auto cell = [](double v, double period) {
        const double t = v / period - std::floor(v / period);
        return t < 0.5;
    };
    // the patterns differ in their bright structure (max-pooling keeps the
    // bright cells): all-bright, two stripe orientations, sparse dots
    switch (kind) {
        case 0: return 1.0;                                   // solid
        case 1: return cell(dy, 6.0) ? 1.0 : 0.45;            // stripes
        case 2: return cell(dx, 6.0) ? 1.0 : 0.45;            // cross-stripes
        case 3: return cell(dx, 4.0) && cell(dy, 4.0) ? 1.0 : 0.45;  // dots
    }
    return 1.0;
}

std::string pad_id(std::size_t id) {
    std::ostringstream os;
    os.width(4);
    os.fill('0');
    os << id;
    return os.str();
}

}  // namespace

void SceneConfig::validate() const {
    if (num_fg < 2) throw std::invalid_argument("SceneConfig: need at least 2 foreground classes");
    if (num_fg > 4) throw std::invalid_argument("SceneConfig: at most 4 shape classes available");
    if (height < 16 || width < 16) throw std::invalid_argument("SceneConfig: canvas too small");
    if (min_objects < 1 || max_objects < min_objects || max_objects > num_fg) {
        throw std::invalid_argument("SceneConfig: bad objects-per-image range");
    }
    if (min_radius_frac <= 0 || max_radius_frac < min_radius_frac || max_radius_frac > 0.5) {
        throw std::invalid_argument("SceneConfig: bad radius range");
    }
}

std::vector<std::uint8_t> labels_from_mask(const std::vector<std::uint8_t>& mask,
                                           std::size_t num_fg) {
    std::vector<std::uint8_t> labels(num_fg, 0);
    for (std::uint8_t v : mask) {
        if (v != 0 && v != kUnlabeled) {
            if (v > num_fg) throw std::runtime_error("labels_from_mask: mask index out of range");
            labels[v - 1] = 1;
        }
    }
    return labels;
}

Sample generate_sample(const SceneConfig& config, std::size_t index) {
    config.validate();
    SeededRng rng(mix_seed(config.seed, index));
    const std::size_t H = config.height, W = config.width;

    Sample s;
    s.image = Tensor({3, H, W});
    s.mask.assign(H * W, 0);

    // textured background: vertical gradient plus additive noise
    const double base[3] = {0.42, 0.45, 0.48};
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const double g = 0.12 * ((double)y / (double)H - 0.5);
            const double n = config.noise_amplitude * (rng.uniform() - 0.5) * 2.0;
            for (std::size_t c = 0; c < 3; ++c) {
                s.image.at3(c, y, x) = snap8(base[c] + g + n);
            }
        }
    }

    const std::size_t n_objects =
        config.min_objects + rng.index(config.max_objects - config.min_objects + 1);
    std::vector<std::size_t> classes(config.num_fg);
    for (std::size_t i = 0; i < classes.size(); ++i) classes[i] = i + 1;
    rng.shuffle(classes);
    classes.resize(n_objects);  // non-identical classes per image

    const double rmin = (double)std::min(H, W) * config.min_radius_frac;
    const double rmax = (double)std::min(H, W) * config.max_radius_frac;
    struct Placed {
        double cx, cy, r;
    };
    std::vector<Placed> placed;
    for (std::size_t cls : classes) {
        const std::size_t kind = (cls - 1) % 4;
        // rejection-sample a placement that keeps objects mostly disjoint, so
        // every labeled shape stays recognizable; shrink on repeated failure
        double r = rng.uniform(rmin, rmax);
        double cx = 0.0, cy = 0.0;
        for (std::size_t attempt = 0;; ++attempt) {
            cx = rng.uniform(r, (double)W - r);
            cy = rng.uniform(r, (double)H - r);
            bool clear = true;
            for (const Placed& p : placed) {
                const double dx = cx - p.cx, dy = cy - p.cy;
                clear = clear && dx * dx + dy * dy >= 0.81 * (r + p.r) * (r + p.r);
            }
            if (clear || attempt >= 50) break;
            if (attempt % 10 == 9) r = std::max(rmin * 0.75, r * 0.85);
        }
        placed.push_back({cx, cy, r});
        // pose jitter: orientation varies within +-max_rotation so a handful
        // of pixel-labeled crops cannot pin down the pose
        const double theta = rng.uniform(-config.max_rotation, config.max_rotation);
        const double ct = std::cos(theta), st = std::sin(theta);
        // the palette entry is drawn independently of the class: colour says
        // "object", only the geometry says which one
        const std::size_t palette = rng.index(4);
        double color[3];
        for (std::size_t c = 0; c < 3; ++c) {
            color[c] = kBaseColors[palette][c] +
                       config.color_jitter * (rng.uniform() - 0.5) * 2.0;
        }
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                const double dx = (double)x - cx, dy = (double)y - cy;
                const double sx = ct * dx + st * dy, sy = -st * dx + ct * dy;
                if (!inside_shape(kind, sx, sy, r)) continue;
                const double shade = fill_shade(kind, sx, sy);
                for (std::size_t c = 0; c < 3; ++c)
                    s.image.at3(c, y, x) = snap8(color[c] * shade);
                s.mask[y * W + x] = (std::uint8_t)cls;
            }
        }
    }
    s.labels = labels_from_mask(s.mask, config.num_fg);
    return s;
}

Dataset generate(const SceneConfig& config, std::size_t n_images, std::size_t train_count) {
    config.validate();
    if (n_images == 0) throw std::invalid_argument("generate: n_images must be positive");
    if (train_count > n_images) throw std::invalid_argument("generate: train_count > n_images");
    Dataset d;
    d.config = config;
    d.train_count = train_count;
    for (std::size_t c = 0; c < config.num_fg; ++c) d.class_names.push_back(kShapeNames[c]);
    d.samples.reserve(n_images);
    for (std::size_t i = 0; i < n_images; ++i) d.samples.push_back(generate_sample(config, i));
    return d;
}

void write_dataset(const Dataset& dataset, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    const std::size_t H = dataset.config.height, W = dataset.config.width;

    std::ofstream labels_csv(fs::path(dir) / "labels.csv");
    if (!labels_csv) throw std::runtime_error("write_dataset: cannot write labels.csv");
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const Sample& s = dataset.samples[i];
        ImageU8 img;
        img.width = W;
        img.height = H;
        img.channels = 3;
        img.pixels.resize(W * H * 3);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    img.pixels[(y * W + x) * 3 + c] =
                        (std::uint8_t)std::lround(s.image.at3(c, y, x) * 255.0);
        write_png((fs::path(dir) / "images" / (pad_id(i) + ".png")).string(), img);

        ImageU8 m;
        m.width = W;
        m.height = H;
        m.channels = 1;
        m.pixels = s.mask;
        write_png((fs::path(dir) / "masks" / (pad_id(i) + ".png")).string(), m);

        labels_csv << pad_id(i);
        for (std::size_t c = 0; c < s.labels.size(); ++c) {
            if (s.labels[c]) labels_csv << "," << dataset.class_names[c];
        }
        labels_csv << "\n";
    }

    json meta;
    meta["height"] = dataset.config.height;
    meta["width"] = dataset.config.width;
    meta["num_fg"] = dataset.config.num_fg;
    meta["min_objects"] = dataset.config.min_objects;
    meta["max_objects"] = dataset.config.max_objects;
    meta["noise_amplitude"] = dataset.config.noise_amplitude;
    meta["color_jitter"] = dataset.config.color_jitter;
    meta["max_rotation"] = dataset.config.max_rotation;
    meta["min_radius_frac"] = dataset.config.min_radius_frac;
    meta["max_radius_frac"] = dataset.config.max_radius_frac;
    meta["seed"] = dataset.config.seed;
    meta["n_images"] = dataset.samples.size();
    meta["train_count"] = dataset.train_count;
    meta["class_names"] = dataset.class_names;
    std::ofstream meta_os(fs::path(dir) / "meta.json");
    meta_os << meta.dump(2) << "\n";
}

Dataset read_dataset(const std::string& dir) {
    std::ifstream meta_is(fs::path(dir) / "meta.json");
    if (!meta_is) throw std::runtime_error("read_dataset: missing meta.json in " + dir);
    json meta;
    try {
        meta_is >> meta;
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("read_dataset: malformed meta.json: ") + e.what());
    }

    Dataset d;
    d.config.height = meta.at("height").get<std::size_t>();
    d.config.width = meta.at("width").get<std::size_t>();
    d.config.num_fg = meta.at("num_fg").get<std::size_t>();
    d.config.min_objects = meta.at("min_objects").get<std::size_t>();
    d.config.max_objects = meta.at("max_objects").get<std::size_t>();
    d.config.noise_amplitude = meta.at("noise_amplitude").get<double>();
    d.config.color_jitter = meta.at("color_jitter").get<double>();
    if (meta.contains("max_rotation")) d.config.max_rotation = meta.at("max_rotation").get<double>();
    if (meta.contains("min_radius_frac"))
        d.config.min_radius_frac = meta.at("min_radius_frac").get<double>();
    if (meta.contains("max_radius_frac"))
        d.config.max_radius_frac = meta.at("max_radius_frac").get<double>();
    d.config.seed = meta.at("seed").get<std::uint64_t>();
    d.train_count = meta.at("train_count").get<std::size_t>();
    d.class_names = meta.at("class_names").get<std::vector<std::string>>();
    const std::size_t n = meta.at("n_images").get<std::size_t>();

    // labels.csv: rows may appear in any order; canonicalize by id.
    std::map<std::string, std::vector<std::string>> label_rows;
    std::ifstream csv(fs::path(dir) / "labels.csv");
    if (!csv) throw std::runtime_error("read_dataset: missing labels.csv in " + dir);
    std::string line;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.empty()) continue;
        label_rows[fields[0]] = std::vector<std::string>(fields.begin() + 1, fields.end());
    }

    const std::size_t H = d.config.height, W = d.config.width;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string id = pad_id(i);
        const std::string img_path = (fs::path(dir) / "images" / (id + ".png")).string();
        const std::string mask_path = (fs::path(dir) / "masks" / (id + ".png")).string();
        if (!fs::exists(img_path)) {
            throw std::runtime_error("read_dataset: missing image file for id " + id);
        }
        if (!fs::exists(mask_path)) {
            throw std::runtime_error("read_dataset: missing mask file for id " + id);
        }
        ImageU8 img = read_png(img_path);
        if (img.width != W || img.height != H || img.channels != 3) {
            throw std::runtime_error("read_dataset: bad image geometry in " + img_path);
        }
        ImageU8 m = read_png(mask_path);
        if (m.width != W || m.height != H || m.channels != 1) {
            throw std::runtime_error("read_dataset: bad mask geometry in " + mask_path);
        }
        Sample s;
        s.image = Tensor({3, H, W});
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    s.image.at3(c, y, x) = (double)img.pixels[(y * W + x) * 3 + c] / 255.0;
        s.mask = std::move(m.pixels);
        for (std::uint8_t v : s.mask) {
            if (v != kUnlabeled && v > d.config.num_fg) {
                throw std::runtime_error("read_dataset: mask index out of range in " + mask_path);
            }
        }
        bool fully_unlabeled = true;
        for (std::uint8_t v : s.mask) fully_unlabeled &= v == kUnlabeled;
        if (!fully_unlabeled) {
            s.labels = labels_from_mask(s.mask, d.config.num_fg);
        } else {
            s.labels.assign(d.config.num_fg, 0);
            auto it = label_rows.find(id);
            if (it == label_rows.end()) {
                throw std::runtime_error("read_dataset: no labels.csv row for unlabeled id " + id);
            }
            for (const auto& name : it->second) {
                auto pos = std::find(d.class_names.begin(), d.class_names.end(), name);
                if (pos == d.class_names.end()) {
                    throw std::runtime_error("read_dataset: unknown class name '" + name +
                                             "' in labels.csv row " + id);
                }
                s.labels[(std::size_t)(pos - d.class_names.begin())] = 1;
            }
        }
        d.samples.push_back(std::move(s));
    }
    return d;
}

Sample hflip(const Sample& sample) {
    const std::size_t H = sample.image.dim(1), W = sample.image.dim(2);
    Sample out;
    out.image = Tensor({3, H, W});
    out.mask.assign(H * W, 0);
    out.labels = sample.labels;
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                out.image.at3(c, y, x) = sample.image.at3(c, y, W - 1 - x);
            }
            out.mask[y * W + x] = sample.mask[y * W + (W - 1 - x)];
        }
    }
    return out;
}

Sample augment(const Sample& sample, SeededRng& rng, std::size_t crop_h, std::size_t crop_w) {
    const std::size_t H = sample.image.dim(1), W = sample.image.dim(2);
    if (crop_h > H || crop_w > W) throw std::invalid_argument("augment: crop larger than canvas");

    const bool flip = rng.bernoulli(0.5);
    const std::size_t oy = crop_h < H ? rng.index(H - crop_h + 1) : 0;
    const std::size_t ox = crop_w < W ? rng.index(W - crop_w + 1) : 0;

    Sample out;
    out.image = Tensor({3, crop_h, crop_w});
    out.mask.assign(crop_h * crop_w, 0);
    for (std::size_t y = 0; y < crop_h; ++y) {
        for (std::size_t x = 0; x < crop_w; ++x) {
            const std::size_t sx = flip ? W - 1 - (ox + x) : ox + x;
            const std::size_t sy = oy + y;
            for (std::size_t c = 0; c < 3; ++c) out.image.at3(c, y, x) = sample.image.at3(c, sy, sx);
            out.mask[y * crop_w + x] = sample.mask[sy * W + sx];
        }
    }
    bool fully_unlabeled = true;
    for (std::uint8_t v : out.mask) fully_unlabeled &= v == kUnlabeled;
    if (fully_unlabeled) {
        out.labels = sample.labels;  // image-level labels cannot be recomputed
    } else {
        out.labels = labels_from_mask(out.mask, sample.labels.size());
    }
    return out;
}

}  // namespace relseg
