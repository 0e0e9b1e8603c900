#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "relseg/check_suite.hpp"
#include "relseg/checkpoint.hpp"
#include "relseg/config.hpp"
#include "relseg/experiment.hpp"

using namespace relseg;
namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("-c,--config", args.config_path, "JSON config file");
    cmd->add_option("--set", args.overrides, "key=value config overrides");
}

void echo_config(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    std::ofstream os(fs::path(cfg.out_dir) / "config.json");
    os << run_config_to_json(cfg).dump(2) << '\n';
}

EncoderSpec spec_for(const RunConfig& cfg, const Dataset& ds) {
    const std::size_t h = cfg.input_h ? cfg.input_h : ds.config.height;
    const std::size_t w = cfg.input_w ? cfg.input_w : ds.config.width;
    return make_encoder_preset(cfg.encoder_preset, h, w, ds.num_fg() + 1);
}

void require_same_spec(const EncoderSpec& a, const EncoderSpec& b, const char* what) {
    if (spec_to_json(a) != spec_to_json(b)) {
        throw std::runtime_error(std::string(what) +
                                 ": checkpoint architecture does not match the config");
    }
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
    auto params = std::make_shared<Params>(ckpt.params);
    SeededRng rng(ckpt.seed ^ 0xdec0de);
    Model model = Model::make(ckpt.kind, ckpt.spec, params, ckpt.epsilon, rng);
    if (model.has_free_decoder()) {
        if (ckpt.decoder.size() != model.baseline.decoder.size()) {
            throw std::runtime_error("checkpoint: decoder layer count mismatch");
        }
        model.baseline.decoder = ckpt.decoder;
    }
    return model;
}

int cmd_gen_data(const CommonArgs& args) {
    GenConfig cfg = load_gen_config(args.config_path, args.overrides);
    if (cfg.out_dir.empty()) throw std::runtime_error("gen-data: out_dir is required");
    Dataset ds = generate(cfg.scene, cfg.n_images, cfg.train_count);
    write_dataset(ds, cfg.out_dir);
    std::cout << "wrote " << ds.samples.size() << " samples (" << ds.train_count
              << " train) to " << cfg.out_dir << '\n';
    return 0;
}

int cmd_pretrain(const CommonArgs& args) {
    RunConfig cfg = load_run_config(args.config_path, args.overrides);
    if (cfg.data_dir.empty() || cfg.out_dir.empty()) {
        throw std::runtime_error("pretrain: data_dir and out_dir are required");
    }
    Dataset ds = read_dataset(cfg.data_dir);
    EncoderSpec spec = spec_for(cfg, ds);

    SeededRng rng(cfg.seed);
    Params params = init_params(spec, rng);
    PretrainResult pr =
        pretrain_classifier(spec, params, ds, cfg.pretrain_epochs,
                            cfg.pretrain_lr > 0 ? cfg.pretrain_lr : cfg.lr, cfg.seed);

    echo_config(cfg);
    write_history_csv(pr.history, (fs::path(cfg.out_dir) / "pretrain_history.csv").string());
    Checkpoint ckpt;
    ckpt.kind = model_kind_from_name(cfg.model_kind);
    ckpt.spec = spec;
    ckpt.epsilon = cfg.epsilon;
    ckpt.seed = cfg.seed;
    ckpt.epoch = cfg.pretrain_epochs;
    ckpt.params = params;
    save_checkpoint((fs::path(cfg.out_dir) / "pretrained.ckpt").string(), ckpt);
    std::cout << "pretrain best val F1 " << pr.best_f1 << '\n';
    return 0;
}

int cmd_train(const CommonArgs& args) {
    RunConfig cfg = load_run_config(args.config_path, args.overrides);
    if (cfg.data_dir.empty() || cfg.out_dir.empty()) {
        throw std::runtime_error("train: data_dir and out_dir are required");
    }
    Dataset ds = read_dataset(cfg.data_dir);
    EncoderSpec spec = spec_for(cfg, ds);

    SeededRng rng(cfg.seed);
    auto params = std::make_shared<Params>();
    if (!cfg.pretrain_checkpoint.empty()) {
        Checkpoint pre = load_checkpoint(cfg.pretrain_checkpoint);
        require_same_spec(pre.spec, spec, "train");
        *params = pre.params;
    } else {
        *params = init_params(spec, rng);
    }

    const ModelKind kind = model_kind_from_name(cfg.model_kind);
    SeededRng dec_rng(cfg.seed ^ 0xdec0de);
    Model model = Model::make(kind, spec, params, cfg.epsilon, dec_rng);

    SupervisionPlan plan =
        build_supervision_plan(ds, resolve_regime(cfg.regime, ds), cfg.seed * 131 + 7);
    TrainOptions topts;
    topts.epochs = cfg.epochs;
    topts.batch_size = cfg.batch_size;
    topts.lr = cfg.lr;
    topts.cls_weight = cfg.cls_weight;
    topts.seed = cfg.seed;
    topts.input_h = cfg.input_h;
    topts.input_w = cfg.input_w;
    TrainResult tr = train_model(model, ds, plan, topts);

    echo_config(cfg);
    write_history_csv(tr.history, (fs::path(cfg.out_dir) / "history.csv").string());
    Checkpoint ckpt;
    ckpt.kind = kind;
    ckpt.spec = model.spec;
    ckpt.epsilon = cfg.epsilon;
    ckpt.seed = cfg.seed;
    ckpt.epoch = tr.best_epoch;
    ckpt.params = tr.best_params;
    ckpt.decoder = tr.best_decoder;
    save_checkpoint((fs::path(cfg.out_dir) / "best.ckpt").string(), ckpt);
    std::cout << "best val mIoU " << tr.best_miou << " at epoch " << tr.best_epoch << '\n';
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& report_path) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    Dataset ds = read_dataset(data_dir);
    Model model = model_from_checkpoint(ckpt);
    EvalResult ev = evaluate(model, ds, true);
    std::cout << "miou " << ev.miou << " f1 " << ev.f1 << '\n';
    if (!report_path.empty()) {
        nlohmann::json j;
        j["miou"] = ev.miou;
        j["f1"] = ev.f1;
        j["per_class_iou"] = nlohmann::json::array();
        for (double v : ev.per_class_iou) {
            if (std::isnan(v)) j["per_class_iou"].push_back(nullptr);
            else j["per_class_iou"].push_back(v);
        }
        std::ofstream os(report_path);
        os << j.dump(2) << '\n';
    }
    return 0;
}

int cmd_export(const std::string& ckpt_path, const std::string& data_dir,
               const std::vector<std::size_t>& ids, const std::string& out_dir) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    Dataset ds = read_dataset(data_dir);
    Model model = model_from_checkpoint(ckpt);
    for (std::size_t id : ids) {
        if (id >= ds.samples.size()) {
            throw std::runtime_error("export: sample id " + std::to_string(id) +
                                     " out of range");
        }
        char tag[16];
        std::snprintf(tag, sizeof tag, "%04zu", id);
        export_prediction(model, ds.samples[id], out_dir, tag);
    }
    std::cout << "exported " << ids.size() << " samples to " << out_dir << '\n';
    return 0;
}

int cmd_check(std::size_t seeds, const std::vector<std::string>& presets, double epsilon,
              const std::string& csv_path) {
    CheckOptions opts;
    opts.seed_count = seeds;
    if (!presets.empty()) opts.presets = presets;
    opts.epsilon = epsilon;
    CheckReport report = run_check_suite(opts);
    for (const CheckRow& row : report.rows) {
        std::cout << format_check_row(row) << '\n';
    }
    if (!csv_path.empty()) write_check_csv(report, csv_path);
    std::cout << (report.passed ? "CHECK PASS" : "CHECK FAIL") << '\n';
    return report.passed ? 0 : 1;
}

int cmd_sweep(const CommonArgs& args, const std::string& models_csv,
              const std::string& regimes_csv, const std::string& seeds_csv) {
    RunConfig cfg = load_run_config(args.config_path, args.overrides);
    if (cfg.data_dir.empty() || cfg.out_dir.empty()) {
        throw std::runtime_error("sweep: data_dir and out_dir are required");
    }
    Dataset ds = read_dataset(cfg.data_dir);

    SweepOptions opts;
    opts.preset = cfg.encoder_preset;
    opts.lr = cfg.lr;
    opts.pretrain_lr = cfg.pretrain_lr;
    opts.cls_weight = cfg.cls_weight;
    opts.epsilon = cfg.epsilon;
    opts.epochs = cfg.epochs;
    opts.pretrain_epochs = cfg.pretrain_epochs;
    opts.batch_size = cfg.batch_size;
    opts.input_h = cfg.input_h;
    opts.input_w = cfg.input_w;

    auto split = [](const std::string& csv) {
        std::vector<std::string> out;
        std::string cur;
        for (char c : csv) {
            if (c == ',') {
                if (!cur.empty()) out.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        if (!cur.empty()) out.push_back(cur);
        return out;
    };
    if (!models_csv.empty()) {
        opts.models.clear();
        for (const auto& name : split(models_csv))
            opts.models.push_back(model_kind_from_name(name));
    }
    if (!regimes_csv.empty()) opts.regimes = split(regimes_csv);
    if (!seeds_csv.empty()) {
        opts.seeds.clear();
        for (const auto& s : split(seeds_csv)) opts.seeds.push_back(std::stoull(s));
    }

    echo_config(cfg);
    SweepResult result = run_sweep(ds, opts, [](const SweepCell& cell) {
        std::cout << model_kind_name(cell.kind) << " regime=" << cell.regime
                  << " seed=" << cell.seed << " miou=" << cell.miou << " f1=" << cell.f1
                  << " (" << cell.wall_seconds << "s)" << std::endl;
    });
    write_sweep_csv(result, (fs::path(cfg.out_dir) / "sweep_cells.csv").string(),
                    (fs::path(cfg.out_dir) / "sweep_summary.csv").string());
    for (const SweepSummaryRow& row : result.summary) {
        std::cout << model_kind_name(row.kind) << " regime=" << row.regime << " miou "
                  << row.miou_mean << " +- " << row.miou_std << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tied-weight relevance-decoder segmentation toolkit"};
    app.require_subcommand(1);

    CommonArgs gen_args, pre_args, train_args, sweep_args;
    std::string ckpt_path, data_dir, out_dir, report_path;
    std::vector<std::size_t> ids;
    std::size_t check_seeds = 10;
    std::vector<std::string> check_presets;
    double check_epsilon = 0.0;
    std::string check_csv;
    std::string models_csv, regimes_csv, seeds_csv;

    add_common(app.add_subcommand("gen-data", "Generate a synthetic shapes dataset"),
               gen_args);
    add_common(app.add_subcommand("pretrain", "Classification-only encoder warm-up"),
               pre_args);
    add_common(app.add_subcommand("train", "Train one model"), train_args);

    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    eval_cmd->add_option("--checkpoint", ckpt_path)->required();
    eval_cmd->add_option("--data", data_dir)->required();
    eval_cmd->add_option("--report", report_path, "per-class IoU JSON report path");

    CLI::App* export_cmd =
        app.add_subcommand("export", "Export heatmap and segmentation PNGs");
    export_cmd->add_option("--checkpoint", ckpt_path)->required();
    export_cmd->add_option("--data", data_dir)->required();
    export_cmd->add_option("--ids", ids, "sample indices to export")->required();
    export_cmd->add_option("--out", out_dir)->required();

    CLI::App* check_cmd = app.add_subcommand("check", "Run the equivalence suite");
    check_cmd->add_option("--seeds", check_seeds);
    check_cmd->add_option("--preset", check_presets, "encoder presets (repeatable)");
    check_cmd->add_option("--epsilon", check_epsilon);
    check_cmd->add_option("--csv", check_csv, "write the row report as CSV");

    CLI::App* sweep_cmd =
        app.add_subcommand("sweep", "Regime x model x seed training sweep");
    add_common(sweep_cmd, sweep_args);
    sweep_cmd->add_option("--models", models_csv, "comma-separated model kinds");
    sweep_cmd->add_option("--regimes", regimes_csv, "comma-separated regimes");
    sweep_cmd->add_option("--seeds", seeds_csv, "comma-separated seeds");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("gen-data")) return cmd_gen_data(gen_args);
        if (app.got_subcommand("pretrain")) return cmd_pretrain(pre_args);
        if (app.got_subcommand("train")) return cmd_train(train_args);
        if (app.got_subcommand("eval")) return cmd_eval(ckpt_path, data_dir, report_path);
        if (app.got_subcommand("export")) return cmd_export(ckpt_path, data_dir, ids, out_dir);
        if (app.got_subcommand("check"))
            return cmd_check(check_seeds, check_presets, check_epsilon, check_csv);
        if (app.got_subcommand("sweep"))
            return cmd_sweep(sweep_args, models_csv, regimes_csv, seeds_csv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
