#include "relseg/experiment.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "relseg/config.hpp"
#include "relseg/metrics.hpp"

namespace relseg {

PretrainedEncoder pretrain_for_seed(const EncoderSpec& spec, const Dataset& dataset,
                                    std::size_t epochs, double lr, std::uint64_t seed) {
    SeededRng rng(seed);
    Params params = init_params(spec, rng);
    PretrainResult pr = pretrain_classifier(spec, params, dataset, epochs, lr, seed);
    return {std::move(params), pr.best_f1};
}

SweepResult run_sweep(const Dataset& dataset, const SweepOptions& opts,
                      const std::function<void(const SweepCell&)>& on_cell) {
    const std::size_t in_h = opts.input_h ? opts.input_h : dataset.config.height;
    const std::size_t in_w = opts.input_w ? opts.input_w : dataset.config.width;
    EncoderSpec spec =
        make_encoder_preset(opts.preset, in_h, in_w, dataset.num_fg() + 1);

    std::map<std::uint64_t, PretrainedEncoder> pretrained;
    for (std::uint64_t seed : opts.seeds) {
        const double pre_lr = opts.pretrain_lr > 0 ? opts.pretrain_lr : opts.lr;
        pretrained.emplace(seed, pretrain_for_seed(spec, dataset, opts.pretrain_epochs,
                                                   pre_lr, seed));
    }

    SweepResult result;
    for (const std::string& regime : opts.regimes) {
        const std::size_t regime_size = resolve_regime(regime, dataset);
        for (ModelKind kind : opts.models) {
            for (std::uint64_t seed : opts.seeds) {
                const auto t0 = std::chrono::steady_clock::now();
                const PretrainedEncoder& pre = pretrained.at(seed);
                auto params = std::make_shared<Params>(pre.params);
                SeededRng rng(seed ^ 0xdec0de);
                Model model = Model::make(kind, spec, params, opts.epsilon, rng);

                SupervisionPlan plan =
                    build_supervision_plan(dataset, regime_size, seed * 131 + 7);
                TrainOptions topts;
                topts.epochs = opts.epochs;
                topts.batch_size = opts.batch_size;
                topts.lr = opts.lr;
                topts.cls_weight = opts.cls_weight;
                topts.seed = seed;
                topts.input_h = in_h;
                topts.input_w = in_w;
                TrainResult tr = train_model(model, dataset, plan, topts);

                // score the best snapshot, not the last epoch
                *model.params = tr.best_params;
                model.baseline.decoder = tr.best_decoder;
                EvalResult ev = evaluate(model, dataset, true);
                const auto t1 = std::chrono::steady_clock::now();

                SweepCell cell{kind,    regime,      seed,
                               ev.miou, ev.f1,       pre.val_f1,
                               std::chrono::duration<double>(t1 - t0).count()};
                if (on_cell) on_cell(cell);
                result.cells.push_back(std::move(cell));
            }
        }
    }

    for (const std::string& regime : opts.regimes) {
        for (ModelKind kind : opts.models) {
            std::vector<double> mious, f1s;
            for (const SweepCell& c : result.cells) {
                if (c.kind == kind && c.regime == regime) {
                    mious.push_back(c.miou);
                    f1s.push_back(c.f1);
                }
            }
            if (mious.empty()) continue;
            auto mean = [](const std::vector<double>& v) {
                double s = 0.0;
                for (double x : v) s += x;
                return s / (double)v.size();
            };
            auto stdev = [&](const std::vector<double>& v, double m) {
                double s = 0.0;
                for (double x : v) s += (x - m) * (x - m);
                return std::sqrt(s / (double)v.size());
            };
            SweepSummaryRow row;
            row.kind = kind;
            row.regime = regime;
            row.miou_mean = mean(mious);
            row.miou_std = stdev(mious, row.miou_mean);
            row.f1_mean = mean(f1s);
            row.f1_std = stdev(f1s, row.f1_mean);
            result.summary.push_back(row);
        }
    }
    return result;
}

void write_sweep_csv(const SweepResult& result, const std::string& cells_path,
                     const std::string& summary_path) {
    {
        std::ofstream os(cells_path);
        if (!os) throw std::runtime_error("sweep: cannot open '" + cells_path + "'");
        os << "model,regime,seed,miou,f1,pretrain_f1,wall_seconds\n";
        for (const SweepCell& c : result.cells) {
            os << model_kind_name(c.kind) << ',' << c.regime << ',' << c.seed << ','
               << c.miou << ',' << c.f1 << ',' << c.pretrain_f1 << ',' << c.wall_seconds
               << '\n';
        }
    }
    std::ofstream os(summary_path);
    if (!os) throw std::runtime_error("sweep: cannot open '" + summary_path + "'");
    os << "model,regime,miou_mean,miou_std,f1_mean,f1_std\n";
    for (const SweepSummaryRow& r : result.summary) {
        os << model_kind_name(r.kind) << ',' << r.regime << ',' << r.miou_mean << ','
           << r.miou_std << ',' << r.f1_mean << ',' << r.f1_std << '\n';
    }
}

void export_prediction(const Model& model, const Sample& sample,
                       const std::string& dir, const std::string& tag) {
    std::filesystem::create_directories(dir);
    ModelOutput out = model_forward(model, sample.image);
    const std::size_t K = out.logits.dim(0);
    const std::size_t plane = out.logits.dim(1) * out.logits.dim(2);

    export_mask_png(segment(out.logits), out.logits.dim(1), out.logits.dim(2),
                    dir + "/" + tag + "_seg.png");

    // pixel-wise softmax over classes, one probability map per class
    for (std::size_t k = 0; k < K; ++k) {
        Tensor prob({out.logits.dim(1), out.logits.dim(2)});
        for (std::size_t i = 0; i < plane; ++i) {
            double mx = out.logits[i];
            for (std::size_t c = 1; c < K; ++c) mx = std::max(mx, out.logits[c * plane + i]);
            double z = 0.0;
            for (std::size_t c = 0; c < K; ++c) z += std::exp(out.logits[c * plane + i] - mx);
            prob[i] = std::exp(out.logits[k * plane + i] - mx) / z;
        }
        export_heatmap_png(prob, dir + "/" + tag + "_class" + std::to_string(k) + ".png",
                           HeatmapMode::Softmaxed, K);
    }
}

void write_history_csv(const std::vector<EpochMetrics>& history,
                       const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("history: cannot open '" + path + "'");
    os << "epoch,split,miou,f1,cls_loss,seg_loss,wall_seconds\n";
    for (const EpochMetrics& m : history) {
        os << m.epoch << ",train,,," << m.train_cls << ',' << m.train_seg << ','
           << m.wall_seconds << '\n';
        os << m.epoch << ",val," << m.val_miou << ',' << m.val_f1 << ",,,"
           << '\n';
    }
}

std::optional<double> majority_class_iou(const std::vector<std::uint8_t>& pred,
                                         const std::vector<std::uint8_t>& target,
                                         std::size_t num_classes) {
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::uint8_t t : target) {
        if (t != kUnlabeled && t > 0 && t < num_classes) ++counts[t];
    }
    std::size_t best = 0, best_count = 0;
    for (std::size_t c = 1; c < num_classes; ++c) {
        if (counts[c] > best_count) {
            best = c;
            best_count = counts[c];
        }
    }
    if (best == 0) return std::nullopt;

    double inter = 0.0, uni = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (target[i] == kUnlabeled) continue;
        const bool p = pred[i] == best, t = target[i] == best;
        inter += p && t ? 1 : 0;
        uni += p || t ? 1 : 0;
    }
    return uni == 0.0 ? 0.0 : inter / uni;
}

}  // namespace relseg
