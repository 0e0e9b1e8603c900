#include "relseg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <stdexcept>

#include "relseg/metrics.hpp"

namespace relseg {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// log(1 + e^x) without overflow
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

Sample center_crop(const Sample& s, std::size_t h, std::size_t w) {
    const std::size_t H = s.image.dim(1), W = s.image.dim(2);
    if (h == H && w == W) return s;
    const std::size_t oy = (H - h) / 2, ox = (W - w) / 2;
    Sample out;
    out.image = Tensor({3, h, w});
    out.mask.assign(h * w, 0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) out.image.at3(c, y, x) = s.image.at3(c, oy + y, ox + x);
            out.mask[y * w + x] = s.mask[(oy + y) * W + ox + x];
        }
    }
    out.labels = s.labels;
    return out;
}

void adamw_tensor(Tensor& p, const Tensor& g, Tensor& m, Tensor& v, double lr,
                  double b1, double b2, double eps, double wd, std::size_t t) {
    const double c1 = 1.0 - std::pow(b1, (double)t);
    const double c2 = 1.0 - std::pow(b2, (double)t);
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (1 - b1) * g[i];
        v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
    }
}

}  // namespace

SegLoss seg_loss_image(const Tensor& stack, const std::vector<std::uint8_t>& mask) {
    if (stack.rank() != 3) throw std::invalid_argument("seg_loss: expected (K,H,W)");
    const std::size_t K = stack.dim(0), plane = stack.dim(1) * stack.dim(2);
    if (mask.size() != plane) throw std::invalid_argument("seg_loss: mask size mismatch");

    SegLoss res;
    res.grad = Tensor(stack.shape());
    std::vector<double> p(K);
    for (std::size_t i = 0; i < plane; ++i) {
        const std::uint8_t t = mask[i];
        if (t == kUnlabeled) continue;
        if (t >= K) throw std::invalid_argument("seg_loss: mask index >= class count");
        double mx = stack[i];
        for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, stack[k * plane + i]);
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            p[k] = std::exp(stack[k * plane + i] - mx);
            z += p[k];
        }
        for (std::size_t k = 0; k < K; ++k) p[k] /= z;
        res.total += -std::log(std::max(p[t], 1e-300));
        for (std::size_t k = 0; k < K; ++k) {
            res.grad[k * plane + i] = p[k] - (k == t ? 1.0 : 0.0);
        }
        res.pixel_count += 1;
    }
    return res;
}

LossGrad cls_loss(const Tensor& scores, const std::vector<std::uint8_t>& labels) {
    const std::size_t num_fg = labels.size();
    if (scores.size() != num_fg + 1) {
        throw std::invalid_argument("cls_loss: scores length must be num_fg + 1");
    }
    LossGrad res;
    res.grad = Tensor(scores.shape());  // background entry stays 0 (weight 0)
    for (std::size_t c = 0; c < num_fg; ++c) {
        const double s = scores[c + 1];
        const double y = labels[c] ? 1.0 : 0.0;
        res.value += softplus(s) - y * s;
        res.grad[c + 1] = (sigmoid(s) - y) / (double)num_fg;
    }
    res.value /= (double)num_fg;
    return res;
}

void AdamW::init(const Params& shape) {
    m = zero_like(shape);
    v = zero_like(shape);
    step_count = 0;
}

void AdamW::step(Params& params, const Params& grads) {
    if (m.layers.empty()) init(params);
    ++step_count;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        auto& p = params.layers[i];
        const auto& g = grads.layers[i];
        if (p.has_weight()) {
            adamw_tensor(p.weight, g.weight, m.layers[i].weight, v.layers[i].weight, lr,
                         beta1, beta2, eps, weight_decay, step_count);
        }
        if (p.has_bias()) {
            adamw_tensor(p.bias, g.bias, m.layers[i].bias, v.layers[i].bias, lr, beta1,
                         beta2, eps, weight_decay, step_count);
        }
    }
}

SupervisionPlan build_supervision_plan(const Dataset& dataset, std::size_t regime_size,
                                       std::uint64_t seed) {
    const std::size_t n = dataset.train_count;
    const std::size_t num_fg = dataset.num_fg();
    if (regime_size > n) throw std::invalid_argument("plan: regime larger than train split");

    std::vector<std::vector<std::size_t>> by_class(num_fg);
    std::vector<double> class_count(num_fg, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < num_fg; ++c) {
            if (dataset.samples[i].labels[c]) {
                by_class[c].push_back(i);
                class_count[c] += 1;
            }
        }
    }

    SupervisionPlan plan;
    plan.seed = seed;
    SeededRng rng(seed);
    std::set<std::size_t> chosen;

    const bool balanced = regime_size <= 5 * num_fg;
    if (balanced && regime_size < num_fg) {
        throw std::invalid_argument("plan: balanced regime smaller than class count");
    }

    auto pick_for_class = [&](std::size_t c) -> bool {
        std::vector<std::size_t> avail;
        for (std::size_t id : by_class[c])
            if (!chosen.count(id)) avail.push_back(id);
        if (avail.empty()) return false;
        chosen.insert(avail[rng.index(avail.size())]);
        return true;
    };

    if (balanced) {
        // round-robin over classes, rarest first, until the regime is filled
        std::vector<std::size_t> order(num_fg);
        for (std::size_t c = 0; c < num_fg; ++c) order[c] = c;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return class_count[a] < class_count[b]; });
        while (chosen.size() < regime_size) {
            bool progress = false;
            for (std::size_t c : order) {
                if (chosen.size() >= regime_size) break;
                progress |= pick_for_class(c);
            }
            if (!progress) break;
        }
        for (std::size_t c = 0; c < num_fg; ++c) {
            bool covered = false;
            for (std::size_t id : chosen) covered |= dataset.samples[id].labels[c] != 0;
            if (!covered) throw std::runtime_error("plan: class not coverable in regime");
        }
    } else {
        double total = 0.0;
        for (double v : class_count) total += v;
        std::vector<double> mix(num_fg);
        for (std::size_t c = 0; c < num_fg; ++c) {
            mix[c] = 0.5 / (double)num_fg + 0.5 * class_count[c] / total;
        }
        std::size_t guard = 0;
        while (chosen.size() < regime_size && guard < regime_size * 100) {
            ++guard;
            double r = rng.uniform();
            std::size_t c = 0;
            for (; c + 1 < num_fg; ++c) {
                if (r < mix[c]) break;
                r -= mix[c];
            }
            pick_for_class(c);
        }
        // top up uniformly if some classes ran dry
        std::vector<std::size_t> rest;
        for (std::size_t i = 0; i < n; ++i)
            if (!chosen.count(i)) rest.push_back(i);
        rng.shuffle(rest);
        for (std::size_t id : rest) {
            if (chosen.size() >= regime_size) break;
            chosen.insert(id);
        }
    }
    plan.labeled_ids.assign(chosen.begin(), chosen.end());
    return plan;
}

Model Model::make(ModelKind kind, EncoderSpec spec, std::shared_ptr<Params> params,
                  double epsilon, SeededRng& rng) {
    Model m;
    m.kind = kind;
    m.spec = spec;
    m.params = params;
    m.epsilon = epsilon;
    if (kind == ModelKind::UnrolledLrp) {
        UnrolledNet::build(spec, params, epsilon);  // validates
    } else {
        m.baseline = BaselineNet::build(kind, std::move(spec), std::move(params), rng);
    }
    if (kind == ModelKind::UnrolledLrp || kind == ModelKind::WsAe) {
        m.logit_scale = (double)(m.spec.input_h * m.spec.input_w);
    }
    return m;
}

ModelOutput model_forward(const Model& model, const Tensor& image) {
    ModelOutput out;
    if (model.kind == ModelKind::UnrolledLrp) {
        UnrolledNet net{model.spec, model.params, model.epsilon};
        UnrolledForward fwd = unrolled_forward(net, image);
        out.scores = fwd.scores;
        out.logits = std::move(fwd.heatmaps);
    } else {
        BaselineForward fwd = baseline_forward(model.baseline, image);
        out.scores = fwd.scores;
        out.logits = std::move(fwd.logits);
    }
    if (model.logit_scale != 1.0) out.logits = scale(out.logits, model.logit_scale);
    return out;
}

StepReport combined_step(Model& model, const std::vector<Sample>& batch,
                         AdamW& encoder_opt, AdamW& decoder_opt,
                         double cls_weight) {
    if (batch.empty()) throw std::invalid_argument("combined_step: empty batch");
    const double inv_b = 1.0 / (double)batch.size();
    const double cls_b = cls_weight * inv_b;

    struct ItemState {
        UnrolledForward ufwd;
        BaselineForward bfwd;
        SegLoss seg;
        LossGrad cls;
        bool labeled = false;
    };
    std::vector<ItemState> items(batch.size());

    StepReport report;
    std::size_t total_pixels = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Sample& s = batch[i];
        auto& it = items[i];
        Tensor logits;
        if (model.kind == ModelKind::UnrolledLrp) {
            UnrolledNet net{model.spec, model.params, model.epsilon};
            it.ufwd = unrolled_forward(net, s.image);
            logits = it.ufwd.heatmaps;
        } else {
            it.bfwd = baseline_forward(model.baseline, s.image);
            logits = it.bfwd.logits;
        }
        if (model.logit_scale != 1.0) logits = scale(logits, model.logit_scale);
        it.seg = seg_loss_image(logits, s.mask);
        it.labeled = it.seg.pixel_count > 0;
        if (it.labeled) {
            total_pixels += it.seg.pixel_count;
            report.labeled_images += 1;
        }
        if (model.uses_cls_loss()) {
            const Tensor& scores = model.kind == ModelKind::UnrolledLrp
                                       ? it.ufwd.scores
                                       : *it.bfwd.scores;
            it.cls = cls_loss(scores, s.labels);
            report.cls_loss += it.cls.value * inv_b;
        }
    }
    const double inv_p = total_pixels ? 1.0 / (double)total_pixels : 0.0;
    for (const auto& it : items)
        if (it.labeled) report.seg_loss += it.seg.total * inv_p;
    report.total = report.cls_loss + report.seg_loss;
    if (!std::isfinite(report.total)) {
        throw std::runtime_error("combined_step: non-finite loss (cls=" +
                                 std::to_string(report.cls_loss) +
                                 ", seg=" + std::to_string(report.seg_loss) + ")");
    }

    Params enc_grads = zero_like(*model.params);
    Params dec_grads;
    if (model.has_free_decoder()) {
        Params shape;
        shape.layers = model.baseline.decoder;
        dec_grads = zero_like(shape);
    }

    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Sample& s = batch[i];
        auto& it = items[i];
        if (model.kind == ModelKind::UnrolledLrp) {
            UnrolledNet net{model.spec, model.params, model.epsilon};
            if (it.labeled) {
                Tensor dheat = scale(it.seg.grad, inv_p * model.logit_scale);
                UnrolledBackward ub = unrolled_backward(net, it.ufwd, s.image, dheat);
                enc_grads.add_scaled(ub.decoder_grads, 1.0);
                enc_grads.add_scaled(ub.encoder_grads, 1.0);
            }
            GradientSet gs = backward(model.spec, *model.params, it.ufwd.trace,
                                      scale(it.cls.grad, cls_b));
            enc_grads.add_scaled(gs.params, 1.0);
        } else if (model.kind == ModelKind::WsAe) {
            if (it.labeled) {
                Tensor dlog = scale(it.seg.grad, inv_p * model.logit_scale);
                Tensor dscores = scale(it.cls.grad, cls_b);
                BaselineBackward bb =
                    baseline_backward(model.baseline, it.bfwd, s.image, dlog, &dscores);
                enc_grads.add_scaled(bb.encoder_grads, 1.0);
            } else {
                GradientSet gs = backward(model.spec, *model.params, it.bfwd.trace,
                                          scale(it.cls.grad, cls_b));
                enc_grads.add_scaled(gs.params, 1.0);
            }
        } else {
            const bool multitask = model.kind == ModelKind::MultiTaskUNet;
            if (it.labeled) {
                Tensor dlog = scale(it.seg.grad, inv_p);
                Tensor dscores = multitask ? scale(it.cls.grad, cls_b) : Tensor();
                BaselineBackward bb = baseline_backward(model.baseline, it.bfwd, s.image, dlog,
                                                        multitask ? &dscores : nullptr);
                enc_grads.add_scaled(bb.encoder_grads, 1.0);
                for (std::size_t k = 0; k < dec_grads.layers.size(); ++k) {
                    auto& d = dec_grads.layers[k];
                    const auto& g = bb.decoder_grads[k];
                    for (std::size_t j = 0; j < d.weight.size(); ++j) d.weight[j] += g.weight[j];
                    for (std::size_t j = 0; j < d.bias.size(); ++j) d.bias[j] += g.bias[j];
                }
            } else if (multitask) {
                GradientSet gs = backward(model.spec, *model.params, it.bfwd.trace,
                                          scale(it.cls.grad, cls_b));
                enc_grads.add_scaled(gs.params, 1.0);
            }
        }
    }

    encoder_opt.step(*model.params, enc_grads);
    if (model.has_free_decoder()) {
        Params dec;
        dec.layers = std::move(model.baseline.decoder);
        decoder_opt.step(dec, dec_grads);
        model.baseline.decoder = std::move(dec.layers);
    }
    return report;
}

EvalResult evaluate(const Model& model, const Dataset& dataset, bool val_split) {
    const std::size_t begin = val_split ? dataset.train_count : 0;
    const std::size_t end = val_split ? dataset.samples.size() : dataset.train_count;
    const std::size_t K = model.spec.num_classes();
    const std::size_t in_h = model.spec.input_h, in_w = model.spec.input_w;

    ConfusionAccumulator acc(K);
    std::vector<Tensor> scores;
    std::vector<std::vector<std::uint8_t>> labels;
    for (std::size_t i = begin; i < end; ++i) {
        Sample s = center_crop(dataset.samples[i], in_h, in_w);
        ModelOutput out = model_forward(model, s.image);
        acc.add(segment(out.logits), s.mask);
        if (out.scores) {
            scores.push_back(*out.scores);
            labels.push_back(s.labels);
        }
    }
    EvalResult res;
    MiouResult mi = miou(acc);
    res.miou = mi.miou;
    res.per_class_iou = std::move(mi.per_class);
    res.f1 = scores.empty() ? 0.0 : f1_multilabel(scores, labels);
    return res;
}

namespace {

// cycling shuffled pool of ids
struct Pool {
    std::vector<std::size_t> ids;
    std::size_t pos = 0;

    std::size_t next(SeededRng& rng) {
        if (pos >= ids.size()) {
            rng.shuffle(ids);
            pos = 0;
        }
        return ids[pos++];
    }
};

}  // namespace

TrainResult train_model(Model& model, const Dataset& dataset, const SupervisionPlan& plan,
                        const TrainOptions& opts) {
    TrainResult result;
    result.best_params = *model.params;
    result.best_decoder = model.baseline.decoder;
    if (opts.epochs == 0) return result;

    const std::size_t in_h = opts.input_h ? opts.input_h : dataset.config.height;
    const std::size_t in_w = opts.input_w ? opts.input_w : dataset.config.width;
    model.spec.input_h = in_h;
    model.spec.input_w = in_w;
    if (model.kind != ModelKind::UnrolledLrp) {
        model.baseline.spec.input_h = in_h;
        model.baseline.spec.input_w = in_w;
    }

    SeededRng rng(opts.seed);
    SeededRng aug_rng(opts.seed ^ 0xa76a5eedULL);

    Pool labeled{plan.labeled_ids, plan.labeled_ids.size()};
    Pool all;
    for (std::size_t i = 0; i < dataset.train_count; ++i) all.ids.push_back(i);
    all.pos = all.ids.size();

    if (!model.uses_cls_loss() && plan.labeled_ids.empty()) {
        throw std::invalid_argument("train: segmentation-only model needs pixel labels");
    }

    AdamW enc_opt, dec_opt;
    enc_opt.lr = dec_opt.lr = opts.lr;

    // An epoch is one pass over the images the model can consume: every
    // training image for kinds with an image-level loss, the pixel-labeled
    // pool for segmentation-only baselines.
    const std::size_t epoch_images =
        model.uses_cls_loss() ? dataset.train_count : plan.labeled_ids.size();
    const std::size_t steps = (epoch_images + opts.batch_size - 1) / opts.batch_size;

    for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double ep_cls = 0.0, ep_seg = 0.0;
        for (std::size_t st = 0; st < steps; ++st) {
            std::vector<Sample> batch;
            if (model.uses_cls_loss()) {
                std::size_t n_lab = plan.labeled_ids.empty()
                                        ? 0
                                        : std::max<std::size_t>(1, opts.batch_size / 2);
                n_lab = std::min(n_lab, opts.batch_size);
                for (std::size_t i = 0; i < n_lab; ++i) {
                    batch.push_back(
                        augment(dataset.samples[labeled.next(rng)], aug_rng, in_h, in_w));
                }
                while (batch.size() < opts.batch_size) {
                    const std::size_t id = all.next(rng);
                    Sample s = augment(dataset.samples[id], aug_rng, in_h, in_w);
                    s.mask.assign(s.mask.size(), kUnlabeled);  // image-level labels only
                    batch.push_back(std::move(s));
                }
            } else {
                for (std::size_t i = 0; i < opts.batch_size; ++i) {
                    batch.push_back(
                        augment(dataset.samples[labeled.next(rng)], aug_rng, in_h, in_w));
                }
            }
            StepReport rep = combined_step(model, batch, enc_opt, dec_opt, opts.cls_weight);
            ep_cls += rep.cls_loss;
            ep_seg += rep.seg_loss;
        }
        EvalResult ev = evaluate(model, dataset, true);
        const auto t1 = std::chrono::steady_clock::now();

        EpochMetrics m;
        m.epoch = epoch;
        m.train_cls = ep_cls / (double)steps;
        m.train_seg = ep_seg / (double)steps;
        m.val_miou = ev.miou;
        m.val_f1 = ev.f1;
        m.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
        result.history.push_back(m);

        if (ev.miou > result.best_miou || epoch == 1) {
            result.best_miou = ev.miou;
            result.best_epoch = epoch;
            result.best_params = *model.params;
            result.best_decoder = model.baseline.decoder;
        }
        if (opts.epoch_hook) opts.epoch_hook(model, epoch);
    }
    return result;
}

PretrainResult pretrain_classifier(const EncoderSpec& spec, Params& params,
                                   const Dataset& dataset, std::size_t epochs,
                                   double lr, std::uint64_t seed) {
    PretrainResult result;
    result.best_params = params;

    SeededRng rng(seed);
    SeededRng aug_rng(seed ^ 0xc1a55eedULL);
    AdamW opt;
    opt.lr = lr;

    Pool all;
    for (std::size_t i = 0; i < dataset.train_count; ++i) all.ids.push_back(i);
    all.pos = all.ids.size();
    const std::size_t batch_size = 10;
    const std::size_t steps = (dataset.train_count + batch_size - 1) / batch_size;
    const std::size_t in_h = spec.input_h, in_w = spec.input_w;

    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double ep_cls = 0.0;
        for (std::size_t st = 0; st < steps; ++st) {
            Params grads = zero_like(params);
            double batch_loss = 0.0;
            for (std::size_t b = 0; b < batch_size; ++b) {
                Sample s = augment(dataset.samples[all.next(rng)], aug_rng, in_h, in_w);
                ForwardTrace trace = forward(spec, params, s.image);
                LossGrad lg = cls_loss(trace.scores, s.labels);
                batch_loss += lg.value / (double)batch_size;
                GradientSet gs =
                    backward(spec, params, trace, scale(lg.grad, 1.0 / (double)batch_size));
                grads.add_scaled(gs.params, 1.0);
            }
            if (!std::isfinite(batch_loss)) {
                throw std::runtime_error("pretrain: non-finite classification loss");
            }
            opt.step(params, grads);
            ep_cls += batch_loss;
        }
        // validation F1
        std::vector<Tensor> scores;
        std::vector<std::vector<std::uint8_t>> labels;
        for (std::size_t i = dataset.train_count; i < dataset.samples.size(); ++i) {
            Sample s = center_crop(dataset.samples[i], in_h, in_w);
            scores.push_back(forward(spec, params, s.image).scores);
            labels.push_back(s.labels);
        }
        const double f1 = f1_multilabel(scores, labels);
        const auto t1 = std::chrono::steady_clock::now();

        EpochMetrics m;
        m.epoch = epoch;
        m.train_cls = ep_cls / (double)steps;
        m.val_f1 = f1;
        m.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
        result.history.push_back(m);
        if (f1 >= result.best_f1) {
            result.best_f1 = f1;
            result.best_params = params;
        }
    }
    params = result.best_params;
    return result;
}

}  // namespace relseg
