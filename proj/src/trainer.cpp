#include "nearmiss/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nearmiss::train {

void ScheduleConfig::validate() const {
    if (!(lr_min >= 0 && lr_min < lr_max))
        throw std::invalid_argument("schedule: need 0 <= lr_min < lr_max");
    if (!(warmup_start > 0 && warmup_start <= lr_max))
        throw std::invalid_argument("schedule: need 0 < warmup_start <= lr_max");
    if (!(warmup_epochs >= 0 && warmup_epochs < t_max))
        throw std::invalid_argument("schedule: need 0 <= warmup_epochs < t_max");
}

void OptimConfig::validate() const {
    if (momentum < 0 || momentum >= 1) throw std::invalid_argument("optim: momentum in [0, 1)");
    if (weight_decay < 0) throw std::invalid_argument("optim: weight_decay must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("optim: batch_size must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("optim: max_epochs must be >= 1");
}

double lr_at(int epoch, const ScheduleConfig& cfg) {
    cfg.validate();
    if (epoch < 0 || epoch > cfg.t_max)
        throw std::invalid_argument("lr_at: epoch " + std::to_string(epoch) +
                                    " outside [0, " + std::to_string(cfg.t_max) + "]");
    if (epoch < cfg.warmup_epochs) {
        double frac = double(epoch) / double(cfg.warmup_epochs);
        return cfg.warmup_start + (cfg.lr_max - cfg.warmup_start) * frac;
    }
    double t_cur = double(epoch - cfg.warmup_epochs);
    double t_max = double(cfg.t_max - cfg.warmup_epochs);
    return cfg.lr_min +
           0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(t_cur / t_max * M_PI));
}

void SGD::step(nn::ParamStore& store, double lr) {
    auto& params = store.params();
    if (velocity_.empty()) {
        velocity_.reserve(params.size());
        for (const auto& p : params) velocity_.emplace_back(p->value.shape);
    }
    if (velocity_.size() != params.size())
        throw std::logic_error("sgd: parameter inventory changed under the optimizer");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        auto& v = velocity_[i];
        for (std::int64_t j = 0; j < p.value.numel(); ++j) {
            v[j] = cfg_.momentum * v[j] + p.grad[j] + cfg_.weight_decay * p.value[j];
            p.value[j] -= lr * v[j];
        }
    }
}

std::vector<double> smooth_curve(const std::vector<double>& series, int window) {
    if (window < 1 || window % 2 == 0)
        throw std::invalid_argument("smooth_curve: window must be odd and >= 1, got " +
                                    std::to_string(window));
    const int n = int(series.size());
    const int half = window / 2;
    std::vector<double> out(series.size());
    for (int i = 0; i < n; ++i) {
        int lo = std::max(0, i - half), hi = std::min(n - 1, i + half);
        double sum = 0.0;
        for (int j = lo; j <= hi; ++j) sum += series[std::size_t(j)];
        out[std::size_t(i)] = sum / double(hi - lo + 1);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Curve files
// ---------------------------------------------------------------------------

void write_curve(const std::string& path, const TrainingCurve& curve) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("curve: cannot write " + path);
    out << "iteration,epoch,lr,loss,top1_error\n";
    char buf[160];
    for (const auto& r : curve.iterations) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g\n", r.iteration, r.epoch, r.lr,
                      r.loss, r.top1_error);
        out << buf;
    }
}

void write_val_curve(const std::string& path, const TrainingCurve& curve) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("curve: cannot write " + path);
    out << "epoch,val_loss,val_accuracy\n";
    char buf[120];
    for (const auto& r : curve.validation) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", r.epoch, r.loss, r.accuracy);
        out << buf;
    }
}

TrainingCurve read_curve(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("curve: cannot open " + path);
    TrainingCurve curve;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        IterRecord r;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        if (!(ls >> r.iteration >> r.epoch >> r.lr >> r.loss >> r.top1_error))
            throw std::runtime_error("curve: malformed line in " + path);
        curve.iterations.push_back(r);
    }
    return curve;
}

void write_curve_svg(const std::string& path, const std::vector<double>& series, int window,
                     const std::string& title) {
    if (series.empty()) throw std::invalid_argument("svg: empty series");
    std::vector<double> smooth = smooth_curve(series, window);
    const int W = 960, H = 540, ml = 70, mr = 20, mt = 40, mb = 50;
    double lo = *std::min_element(smooth.begin(), smooth.end());
    double hi = *std::max_element(smooth.begin(), smooth.end());
    if (hi - lo < 1e-12) hi = lo + 1.0;
    auto sx = [&](std::size_t i) {
        return ml + double(i) / double(std::max<std::size_t>(1, smooth.size() - 1)) * (W - ml - mr);
    };
    auto sy = [&](double v) { return H - mb - (v - lo) / (hi - lo) * (H - mt - mb); };
    std::ofstream out(path);
    if (!out) throw std::runtime_error("svg: cannot write " + path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='18'>" << title
        << " (smoothed, window " << window << ")</text>\n";
    out << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
        << "' stroke='black'/>\n";
    out << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
        << "' stroke='black'/>\n";
    for (int i = 0; i <= 4; ++i) {
        double v = lo + (hi - lo) * i / 4.0;
        out << "<text x='" << ml - 8 << "' y='" << sy(v) + 4
            << "' text-anchor='end' font-size='12'>";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4g", v);
        out << buf << "</text>\n";
    }
    out << "<text x='" << (W + ml - mr) / 2 << "' y='" << H - 12
        << "' text-anchor='middle' font-size='12'>iteration</text>\n";
    out << "<polyline fill='none' stroke='#1f77b4' stroke-width='1.5' points='";
    for (std::size_t i = 0; i < smooth.size(); ++i) out << sx(i) << ',' << sy(smooth[i]) << ' ';
    out << "'/>\n</svg>\n";
}

// ---------------------------------------------------------------------------
// SegmentDataset
// ---------------------------------------------------------------------------

SegmentDataset::SegmentDataset(std::vector<clips::ClipRecord> records,
                               std::vector<clips::LabeledSegment> segments)
    : records_(std::move(records)), segments_(std::move(segments)) {
    for (std::size_t i = 0; i < records_.size(); ++i) by_id_[records_[i].clip_id] = i;
    for (const auto& s : segments_)
        if (!by_id_.count(s.clip_id))
            throw std::invalid_argument("dataset: segment references unknown clip " + s.clip_id);
}

const clips::ClipRecord& SegmentDataset::record_for(const std::string& clip_id) const {
    auto it = by_id_.find(clip_id);
    if (it == by_id_.end()) throw std::invalid_argument("dataset: unknown clip " + clip_id);
    return records_[it->second];
}

const clips::FrameSource& SegmentDataset::source_for(const std::string& clip_id) const {
    auto it = sources_.find(clip_id);
    if (it == sources_.end()) {
        auto src = std::shared_ptr<clips::FrameSource>(
            clips::open_frame_source(record_for(clip_id).source_path));
        it = sources_.emplace(clip_id, std::move(src)).first;
    }
    return *it->second;
}

SegmentDataset::Loaded SegmentDataset::load(std::size_t index, const sf::PathwayConfig& model_cfg,
                                            const DataTransform& tf, bool train,
                                            std::uint64_t seed) const {
    const auto& seg = segments_.at(index);
    const auto& src = source_for(seg.clip_id);
    Rng rng(seed);
    double offset = (train && tf.train_augment) ? rng.uniform() : 0.5;
    clips::FramePair fp =
        clips::sample_frames(seg, src, model_cfg.slow_frames, model_cfg.alpha, offset);
    Loaded out;
    if (train && tf.train_augment) {
        std::uint64_t jitter_seed = rng.next_u64();
        out.fast = clips::scale_jitter(fp.fast, tf.jitter_lo, tf.jitter_hi, tf.crop, jitter_seed);
        // identical spatial transform on both pathways
        out.slow = clips::scale_jitter(fp.slow, tf.jitter_lo, tf.jitter_hi, tf.crop, jitter_seed);
    } else {
        out.fast = clips::resize_center_crop(fp.fast, tf.crop);
        out.slow = clips::resize_center_crop(fp.slow, tf.crop);
    }
    out.label = seg.label == clips::Label::near_miss ? 1 : 0;
    return out;
}

std::vector<std::size_t> SegmentDataset::indices_for(
    const std::vector<std::string>& clip_ids) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < segments_.size(); ++i)
        for (const auto& id : clip_ids)
            if (segments_[i].clip_id == id) {
                out.push_back(i);
                break;
            }
    return out;
}

namespace {

// (T, H, W, C) volume into the (C, T, H, W) slab at batch position n
void place_volume(Tensor& dst, int n, const Tensor& vol, const std::vector<double>& mean,
                  const std::vector<double>& stddev) {
    const int T = vol.size(0), H = vol.size(1), W = vol.size(2), C = vol.size(3);
    double* base = dst.ptr() + std::int64_t(n) * C * T * H * W;
    for (int t = 0; t < T; ++t)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < C; ++c) {
                    double v = vol[((std::int64_t(t) * H + y) * W + x) * C + c];
                    if (!mean.empty()) v = (v - mean[std::size_t(c)]) / stddev[std::size_t(c)];
                    base[((std::int64_t(c) * T + t) * H + y) * W + x] = v;
                }
}

}  // namespace

BatchTensors assemble_batch(const std::vector<SegmentDataset::Loaded>& samples,
                            const std::vector<double>& norm_mean,
                            const std::vector<double>& norm_std) {
    if (samples.empty()) throw std::invalid_argument("assemble_batch: empty batch");
    const int N = int(samples.size());
    const Tensor& s0 = samples[0].slow;
    const Tensor& f0 = samples[0].fast;
    BatchTensors out;
    out.slow = Tensor({N, s0.size(3), s0.size(0), s0.size(1), s0.size(2)});
    out.fast = Tensor({N, f0.size(3), f0.size(0), f0.size(1), f0.size(2)});
    for (int n = 0; n < N; ++n) {
        place_volume(out.slow, n, samples[std::size_t(n)].slow, norm_mean, norm_std);
        place_volume(out.fast, n, samples[std::size_t(n)].fast, norm_mean, norm_std);
        out.labels.push_back(samples[std::size_t(n)].label);
    }
    return out;
}

std::pair<std::vector<double>, std::vector<double>> compute_norm_stats(
    const SegmentDataset& data, const std::vector<std::size_t>& indices,
    const sf::PathwayConfig& cfg, const DataTransform& tf) {
    if (indices.empty()) throw std::invalid_argument("norm stats: no training segments");
    const int C = cfg.in_channels;
    std::vector<double> sum(std::size_t(C), 0.0), sq(std::size_t(C), 0.0);
    std::int64_t count = 0;
    for (std::size_t idx : indices) {
        auto loaded = data.load(idx, cfg, tf, /*train=*/false, /*seed=*/0);
        const Tensor& v = loaded.fast;  // superset of the slow taps
        if (v.size(3) != C)
            throw std::invalid_argument("norm stats: channel count differs from model config");
        const std::int64_t pixels = v.numel() / C;
        for (std::int64_t i = 0; i < pixels; ++i)
            for (int c = 0; c < C; ++c) {
                double val = v[i * C + c];
                sum[std::size_t(c)] += val;
                sq[std::size_t(c)] += val * val;
            }
        count += pixels;
    }
    std::vector<double> mean(std::size_t(C), 0.0), stddev(std::size_t(C), 0.0);
    for (int c = 0; c < C; ++c) {
        mean[std::size_t(c)] = sum[std::size_t(c)] / double(count);
        double var = std::max(1e-12, sq[std::size_t(c)] / double(count) -
                                         mean[std::size_t(c)] * mean[std::size_t(c)]);
        stddev[std::size_t(c)] = std::sqrt(var);
    }
    return {mean, stddev};
}

// ---------------------------------------------------------------------------
// Epoch loops
// ---------------------------------------------------------------------------

EpochStats train_epoch(sf::SlowFastNet& net, SGD& optim, const SegmentDataset& data,
                       const std::vector<std::size_t>& order, const sf::PathwayConfig& cfg,
                       const DataTransform& tf, const OptimConfig& ocfg, double lr,
                       std::uint64_t seed, int epoch, TrainingCurve* curve) {
    if (order.empty()) throw std::invalid_argument("train_epoch: empty data stream");
    net.set_train(true);
    Rng dropout_rng(splitmix64_at(seed, 0xD0));
    EpochStats stats;
    double loss_sum = 0.0, err_sum = 0.0;
    std::size_t samples = 0, wrong = 0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(ocfg.batch_size)) {
        std::size_t end = std::min(order.size(), start + std::size_t(ocfg.batch_size));
        std::vector<SegmentDataset::Loaded> loads;
        for (std::size_t i = start; i < end; ++i)
            loads.push_back(
                data.load(order[i], cfg, tf, /*train=*/true, splitmix64_at(seed, order[i])));
        BatchTensors batch = assemble_batch(loads, net.norm_mean, net.norm_std);
        net.params().zero_grad();
        Tensor logits = net.forward(batch.slow, batch.fast, &dropout_rng);
        auto ce = nn::softmax_cross_entropy(logits, batch.labels);
        if (!std::isfinite(ce.loss))
            throw std::runtime_error("train_epoch: non-finite loss at batch " +
                                     std::to_string(batch_index) + " of epoch " +
                                     std::to_string(epoch));
        net.backward(ce.grad);
        optim.step(net.params(), lr);

        int batch_wrong = 0;
        const int K = logits.size(1);
        for (int n = 0; n < logits.size(0); ++n) {
            const double* z = logits.ptr() + std::int64_t(n) * K;
            int arg = int(std::max_element(z, z + K) - z);
            if (arg != batch.labels[std::size_t(n)]) ++batch_wrong;
        }
        double batch_err = double(batch_wrong) / double(end - start);
        loss_sum += ce.loss * double(end - start);
        err_sum += double(batch_wrong);
        wrong += std::size_t(batch_wrong);
        samples += end - start;
        if (curve) {
            IterRecord rec;
            rec.iteration = int(curve->iterations.size());
            rec.epoch = epoch;
            rec.lr = lr;
            rec.loss = ce.loss;
            rec.top1_error = batch_err;
            curve->iterations.push_back(rec);
        }
        ++batch_index;
    }
    stats.mean_loss = loss_sum / double(samples);
    stats.top1_error = double(wrong) / double(samples);
    stats.batches = batch_index;
    (void)err_sum;
    return stats;
}

EvalResult evaluate(sf::SlowFastNet& net, const SegmentDataset& data,
                    const std::vector<std::size_t>& indices, const DataTransform& tf,
                    int batch_size, bool zero_fast) {
    if (indices.empty()) throw std::invalid_argument("evaluate: no segments");
    net.set_train(false);
    EvalResult res;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    const auto& cfg = net.config();
    for (std::size_t start = 0; start < indices.size(); start += std::size_t(batch_size)) {
        std::size_t end = std::min(indices.size(), start + std::size_t(batch_size));
        std::vector<SegmentDataset::Loaded> loads;
        for (std::size_t i = start; i < end; ++i)
            loads.push_back(data.load(indices[i], cfg, tf, /*train=*/false, 0));
        BatchTensors batch = assemble_batch(loads, net.norm_mean, net.norm_std);
        if (zero_fast) batch.fast.fill(0.0);  // slow-only ablation
        Tensor logits = net.forward(batch.slow, batch.fast);
        auto ce = nn::softmax_cross_entropy(logits, batch.labels);
        loss_sum += ce.loss * double(end - start);
        const int K = logits.size(1);
        for (int n = 0; n < logits.size(0); ++n) {
            const double* z = logits.ptr() + std::int64_t(n) * K;
            int arg = int(std::max_element(z, z + K) - z);
            res.predictions.push_back(arg == 1 ? clips::Label::near_miss
                                               : clips::Label::safe_driving);
            res.labels.push_back(batch.labels[std::size_t(n)] == 1 ? clips::Label::near_miss
                                                                   : clips::Label::safe_driving);
            if (arg == batch.labels[std::size_t(n)]) ++correct;
        }
    }
    res.loss = loss_sum / double(indices.size());
    res.accuracy = 100.0 * double(correct) / double(indices.size());
    return res;
}

FitResult fit(sf::SlowFastNet& net, const SegmentDataset& data, const clips::DatasetSplit& split,
              const ScheduleConfig& schedule, const OptimConfig& optim, const DataTransform& tf,
              std::uint64_t seed, const FitPaths& paths) {
    schedule.validate();
    optim.validate();
    auto train_idx = data.indices_for(split.train);
    auto val_idx = data.indices_for(split.validation);
    if (train_idx.empty()) throw std::invalid_argument("fit: empty training split");
    if (val_idx.empty()) throw std::invalid_argument("fit: empty validation split");

    if (net.norm_mean.empty()) {
        auto [mean, stddev] = compute_norm_stats(data, train_idx, net.config(), tf);
        net.norm_mean = mean;
        net.norm_std = stddev;
    }

    SGD sgd(optim);
    FitResult result;
    double best_acc = -1.0, best_loss = 0.0;
    for (int epoch = 0; epoch < optim.max_epochs; ++epoch) {
        double lr = lr_at(std::min(epoch, schedule.t_max), schedule);
        std::vector<std::size_t> order = train_idx;
        Rng shuffle_rng(splitmix64_at(seed, 0x5E0000 + std::uint64_t(epoch)));
        shuffle_rng.shuffle(order);
        train_epoch(net, sgd, data, order, net.config(), tf, optim, lr,
                    splitmix64_at(seed, 0xE70000 + std::uint64_t(epoch)), epoch, &result.curve);

        EvalResult val = evaluate(net, data, val_idx, tf, optim.batch_size);
        EpochValRecord rec;
        rec.epoch = epoch;
        rec.loss = val.loss;
        rec.accuracy = val.accuracy;
        result.curve.validation.push_back(rec);

        bool better = val.accuracy > best_acc ||
                      (val.accuracy == best_acc && val.loss < best_loss);
        if (better) {
            best_acc = val.accuracy;
            best_loss = val.loss;
            result.best_val_accuracy = val.accuracy;
            result.best_epoch = epoch;
            if (!paths.best_checkpoint.empty())
                net.save_checkpoint(paths.best_checkpoint, epoch,
                                    {{"val_accuracy", std::to_string(val.accuracy)},
                                     {"seed", std::to_string(seed)}});
        }
    }
    if (!paths.last_checkpoint.empty())
        net.save_checkpoint(paths.last_checkpoint, optim.max_epochs - 1,
                            {{"seed", std::to_string(seed)}});
    result.best_checkpoint = paths.best_checkpoint;
    return result;
}

}  // namespace nearmiss::train
