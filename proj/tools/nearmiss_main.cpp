// Command line front end: synth | prepare | train | eval | explain | plot.
// One YAML config drives every stage; each run echoes its effective config
// and seeds into the output directory.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "nearmiss/clipstore.hpp"
#include "nearmiss/config.hpp"
#include "nearmiss/explain.hpp"
#include "nearmiss/metrics.hpp"
#include "nearmiss/slowfast.hpp"
#include "nearmiss/synthgen.hpp"
#include "nearmiss/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nearmiss;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

cli::RunConfig load_config(const CommonArgs& args) {
    return cli::parse_config(args.config_path, args.overrides);
}

void setup_run(const cli::RunConfig& cfg, const std::string& command) {
    fs::create_directories(cfg.io.output_dir);
    cli::write_effective_config((fs::path(cfg.io.output_dir) / "config_effective.yaml").string(),
                                cfg);
    int threads = cfg.train.num_threads > 0
                      ? cfg.train.num_threads
                      : int(std::max(1u, std::thread::hardware_concurrency()));
    nn::set_compute_threads(threads);
    json info;
    info["version"] = NEARMISS_VERSION;
    info["command"] = command;
    info["seeds"] = {{"data", cfg.data.seed},
                     {"train", cfg.train.seed},
                     {"synth", cfg.synth.master_seed}};
    info["num_threads"] = threads;
    std::ofstream out(fs::path(cfg.io.output_dir) / "run_info.json");
    out << info.dump(2) << '\n';
}

clips::SegmentationPolicy policy_from(const cli::RunConfig& cfg) {
    return {{cfg.data.safe_lo, cfg.data.safe_hi, false},
            {cfg.data.nearmiss_lo, cfg.data.nearmiss_hi, true}};
}

struct PipelineData {
    std::vector<clips::ClipRecord> records;
    std::vector<clips::LabeledSegment> segments;
    std::map<std::string, clips::Label> content_labels;
};

// Segments every manifest clip with the policy windows. Synthetic clips with a
// ground-truth sidecar get content labels: an event-window segment of a clip
// that truly contains no event is a safe sample, not a near miss.
PipelineData load_pipeline_data(const cli::RunConfig& cfg) {
    PipelineData data;
    std::string manifest = cfg.manifest_path();
    if (!fs::exists(manifest))
        throw std::runtime_error("missing manifest " + manifest + " (run `synth` first?)");
    data.records = clips::read_manifest(manifest);
    auto policy = policy_from(cfg);
    fs::path gt_dir = fs::path(manifest).parent_path() / "gt";
    for (const auto& rec : data.records) {
        auto segs = clips::segment_clip(rec, policy);
        data.segments.insert(data.segments.end(), segs.begin(), segs.end());
        fs::path gt_path = gt_dir / (rec.clip_id + ".json");
        if (rec.origin == clips::Origin::synthetic && fs::exists(gt_path))
            data.content_labels[rec.clip_id] = synth::read_ground_truth(gt_path.string()).label;
    }
    clips::apply_content_labels(data.segments, data.content_labels);
    return data;
}

std::string split_path(const cli::RunConfig& cfg) {
    return (fs::path(cfg.io.output_dir) / "splits.json").string();
}

std::string checkpoint_path(const cli::RunConfig& cfg, const std::string& explicit_path) {
    if (!explicit_path.empty()) return explicit_path;
    return (fs::path(cfg.io.output_dir) / "checkpoint_best.bin").string();
}

int cmd_synth(const cli::RunConfig& cfg) {
    setup_run(cfg, "synth");
    synth::CorpusParams params;
    params.n = cfg.synth.n;
    params.balance = cfg.synth.balance;
    params.master_seed = cfg.synth.master_seed;
    params.height = cfg.synth.resolution;
    params.width = cfg.synth.resolution;
    params.fps = cfg.synth.fps;
    params.duration_s = cfg.synth.duration_s;
    std::string corpus_dir = (fs::path(cfg.io.output_dir) / "corpus").string();
    auto entries = synth::generate_corpus(params, corpus_dir);
    int near = 0;
    for (const auto& e : entries)
        if (e.label == clips::Label::near_miss) ++near;
    std::cout << "synth: wrote " << entries.size() << " clips (" << near << " near-miss) under "
              << corpus_dir << "\n";
    return 0;
}

int cmd_prepare(const cli::RunConfig& cfg) {
    setup_run(cfg, "prepare");
    PipelineData data = load_pipeline_data(cfg);
    std::vector<std::string> ids;
    ids.reserve(data.records.size());
    for (const auto& r : data.records) ids.push_back(r.clip_id);
    auto split = clips::make_splits(ids, cfg.data.ratio, cfg.data.seed);
    clips::write_split_file(split_path(cfg), split);
    std::cout << "prepare: " << data.records.size() << " clips -> " << split.train.size() << "/"
              << split.validation.size() << "/" << split.test.size() << " split, "
              << data.segments.size() << " segments; wrote " << split_path(cfg) << "\n";
    return 0;
}

train::DataTransform transform_from(const cli::RunConfig& cfg) {
    train::DataTransform tf;
    tf.jitter_lo = cfg.data.jitter_lo;
    tf.jitter_hi = cfg.data.jitter_hi;
    tf.crop = cfg.data.crop;
    return tf;
}

int cmd_train(const cli::RunConfig& cfg) {
    setup_run(cfg, "train");
    if (!fs::exists(split_path(cfg)))
        throw std::runtime_error("missing split file " + split_path(cfg) +
                                 " (run `prepare` first)");
    PipelineData data = load_pipeline_data(cfg);
    auto split = clips::read_split_file(split_path(cfg));
    train::SegmentDataset dataset(data.records, data.segments);

    auto net = sf::SlowFastNet::build(cfg.model, cfg.train.seed);
    {
        std::ofstream sum(fs::path(cfg.io.output_dir) / "model_summary.txt");
        sum << net->summary_text();
    }
    train::FitPaths paths;
    paths.best_checkpoint = (fs::path(cfg.io.output_dir) / "checkpoint_best.bin").string();
    paths.last_checkpoint = (fs::path(cfg.io.output_dir) / "checkpoint_last.bin").string();
    auto result = train::fit(*net, dataset, split, cfg.train.schedule, cfg.train.optim,
                             transform_from(cfg), cfg.train.seed, paths);
    train::write_curve((fs::path(cfg.io.output_dir) / "curve.csv").string(), result.curve);
    train::write_val_curve((fs::path(cfg.io.output_dir) / "val_curve.csv").string(),
                           result.curve);
    std::cout << "train: best validation accuracy " << metrics::format2(result.best_val_accuracy)
              << "% at epoch " << result.best_epoch << "; checkpoint " << paths.best_checkpoint
              << "\n";
    return 0;
}

std::vector<metrics::BaselineReport> find_baselines() {
    std::vector<std::string> candidates;
    if (const char* env = std::getenv("NEARMISS_DATA_DIR"); env && *env)
        candidates.push_back(std::string(env) + "/baselines.json");
#ifdef NEARMISS_DATA_DIR
    candidates.push_back(std::string(NEARMISS_DATA_DIR) + "/baselines.json");
#endif
    candidates.push_back("data/baselines.json");
    for (const auto& c : candidates)
        if (fs::exists(c)) return metrics::load_baselines(c);
    return {};
}

int cmd_eval(const cli::RunConfig& cfg, const std::string& ckpt_arg, bool ablate_fast) {
    setup_run(cfg, "eval");
    std::string ckpt = checkpoint_path(cfg, ckpt_arg);
    if (!fs::exists(ckpt)) throw std::runtime_error("missing checkpoint " + ckpt);
    auto loaded = sf::SlowFastNet::load_checkpoint(ckpt);
    PipelineData data = load_pipeline_data(cfg);
    if (!fs::exists(split_path(cfg)))
        throw std::runtime_error("missing split file " + split_path(cfg) +
                                 " (run `prepare` first)");
    auto split = clips::read_split_file(split_path(cfg));
    train::SegmentDataset dataset(data.records, data.segments);
    auto test_idx = dataset.indices_for(split.test);
    auto res = train::evaluate(*loaded.net, dataset, test_idx, transform_from(cfg),
                               cfg.train.optim.batch_size, ablate_fast);

    auto cm = metrics::confusion(res.predictions, res.labels);
    auto report = metrics::compute_metrics(cm);
    fs::path out_dir = fs::path(cfg.io.output_dir) / (ablate_fast ? "eval_ablation" : "eval");
    fs::create_directories(out_dir);
    {
        std::ofstream mj(out_dir / "metrics.json");
        mj << metrics::report_to_json(cm, report) << '\n';
    }
    {
        std::ofstream pt(out_dir / "predictions.tsv");
        for (std::size_t i = 0; i < test_idx.size(); ++i) {
            const auto& seg = dataset.segment(test_idx[i]);
            pt << seg.clip_id << '\t' << seg.window.str() << '\t'
               << clips::to_string(res.labels[i]) << '\t' << clips::to_string(res.predictions[i])
               << '\n';
        }
    }
    auto baselines = find_baselines();
    if (!baselines.empty()) {
        auto table = metrics::improvement_table(report, baselines, "NTT (V)");
        std::ofstream tt(out_dir / "table.txt");
        tt << metrics::render_table(table);
    }
    std::cout << "eval" << (ablate_fast ? " (fast pathway zeroed)" : "") << ": accuracy "
              << metrics::format2(report.accuracy) << "%, precision "
              << metrics::format2(report.precision) << "%, recall "
              << metrics::format2(report.recall) << "%, f1 " << metrics::format2(report.f1)
              << "% over " << res.labels.size() << " segments; reports under " << out_dir.string()
              << "\n";
    return 0;
}

int cmd_explain(const cli::RunConfig& cfg, const std::string& ckpt_arg,
                std::vector<std::string> clip_ids, const std::string& saliency_path, int limit) {
    setup_run(cfg, "explain");
    std::string ckpt = checkpoint_path(cfg, ckpt_arg);
    if (!fs::exists(ckpt)) throw std::runtime_error("missing checkpoint " + ckpt);
    auto loaded = sf::SlowFastNet::load_checkpoint(ckpt);
    auto& net = *loaded.net;
    net.set_train(false);
    PipelineData data = load_pipeline_data(cfg);
    train::SegmentDataset dataset(data.records, data.segments);

    if (clip_ids.empty()) {
        // default: near-miss test clips
        if (!fs::exists(split_path(cfg)))
            throw std::runtime_error("missing split file " + split_path(cfg) +
                                     " (run `prepare` first, or pass --clip)");
        auto split = clips::read_split_file(split_path(cfg));
        for (const auto& id : split.test) {
            auto it = data.content_labels.find(id);
            bool near = it == data.content_labels.end() || it->second == clips::Label::near_miss;
            if (near) clip_ids.push_back(id);
            if (int(clip_ids.size()) >= limit) break;
        }
        if (clip_ids.empty()) throw std::runtime_error("no near-miss test clips to explain");
    }

    int target = cfg.explain.target == "near_miss" ? 1 : 0;
    auto tf = transform_from(cfg);
    json overlap_rows = json::array();
    for (const auto& clip_id : clip_ids) {
        std::size_t seg_index = dataset.size();
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            const auto& seg = dataset.segment(i);
            if (seg.clip_id == clip_id && seg.window.closed_hi) seg_index = i;  // event window
        }
        if (seg_index == dataset.size())
            throw std::runtime_error("clip " + clip_id + " not present in the manifest");
        auto load = dataset.load(seg_index, net.config(), tf, /*train=*/false, 0);
        auto batch = train::assemble_batch({load}, net.norm_mean, net.norm_std);

        fs::path clip_dir = fs::path(cfg.io.output_dir) / "explain" / clip_id;
        fs::create_directories(clip_dir);
        for (const std::string& pathway : {std::string("slow"), std::string("fast")}) {
            std::string layer = cfg.explain.layer;
            layer.replace(0, layer.find('/'), pathway);
            auto stack = xai::grad_cam(net, batch.slow, batch.fast, target, layer);
            const Tensor& vol = pathway == "fast" ? load.fast : load.slow;
            for (std::size_t t = 0; t < stack.maps.size(); ++t) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "cam_%s_f%02zu", pathway.c_str(), t);
                xai::write_heatmap_grid((clip_dir / (std::string(buf) + ".txt")).string(),
                                        stack.maps[t]);
                Image frame = clips::volume_frame(vol, int(t));
                Image overlay = xai::render_overlay(frame, stack.maps[t], cfg.explain.opacity);
                write_ppm((clip_dir / (std::string(buf) + "_overlay.ppm")).string(), overlay);
            }
            if (!saliency_path.empty()) {
                auto sal = xai::load_saliency(saliency_path);
                for (std::size_t t = 0; t < stack.maps.size(); ++t) {
                    auto rep = xai::compare_maps(stack.maps[t], sal, cfg.explain.threshold);
                    overlap_rows.push_back({{"clip", clip_id},
                                            {"pathway", pathway},
                                            {"frame", t},
                                            {"pearson_cc", rep.pearson_cc},
                                            {"cc_undefined", rep.cc_undefined},
                                            {"iou", rep.iou},
                                            {"threshold", rep.threshold}});
                }
            }
        }
        std::cout << "explain: wrote heatmaps for " << clip_id << " under " << clip_dir.string()
                  << "\n";
    }
    if (!saliency_path.empty()) {
        std::ofstream ov(fs::path(cfg.io.output_dir) / "explain" / "overlap.json");
        ov << overlap_rows.dump(2) << '\n';
    }
    return 0;
}

int cmd_plot(const cli::RunConfig& cfg, int window) {
    setup_run(cfg, "plot");
    std::string curve_path = (fs::path(cfg.io.output_dir) / "curve.csv").string();
    if (!fs::exists(curve_path))
        throw std::runtime_error("missing curve file " + curve_path + " (run `train` first)");
    auto curve = train::read_curve(curve_path);
    if (curve.iterations.empty()) throw std::runtime_error("curve file has no iterations");
    std::vector<double> loss, top1, lr;
    for (const auto& r : curve.iterations) {
        loss.push_back(r.loss);
        top1.push_back(r.top1_error);
        lr.push_back(r.lr);
    }
    int w = window;
    if (w > int(loss.size())) w = int(loss.size()) | 1;
    if (w % 2 == 0) --w;
    if (w < 1) w = 1;
    fs::path plots = fs::path(cfg.io.output_dir) / "plots";
    fs::create_directories(plots);
    train::write_curve_svg((plots / "loss.svg").string(), loss, w, "training loss");
    train::write_curve_svg((plots / "top1_error.svg").string(), top1, w, "top-1 error");
    train::write_curve_svg((plots / "lr.svg").string(), lr, 1, "learning rate");
    std::cout << "plot: wrote loss.svg, top1_error.svg, lr.svg under " << plots.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"near-miss dashcam video classification pipeline"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string ckpt_arg, saliency_path;
    std::vector<std::string> clip_args;
    bool ablate_fast = false;
    int plot_window = 51, explain_limit = 4;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "YAML configuration file")
            ->check(CLI::ExistingFile);
        sub->add_option("--set", common.overrides,
                        "override a config key, e.g. --set train.t_max=10");
    };

    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic clip corpus");
    add_common(synth_cmd);
    CLI::App* prepare_cmd = app.add_subcommand("prepare", "segment clips and write the split file");
    add_common(prepare_cmd);
    CLI::App* train_cmd = app.add_subcommand("train", "train the classifier");
    add_common(train_cmd);
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(eval_cmd);
    eval_cmd->add_option("--checkpoint", ckpt_arg, "checkpoint file");
    eval_cmd->add_flag("--ablate-fast", ablate_fast, "zero the fast pathway input");
    CLI::App* explain_cmd = app.add_subcommand("explain", "write grad-cam heatmaps and overlays");
    add_common(explain_cmd);
    explain_cmd->add_option("--checkpoint", ckpt_arg, "checkpoint file");
    explain_cmd->add_option("--clip", clip_args, "clip id(s) to explain");
    explain_cmd->add_option("--saliency", saliency_path, "external gaze saliency map file");
    explain_cmd->add_option("--limit", explain_limit, "max clips when none are named");
    CLI::App* plot_cmd = app.add_subcommand("plot", "render smoothed training curves");
    add_common(plot_cmd);
    plot_cmd->add_option("--window", plot_window, "smoothing window (odd)");

    CLI11_PARSE(app, argc, argv);

    try {
        cli::RunConfig cfg = load_config(common);
        if (synth_cmd->parsed()) return cmd_synth(cfg);
        if (prepare_cmd->parsed()) return cmd_prepare(cfg);
        if (train_cmd->parsed()) return cmd_train(cfg);
        if (eval_cmd->parsed()) return cmd_eval(cfg, ckpt_arg, ablate_fast);
        if (explain_cmd->parsed())
            return cmd_explain(cfg, ckpt_arg, clip_args, saliency_path, explain_limit);
        if (plot_cmd->parsed()) return cmd_plot(cfg, plot_window);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
