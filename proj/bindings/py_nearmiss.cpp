// Python bindings over the core operations: metrics, schedule, splits, frame
// sampling, synthetic clip generation and the model summary.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "nearmiss/clipstore.hpp"
#include "nearmiss/config.hpp"
#include "nearmiss/metrics.hpp"
#include "nearmiss/slowfast.hpp"
#include "nearmiss/synthgen.hpp"
#include "nearmiss/trainer.hpp"

namespace py = pybind11;
using namespace nearmiss;

namespace {

clips::Label label_of(const std::string& s) { return clips::label_from_string(s); }

py::dict report_dict(const metrics::MetricsReport& r) {
    py::dict d;
    d["accuracy"] = r.accuracy;
    d["recall"] = r.recall;
    d["precision"] = r.precision;
    d["f1"] = r.f1;
    py::list flags;
    if (r.undefined_precision) flags.append("undefined_precision");
    if (r.undefined_recall) flags.append("undefined_recall");
    if (r.undefined_f1) flags.append("undefined_f1");
    d["flags"] = flags;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "near-miss dashcam video classification core";
    m.attr("__version__") = NEARMISS_VERSION;

    m.def(
        "confusion",
        [](const std::vector<std::string>& preds, const std::vector<std::string>& labels) {
            std::vector<clips::Label> p, l;
            for (const auto& s : preds) p.push_back(label_of(s));
            for (const auto& s : labels) l.push_back(label_of(s));
            auto cm = metrics::confusion(p, l);
            py::dict d;
            d["tp"] = cm.tp;
            d["fn"] = cm.fn;
            d["fp"] = cm.fp;
            d["tn"] = cm.tn;
            return d;
        },
        py::arg("predictions"), py::arg("labels"),
        "confusion counts with near_miss as the positive class");

    m.def(
        "compute_metrics",
        [](std::int64_t tp, std::int64_t fn, std::int64_t fp, std::int64_t tn) {
            return report_dict(metrics::compute_metrics({tp, fn, fp, tn}));
        },
        py::arg("tp"), py::arg("fn"), py::arg("fp"), py::arg("tn"),
        "accuracy / recall / precision / f1 percentages from confusion counts");

    m.def("round2", &metrics::round2, "two-decimal half-up display rounding");

    m.def(
        "lr_at",
        [](int epoch, double lr_min, double lr_max, double warmup_start, int warmup_epochs,
           int t_max) {
            train::ScheduleConfig cfg{lr_min, lr_max, warmup_start, warmup_epochs, t_max};
            return train::lr_at(epoch, cfg);
        },
        py::arg("epoch"), py::arg("lr_min") = 0.0, py::arg("lr_max") = 0.1,
        py::arg("warmup_start") = 0.01, py::arg("warmup_epochs") = 34, py::arg("t_max") = 196,
        "warmup + cosine annealing learning rate at an epoch");

    m.def("smooth_curve", &train::smooth_curve, py::arg("series"), py::arg("window"),
          "centered moving average with edge truncation");

    m.def(
        "make_splits",
        [](const std::vector<std::string>& ids, double r_train, double r_val, double r_test,
           std::uint64_t seed) {
            auto s = clips::make_splits(ids, {r_train, r_val, r_test}, seed);
            py::dict d;
            d["train"] = s.train;
            d["validation"] = s.validation;
            d["test"] = s.test;
            return d;
        },
        py::arg("clip_ids"), py::arg("r_train") = 6.0, py::arg("r_val") = 2.0,
        py::arg("r_test") = 2.0, py::arg("seed") = 0,
        "grouped deterministic train/validation/test split");

    m.def(
        "sample_frame_indices",
        [](int n_frames, int slow_frames, int alpha, double offset01) {
            clips::LabeledSegment seg;
            seg.clip_id = "inline";
            for (int i = 0; i < n_frames; ++i) seg.frame_indices.push_back(i);
            auto idx = clips::sample_frame_indices(seg, slow_frames, alpha, offset01);
            return py::make_tuple(idx.slow, idx.fast);
        },
        py::arg("n_frames"), py::arg("slow_frames") = 2, py::arg("alpha") = 4,
        py::arg("offset01") = 0.5, "uniform slow/fast tap indices over a window of frames");

    m.def(
        "generate_clip",
        [](std::uint64_t seed, const std::string& label, int height, int width, double fps,
           double duration_s) {
            auto spec = synth::random_spec(seed, label_of(label), height, width, fps, duration_s);
            auto [vol, gt] = synth::generate_clip(spec);
            const int T = vol.size(0), H = vol.size(1), W = vol.size(2);
            py::array_t<double> arr({T, H, W});
            std::copy(vol.data.begin(), vol.data.end(), arr.mutable_data());
            py::list boxes;
            for (const auto& b : gt.bboxes) {
                py::dict bd;
                bd["frame"] = b.frame;
                bd["x"] = b.x;
                bd["y"] = b.y;
                bd["w"] = b.w;
                bd["h"] = b.h;
                boxes.append(bd);
            }
            py::dict gtd;
            gtd["label"] = clips::to_string(gt.label);
            gtd["bboxes"] = boxes;
            return py::make_tuple(arr, gtd);
        },
        py::arg("seed"), py::arg("label") = "near_miss", py::arg("height") = 112,
        py::arg("width") = 112, py::arg("fps") = 8.0, py::arg("duration_s") = 15.0,
        "deterministic synthetic dashcam-like clip and its ground truth");

    m.def(
        "model_flops",
        [](int depth, int base_width, int alpha, int beta_inv, int slow_frames, int input_size,
           int in_channels) {
            sf::PathwayConfig cfg;
            cfg.backbone_depth = depth;
            cfg.base_width = base_width;
            cfg.alpha = alpha;
            cfg.beta_inv = beta_inv;
            cfg.slow_frames = slow_frames;
            cfg.input_size = input_size;
            cfg.in_channels = in_channels;
            auto net = sf::SlowFastNet::build(cfg, 0);
            auto rep = net->flops();
            py::dict d;
            d["slow_macs"] = rep.slow_macs;
            d["fast_macs"] = rep.fast_macs;
            d["head_macs"] = rep.head_macs;
            d["fast_share"] = rep.fast_share();
            return d;
        },
        py::arg("depth") = 101, py::arg("base_width") = 64, py::arg("alpha") = 4,
        py::arg("beta_inv") = 8, py::arg("slow_frames") = 2, py::arg("input_size") = 224,
        py::arg("in_channels") = 3, "analytic per-pathway FLOP estimate");
}
