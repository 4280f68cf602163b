#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>

#include "doctest.h"
#include "nearmiss/synthgen.hpp"

using namespace nearmiss;
using namespace nearmiss::synth;

namespace {

SynthClipSpec near_miss_spec(std::uint64_t seed = 1, double onset = 6.0) {
    SynthClipSpec spec;
    spec.seed = seed;
    spec.fps = 8.0;
    spec.height = spec.width = 48;
    spec.label = clips::Label::near_miss;
    IntruderSpec in;
    in.onset_s = onset;
    in.speed_px_per_s = 10.0;
    in.bbox_h = in.bbox_w = 10;
    in.entry_side = EntrySide::left;
    spec.intruder = in;
    spec.background.texture_seed = seed * 31 + 1;
    spec.background.drift_px_per_s = 1.0;
    return spec;
}

}  // namespace

TEST_CASE("same spec twice gives bit-identical frames and ground truth") {
    auto spec = near_miss_spec();
    auto [v1, g1] = generate_clip(spec);
    auto [v2, g2] = generate_clip(spec);
    CHECK(v1.data == v2.data);
    REQUIRE(g1.bboxes.size() == g2.bboxes.size());
    for (std::size_t i = 0; i < g1.bboxes.size(); ++i) {
        CHECK(g1.bboxes[i].frame == g2.bboxes[i].frame);
        CHECK(g1.bboxes[i].x == g2.bboxes[i].x);
    }
}

TEST_CASE("ground truth boxes appear only from onset and stay inside the frame") {
    auto spec = near_miss_spec(3, 6.0);
    auto [vol, gt] = generate_clip(spec);
    CHECK(gt.label == clips::Label::near_miss);
    REQUIRE_FALSE(gt.bboxes.empty());
    for (const auto& b : gt.bboxes) {
        double t = double(b.frame) / spec.fps;
        CHECK(t >= 6.0);
        CHECK(b.x >= 0);
        CHECK(b.y >= 0);
        CHECK(b.x + b.w <= spec.width);
        CHECK(b.y + b.h <= spec.height);
        CHECK(b.w > 0);
        CHECK(b.h > 0);
    }
    // one box per visible frame
    int from = int(std::ceil(6.0 * spec.fps));
    CHECK(int(gt.bboxes.size()) == spec.n_frames() - from);
}

TEST_CASE("safe clips carry no boxes and no sprite motion") {
    SynthClipSpec spec;
    spec.seed = 9;
    spec.fps = 8.0;
    spec.height = spec.width = 48;
    spec.label = clips::Label::safe_driving;
    spec.background.texture_seed = 5;
    spec.background.drift_px_per_s = 1.0;
    auto [vol, gt] = generate_clip(spec);
    CHECK(gt.label == clips::Label::safe_driving);
    CHECK(gt.bboxes.empty());
    CHECK(vol.size(0) == spec.n_frames());
}

TEST_CASE("spec validation enforces the label/intruder invariant") {
    SynthClipSpec no_intruder;
    no_intruder.label = clips::Label::near_miss;
    CHECK_THROWS_AS(no_intruder.validate(), std::invalid_argument);

    auto early = near_miss_spec();
    early.intruder->onset_s = 3.0;  // outside the near-miss window
    CHECK_THROWS_AS(early.validate(), std::invalid_argument);

    auto safe_with_event = near_miss_spec();
    safe_with_event.label = clips::Label::safe_driving;
    CHECK_THROWS_AS(safe_with_event.validate(), std::invalid_argument);

    auto huge = near_miss_spec();
    huge.intruder->bbox_w = 64;
    CHECK_THROWS_AS(huge.validate(), std::invalid_argument);

    auto slow_sprite = near_miss_spec();
    slow_sprite.background.drift_px_per_s = 4.0;  // 5x rule broken (speed 10)
    CHECK_THROWS_AS(slow_sprite.validate(), std::invalid_argument);
}

TEST_CASE("random specs keep onset jitter and the 5x speed margin") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto spec = random_spec(seed, clips::Label::near_miss, 64, 64, 8.0, 15.0);
        REQUIRE(spec.intruder.has_value());
        CHECK(spec.intruder->onset_s >= 5.5);
        CHECK(spec.intruder->onset_s <= 9.0);
        CHECK(spec.intruder->speed_px_per_s >= 5.0 * spec.background.drift_px_per_s);
        CHECK_NOTHROW(spec.validate());
    }
}

TEST_CASE("corpus rounding rule: 287 clips at balance 0.5 -> 144 near-miss") {
    // lround(0.5 * 287) = 144 (half away from zero), leaving 143 safe
    CHECK(std::lround(0.5 * 287) == 144);
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "nearmiss_corpus_counts";
    fs::remove_all(dir);
    CorpusParams p;
    p.n = 9;
    p.balance = 0.5;
    p.master_seed = 4;
    p.height = p.width = 32;
    p.fps = 4.0;
    auto entries = generate_corpus(p, dir.string());
    int near = 0;
    for (const auto& e : entries)
        if (e.label == clips::Label::near_miss) ++near;
    CHECK(near == 5);  // lround(4.5)
    CHECK(entries.size() == 9);
    fs::remove_all(dir);
}

TEST_CASE("two corpora with one master seed produce identical artifacts") {
    namespace fs = std::filesystem;
    fs::path a = fs::temp_directory_path() / "nearmiss_corpus_a";
    fs::path b = fs::temp_directory_path() / "nearmiss_corpus_b";
    fs::remove_all(a);
    fs::remove_all(b);
    CorpusParams p;
    p.n = 4;
    p.balance = 0.5;
    p.master_seed = 77;
    p.height = p.width = 32;
    p.fps = 4.0;
    generate_corpus(p, a.string());
    generate_corpus(p, b.string());
    auto slurp = [](const fs::path& path) {
        std::ifstream in(path, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    };
    CHECK(slurp(a / "manifest.tsv") == slurp(b / "manifest.tsv"));
    CHECK(slurp(a / "gt" / "synth_000000.json") == slurp(b / "gt" / "synth_000000.json"));
    CHECK(slurp(a / "clips" / "synth_000001" / "frame_00020.pgm") ==
          slurp(b / "clips" / "synth_000001" / "frame_00020.pgm"));

    // the written frames feed back through the codec-free ingestion path
    auto records = clips::read_manifest((a / "manifest.tsv").string());
    REQUIRE(records.size() == 4);
    auto src = clips::open_frame_source(records[0].source_path);
    CHECK(src->frame_count() == records[0].n_frames);
    Image f = src->frame(0);
    CHECK(f.h == 32);
    CHECK(f.w == 32);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("written frames match the in-memory volume up to 8-bit quantization") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "nearmiss_quant";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto spec = near_miss_spec(21);
    auto [vol, gt] = generate_clip(spec);
    Image frame = clips::volume_frame(vol, 50);
    write_pgm((dir / "f.pgm").string(), frame);
    Image back = read_pnm((dir / "f.pgm").string());
    for (std::size_t i = 0; i < frame.px.size(); ++i)
        CHECK(std::abs(frame.px[i] - back.px[i]) <= 1.0 / 255.0);
    fs::remove_all(dir);
}

TEST_CASE("motion-energy statistic separates the classes (small corpus)") {
    clips::Window safe{0.0, 5.0, false}, nm{5.0, 10.0, true};
    std::vector<double> scores;
    std::vector<bool> positives;
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        bool is_near = seed % 2 == 0;
        auto spec = random_spec(seed, is_near ? clips::Label::near_miss : clips::Label::safe_driving,
                                48, 48, 8.0, 15.0);
        auto [vol, gt] = generate_clip(spec);
        scores.push_back(motion_energy(vol, spec.fps, nm) - motion_energy(vol, spec.fps, safe));
        positives.push_back(is_near);
    }
    double auc = rank_auc(scores, positives);
    CHECK(auc > 0.95);
}
