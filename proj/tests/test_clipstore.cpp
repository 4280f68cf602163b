#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <set>

#include "doctest.h"
#include "nearmiss/clipstore.hpp"
#include "test_util.hpp"

using namespace nearmiss;
using namespace nearmiss::clips;

namespace {

ClipRecord make_clip(const std::string& id = "clip0", double fps = 30.0, double dur = 15.0) {
    ClipRecord c;
    c.clip_id = id;
    c.source_path = "/nowhere";
    c.fps = fps;
    c.duration_s = dur;
    c.n_frames = int(fps * dur + 0.5);
    c.event_time_s = 10.0;
    return c;
}

}  // namespace

TEST_CASE("default policy yields the two labeled windows") {
    auto segs = segment_clip(make_clip(), SegmentationPolicy{});
    REQUIRE(segs.size() == 2);
    CHECK(segs[0].label == Label::safe_driving);
    CHECK(segs[0].window.lo == 0.0);
    CHECK(segs[0].window.hi == 5.0);
    CHECK_FALSE(segs[0].window.closed_hi);
    CHECK(segs[1].label == Label::near_miss);
    CHECK(segs[1].window.lo == 5.0);
    CHECK(segs[1].window.hi == 10.0);
    CHECK(segs[1].window.closed_hi);
    // 30 fps: [0,5) -> frames 0..149, [5,10] -> frames 150..300
    CHECK(segs[0].frame_indices.front() == 0);
    CHECK(segs[0].frame_indices.back() == 149);
    CHECK(segs[1].frame_indices.front() == 150);
    CHECK(segs[1].frame_indices.back() == 300);
}

TEST_CASE("segmentation totality: every timestamp maps to exactly one bucket") {
    SegmentationPolicy policy;
    auto clip = make_clip();
    Rng rng(42);
    for (int i = 0; i < 2000; ++i) {
        double t = rng.uniform(0.0, clip.duration_s);
        int hits = int(policy.safe_window.contains(t)) + int(policy.nearmiss_window.contains(t));
        CHECK(hits <= 1);
        bool excluded = hits == 0;
        if (t < 5.0) CHECK_FALSE(excluded);
        if (t > 10.0) CHECK(excluded);  // post-event frames carry no segment
    }
}

TEST_CASE("windows beyond the clip duration are rejected with the window named") {
    auto clip = make_clip("short", 30.0, 8.0);
    clip.event_time_s = 8.0;
    SegmentationPolicy policy;  // near-miss window reaches 10 s
    CHECK_THROWS_WITH_AS(segment_clip(clip, policy),
                         doctest::Contains("[5,10]"), std::invalid_argument);
    SegmentationPolicy overlap{{0, 6, false}, {5, 10, true}};
    CHECK_THROWS_AS(segment_clip(make_clip(), overlap), std::invalid_argument);
}

TEST_CASE("clip record invariants") {
    auto bad_frames = make_clip();
    bad_frames.n_frames = 400;  // 450 expected
    CHECK_THROWS_AS(bad_frames.validate(), std::invalid_argument);
    auto off_by_one = make_clip();
    off_by_one.n_frames = 451;
    CHECK_NOTHROW(off_by_one.validate());
    auto bad_event = make_clip();
    bad_event.event_time_s = 16.0;
    CHECK_THROWS_AS(bad_event.validate(), std::invalid_argument);
}

TEST_CASE("splits reproduce the published 172/57/58 distribution") {
    std::vector<std::string> ids;
    for (int i = 0; i < 287; ++i) ids.push_back("clip_" + std::to_string(1000 + i));
    auto split = make_splits(ids, {6, 2, 2}, 1);
    CHECK(split.train.size() == 172);
    CHECK(split.validation.size() == 57);
    CHECK(split.test.size() == 58);

    std::vector<std::string> ten;
    for (int i = 0; i < 10; ++i) ten.push_back("c" + std::to_string(i));
    auto s10 = make_splits(ten, {6, 2, 2}, 9);
    CHECK(s10.train.size() == 6);
    CHECK(s10.validation.size() == 2);
    CHECK(s10.test.size() == 2);
}

TEST_CASE("splits partition the input and are deterministic per seed") {
    std::vector<std::string> ids;
    for (int i = 0; i < 53; ++i) ids.push_back("v" + std::to_string(i));
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto s = make_splits(ids, {6, 2, 2}, seed);
        std::set<std::string> all;
        for (const auto* part : {&s.train, &s.validation, &s.test})
            for (const auto& id : *part) CHECK(all.insert(id).second);  // no duplicates anywhere
        CHECK(all.size() == ids.size());
        auto again = make_splits(ids, {6, 2, 2}, seed);
        CHECK(again.train == s.train);
        CHECK(again.validation == s.validation);
        CHECK(again.test == s.test);
    }
}

TEST_CASE("split preconditions") {
    CHECK_THROWS_AS(make_splits({}, {6, 2, 2}, 0), std::invalid_argument);
    CHECK_THROWS_AS(make_splits({"a", "b"}, {6, 2, 2}, 0), std::invalid_argument);
    CHECK_THROWS_AS(make_splits({"a", "b"}, {0, 0, 0}, 0), std::invalid_argument);
    CHECK_THROWS_AS(make_splits({"a", "b"}, {-1, 2, 2}, 0), std::invalid_argument);
    CHECK_NOTHROW(make_splits({"a", "b"}, {1, 0, 1}, 0));
}

TEST_CASE("frozen uniform-center sampling oracle: 150 frames, 8 fast taps") {
    LabeledSegment seg;
    seg.clip_id = "c";
    for (int i = 0; i < 150; ++i) seg.frame_indices.push_back(i);
    auto idx = sample_frame_indices(seg, 2, 4, 0.5);
    // floor((j + 0.5) * 150 / 8), computed by hand before the implementation
    CHECK(idx.fast == std::vector<int>{9, 28, 46, 65, 84, 103, 121, 140});
    CHECK(idx.slow == std::vector<int>{9, 84});  // every alpha-th fast tap
}

TEST_CASE("sampling laws: count ratio, slow subset of fast, alpha=1 degenerate") {
    LabeledSegment seg;
    seg.clip_id = "c";
    for (int i = 100; i < 240; ++i) seg.frame_indices.push_back(i);
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        int slow_frames = rng.uniform_int(1, 4);
        int alpha = rng.uniform_int(1, 4);
        double offset = rng.uniform();
        auto idx = sample_frame_indices(seg, slow_frames, alpha, offset);
        CHECK(int(idx.fast.size()) == alpha * slow_frames);
        CHECK(int(idx.slow.size()) == slow_frames);
        std::set<int> fast_set(idx.fast.begin(), idx.fast.end());
        for (int s : idx.slow) CHECK(fast_set.count(s) == 1);
    }
    auto same = sample_frame_indices(seg, 4, 1, 0.5);
    CHECK(same.slow == same.fast);
}

TEST_CASE("too-short segments are rejected with the required minimum") {
    LabeledSegment seg;
    seg.clip_id = "tiny";
    for (int i = 0; i < 5; ++i) seg.frame_indices.push_back(i);
    CHECK_THROWS_WITH_AS(sample_frame_indices(seg, 2, 4, 0.5),
                         doctest::Contains("needs at least 8"), std::invalid_argument);
}

namespace {

Tensor random_volume(int t, int h, int w, int c, std::uint64_t seed) {
    Tensor vol({t, h, w, c});
    Rng rng(seed);
    for (auto& v : vol.data) v = rng.uniform();
    return vol;
}

}  // namespace

TEST_CASE("scale jitter: degenerate range is a pure resize") {
    // square input, range [64,64], crop 64: the whole pipeline is the identity
    Tensor vol = random_volume(3, 64, 64, 1, 7);
    Tensor out = scale_jitter(vol, 64, 64, 64, 123);
    CHECK(out.shape == std::vector<int>{3, 64, 64, 1});
    CHECK(out.data == vol.data);
    // non-square input still lands exactly on the crop size
    Tensor wide = random_volume(2, 64, 80, 1, 8);
    Tensor wout = scale_jitter(wide, 64, 64, 64, 1);
    CHECK(wout.shape == std::vector<int>{2, 64, 64, 1});
}

TEST_CASE("scale jitter: output is crop-sized for every seed and deterministic") {
    Tensor vol = random_volume(2, 72, 96, 1, 11);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Tensor out = scale_jitter(vol, 52, 64, 48, seed);
        CHECK(out.shape == std::vector<int>{2, 48, 48, 1});
    }
    Tensor a = scale_jitter(vol, 52, 64, 48, 99);
    Tensor b = scale_jitter(vol, 52, 64, 48, 99);
    CHECK(a.data == b.data);  // bit-identical
    CHECK_THROWS_AS(scale_jitter(vol, 40, 64, 48, 0), std::invalid_argument);
}

TEST_CASE("center crop path preserves aspect then crops the middle") {
    Tensor vol = random_volume(2, 60, 90, 1, 13);
    Tensor out = resize_center_crop(vol, 48);
    CHECK(out.shape == std::vector<int>{2, 48, 48, 1});
}

TEST_CASE("content labels only demote event-window segments of safe clips") {
    std::vector<LabeledSegment> segs = segment_clip(make_clip("a"), SegmentationPolicy{});
    auto more = segment_clip(make_clip("b"), SegmentationPolicy{});
    segs.insert(segs.end(), more.begin(), more.end());
    apply_content_labels(segs, {{"a", Label::safe_driving}, {"b", Label::near_miss}});
    CHECK(segs[0].label == Label::safe_driving);
    CHECK(segs[1].label == Label::safe_driving);  // relabeled: clip a has no event
    CHECK(segs[2].label == Label::safe_driving);
    CHECK(segs[3].label == Label::near_miss);
}

TEST_CASE("manifest and split files round trip") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "nearmiss_clipstore_test";
    fs::create_directories(dir);
    std::vector<ClipRecord> recs = {make_clip("m0"), make_clip("m1", 8.0, 15.0)};
    recs[1].origin = Origin::synthetic;
    recs[0].source_path = (dir / "m0").string();
    recs[1].source_path = (dir / "m1").string();
    write_manifest((dir / "manifest.tsv").string(), recs);
    auto back = read_manifest((dir / "manifest.tsv").string());
    REQUIRE(back.size() == 2);
    CHECK(back[0].clip_id == "m0");
    CHECK(back[1].origin == Origin::synthetic);
    CHECK(back[1].fps == 8.0);
    CHECK(back[0].source_path == (dir / "m0").string());

    DatasetSplit split;
    split.train = {"m0"};
    split.test = {"m1"};
    split.seed = 5;
    write_split_file((dir / "splits.json").string(), split);
    auto s2 = read_split_file((dir / "splits.json").string());
    CHECK(s2.train == split.train);
    CHECK(s2.test == split.test);
    CHECK(s2.seed == 5);
    fs::remove_all(dir);
}

TEST_CASE("frame source rejects paths without a decoder") {
    CHECK_THROWS_WITH_AS(open_frame_source("/no/such/file.mp4"), doctest::Contains("no decoder"),
                         std::runtime_error);
}
