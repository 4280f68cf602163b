#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>

#include "doctest.h"
#include "nearmiss/slowfast.hpp"
#include "test_util.hpp"

using namespace nearmiss;
using namespace nearmiss::sf;
using testutil::fill_random;

namespace {

PathwayConfig tiny_config() {
    PathwayConfig cfg;
    cfg.alpha = 4;
    cfg.beta_inv = 8;
    cfg.slow_frames = 2;
    cfg.backbone_depth = 18;
    cfg.base_width = 8;
    cfg.in_channels = 1;
    cfg.input_size = 8;
    cfg.dropout_rate = 0.0;
    cfg.nonlocal_stages = {"slow/res4"};
    return cfg;
}

std::pair<Tensor, Tensor> tiny_inputs(const PathwayConfig& cfg, int batch, std::uint64_t seed) {
    Tensor slow({batch, cfg.in_channels, cfg.slow_frames, cfg.input_size, cfg.input_size});
    Tensor fast({batch, cfg.in_channels, cfg.fast_frames(), cfg.input_size, cfg.input_size});
    Rng rng(seed);
    fill_random(slow, rng, 0.5);
    fill_random(fast, rng, 0.5);
    return {std::move(slow), std::move(fast)};
}

}  // namespace

TEST_CASE("stage block counts per depth") {
    CHECK(stage_blocks(18) == std::vector<int>{2, 2, 2, 2});
    CHECK(stage_blocks(50) == std::vector<int>{3, 4, 6, 3});
    CHECK(stage_blocks(101) == std::vector<int>{3, 4, 23, 3});
    CHECK_THROWS_AS(stage_blocks(34), std::invalid_argument);
}

TEST_CASE("default config: stem widths, channel law, temporal law, flop share") {
    PathwayConfig cfg;  // paper defaults: alpha 4, beta_inv 8, depth 101
    auto net = SlowFastNet::build(cfg, 1);

    // fast stem width = 64 / 8
    auto* fast_stem = net->params().find("fast/stem/conv/w");
    REQUIRE(fast_stem);
    CHECK(fast_stem->value.size(0) == 8);

    // stage outputs via the analytic summary
    auto rows = net->summary();
    std::map<std::string, LayerRow> by_name;
    for (const auto& r : rows) by_name[r.name] = r;
    const int expect_slow[4] = {256, 512, 1024, 2048};
    for (int i = 0; i < 4; ++i) {
        std::string stage = "res" + std::to_string(i + 2);
        auto slow_last = by_name.at("slow/" + stage + "/b" +
                                    std::to_string(stage_blocks(101)[std::size_t(i)] - 1));
        auto fast_last = by_name.at("fast/" + stage + "/b" +
                                    std::to_string(stage_blocks(101)[std::size_t(i)] - 1));
        CHECK(slow_last.out_shape[0] == expect_slow[i]);
        CHECK(fast_last.out_shape[0] == expect_slow[i] / 8);          // channel law
        CHECK(fast_last.out_shape[1] == 4 * slow_last.out_shape[1]);  // temporal law
        CHECK(slow_last.out_shape[1] == 2);
    }

    auto rep = net->flops();
    double share = rep.fast_share();
    CHECK(share >= 0.10);
    CHECK(share <= 0.30);

    auto text = net->summary_text();
    CHECK(text.find("fast pathway share") != std::string::npos);
}

TEST_CASE("channel and temporal laws hold across a config sweep") {
    for (int depth : {18, 50}) {
        for (int beta : {4, 8}) {
            for (int alpha : {2, 4}) {
                PathwayConfig cfg;
                cfg.backbone_depth = depth;
                cfg.beta_inv = beta;
                cfg.alpha = alpha;
                cfg.base_width = 16;
                cfg.input_size = 32;
                cfg.in_channels = 1;
                auto net = SlowFastNet::build(cfg, 0);
                auto rows = net->summary();
                int expansion = depth >= 50 ? 4 : 1;
                for (const auto& r : rows) {
                    if (r.name.rfind("fast/res", 0) != 0 || r.name.find("/b") == std::string::npos)
                        continue;
                    int stage = r.name[8] - '2';
                    int slow_w = (16 << stage) * expansion;
                    CHECK(r.out_shape[0] == slow_w / beta);
                    CHECK(r.out_shape[1] == alpha * cfg.slow_frames);
                }
            }
        }
    }
}

TEST_CASE("indivisible widths are rejected naming the stage") {
    PathwayConfig cfg;
    cfg.base_width = 60;  // not divisible by 8
    CHECK_THROWS_WITH_AS(SlowFastNet::build(cfg, 0), doctest::Contains("stage"),
                         std::invalid_argument);
    PathwayConfig bad_nl = tiny_config();
    bad_nl.nonlocal_stages = {"slow/res9"};
    CHECK_THROWS_AS(SlowFastNet::build(bad_nl, 0), std::invalid_argument);
}

TEST_CASE("parameter inventory is a pure function of the config") {
    auto cfg = tiny_config();
    auto a = SlowFastNet::build(cfg, 5);
    auto b = SlowFastNet::build(cfg, 5);
    auto c = SlowFastNet::build(cfg, 6);
    const auto& pa = a->params().params();
    const auto& pb = b->params().params();
    const auto& pc = c->params().params();
    REQUIRE(pa.size() == pb.size());
    REQUIRE(pa.size() == pc.size());
    bool values_differ_somewhere = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->name == pb[i]->name);
        CHECK(pa[i]->value.shape == pb[i]->value.shape);
        CHECK(pa[i]->value.shape == pc[i]->value.shape);  // same shapes, different seed
        CHECK(pa[i]->value.data == pb[i]->value.data);    // same seed, same values
        if (pa[i]->value.data != pc[i]->value.data) values_differ_somewhere = true;
    }
    CHECK(values_differ_somewhere);
}

TEST_CASE("forward: logits shape, eval determinism, permutation equivariance") {
    auto cfg = tiny_config();
    auto net = SlowFastNet::build(cfg, 3);
    auto [slow, fast] = tiny_inputs(cfg, 3, 17);
    net->set_train(false);
    Tensor l1 = net->forward(slow, fast);
    CHECK(l1.shape == std::vector<int>{3, 2});
    Tensor l2 = net->forward(slow, fast);
    CHECK(l1.data == l2.data);

    // swap samples 0 and 2
    auto swap_batch = [](const Tensor& t, int i, int j) {
        Tensor out = t;
        std::int64_t per = t.numel() / t.size(0);
        std::copy_n(t.ptr() + j * per, per, out.ptr() + i * per);
        std::copy_n(t.ptr() + i * per, per, out.ptr() + j * per);
        return out;
    };
    Tensor l3 = net->forward(swap_batch(slow, 0, 2), swap_batch(fast, 0, 2));
    for (int k = 0; k < 2; ++k) {
        CHECK(l3[0 * 2 + k] == doctest::Approx(l1[2 * 2 + k]).epsilon(1e-12));
        CHECK(l3[2 * 2 + k] == doctest::Approx(l1[0 * 2 + k]).epsilon(1e-12));
        CHECK(l3[1 * 2 + k] == doctest::Approx(l1[1 * 2 + k]).epsilon(1e-12));
    }

    // softmax of logits sums to 1
    auto ce = nn::softmax_cross_entropy(l1, {0, 1, 0});
    for (int n = 0; n < 3; ++n)
        CHECK(ce.probs[n * 2] + ce.probs[n * 2 + 1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("forward rejects mismatched frame counts and channels") {
    auto cfg = tiny_config();
    auto net = SlowFastNet::build(cfg, 3);
    auto [slow, fast] = tiny_inputs(cfg, 1, 2);
    Tensor bad_fast({1, cfg.in_channels, 4, cfg.input_size, cfg.input_size});
    CHECK_THROWS_AS(net->forward(slow, bad_fast), std::invalid_argument);
    Tensor bad_slow({1, 2, cfg.slow_frames, cfg.input_size, cfg.input_size});
    CHECK_THROWS_AS(net->forward(bad_slow, fast), std::invalid_argument);
}

TEST_CASE("lateral fuse: temporal collapse, channel count, identity case") {
    {
        nn::ParamStore store;
        LateralFuse lat(store, "lat", 8, LateralCfg{4, 5, 2});
        Rng rng(1);
        lat.conv.init_fan_out(rng);
        Tensor fast({2, 8, 8, 4, 4}), slow({2, 16, 2, 4, 4});
        fill_random(fast, rng);
        fill_random(slow, rng);
        Tensor fused = lat.fuse(fast, slow);
        CHECK(fused.size(2) == 2);               // T collapses to the slow length
        CHECK(fused.size(1) == 16 + 2 * 8);      // slow_C + 2 * fast_C
        Tensor bad_fast({2, 8, 6, 4, 4});
        CHECK_THROWS_AS(lat.fuse(bad_fast, slow), std::invalid_argument);
    }
    {
        // alpha = 1 with an identity kernel: unmodified fast features appended
        nn::ParamStore store;
        LateralFuse lat(store, "lat", 3, LateralCfg{1, 1, 1});
        lat.conv.init_zero();
        for (int c = 0; c < 3; ++c) lat.conv.w->value[std::int64_t(c) * 3 + c] = 1.0;
        Rng rng(2);
        Tensor fast({1, 3, 4, 3, 3}), slow({1, 5, 4, 3, 3});
        fill_random(fast, rng);
        fill_random(slow, rng);
        Tensor fused = lat.fuse(fast, slow);
        REQUIRE(fused.size(1) == 8);
        Tensor gs, gf;
        nn::split_channels(fused, 5, gs, gf);
        CHECK(gs.data == slow.data);
        CHECK(gf.data == fast.data);
    }
}

TEST_CASE("checkpoint round trip and config mismatch") {
    namespace fs = std::filesystem;
    auto cfg = tiny_config();
    auto net = SlowFastNet::build(cfg, 11);
    net->norm_mean = {0.4};
    net->norm_std = {0.2};
    fs::path path = fs::temp_directory_path() / "nearmiss_ckpt_test.bin";
    net->save_checkpoint(path.string(), 42, {{"note", "unit"}});

    auto loaded = SlowFastNet::load_checkpoint(path.string());
    CHECK(loaded.epoch == 42);
    CHECK(loaded.extra.at("note") == "unit");
    CHECK(loaded.net->norm_mean == net->norm_mean);
    const auto& pa = net->params().params();
    const auto& pb = loaded.net->params().params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value.data == pb[i]->value.data);
    // loaded net computes the same function
    auto [slow, fast] = tiny_inputs(cfg, 2, 19);
    net->set_train(false);
    loaded.net->set_train(false);
    CHECK(net->forward(slow, fast).data == loaded.net->forward(slow, fast).data);

    PathwayConfig other = cfg;
    other.base_width = 16;
    other.alpha = 2;
    std::string msg;
    try {
        SlowFastNet::load_checkpoint(path.string(), &other);
    } catch (const std::exception& e) {
        msg = e.what();
    }
    CHECK(msg.find("base_width") != std::string::npos);
    CHECK(msg.find("alpha") != std::string::npos);

    std::ofstream junk(path);
    junk << "not a checkpoint";
    junk.close();
    CHECK_THROWS_AS(SlowFastNet::load_checkpoint(path.string()), std::runtime_error);
    fs::remove(path);
}

TEST_CASE("full tiny model: analytic gradients match central finite differences") {
    auto cfg = tiny_config();
    auto net = SlowFastNet::build(cfg, 23);
    // nudge every parameter off special initial values (zero gammas, zero w_z)
    // so gradient flows through all branches
    Rng jitter(29);
    for (auto& p : net->params().params())
        for (auto& v : p->value.data) v += jitter.uniform(-0.05, 0.05);

    auto [slow, fast] = tiny_inputs(cfg, 2, 31);
    std::vector<int> labels = {1, 0};
    net->set_train(true);

    auto snapshot_buffers = [&]() {
        std::vector<Tensor> out;
        for (auto& b : net->params().buffers()) out.push_back(b->value);
        return out;
    };
    auto restore_buffers = [&](const std::vector<Tensor>& snap) {
        auto& bufs = net->params().buffers();
        for (std::size_t i = 0; i < bufs.size(); ++i) bufs[i]->value = snap[i];
    };
    auto loss_fn = [&]() {
        auto snap = snapshot_buffers();
        Tensor logits = net->forward(slow, fast);
        double loss = nn::softmax_cross_entropy(logits, labels).loss;
        restore_buffers(snap);
        return loss;
    };

    // analytic pass
    auto snap = snapshot_buffers();
    Tensor logits = net->forward(slow, fast);
    auto ce = nn::softmax_cross_entropy(logits, labels);
    net->params().zero_grad();
    net->backward(ce.grad);
    restore_buffers(snap);

    // 1e-3 steps graze ReLU/maxpool kinks at this scale and corrupt the
    // difference quotient; 1e-5 keeps truncation ~1e-10 and clears the kinks
    const double h = 1e-5;
    double max_rel = 0.0;
    std::int64_t checked = 0;
    for (auto& p : net->params().params()) {
        for (std::int64_t i = 0; i < p->value.numel(); i += 37) {  // stride-sampled here;
                                                                   // the acceptance suite
                                                                   // sweeps every parameter
            double* x = &p->value.data[std::size_t(i)];
            double x0 = *x;
            *x = x0 + h;
            double fp = loss_fn();
            *x = x0 - h;
            double fm = loss_fn();
            *x = x0;
            double fd = (fp - fm) / (2 * h);
            double an = p->grad[i];
            if (std::max(std::abs(fd), std::abs(an)) < 1e-7) continue;
            double rel = std::abs(an - fd) / std::max({1e-6, std::abs(an), std::abs(fd)});
            max_rel = std::max(max_rel, rel);
            ++checked;
        }
    }
    CHECK(checked > 300);
    CHECK(max_rel <= 1e-3);
}
