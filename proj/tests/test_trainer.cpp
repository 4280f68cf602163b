#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "nearmiss/trainer.hpp"
#include "test_util.hpp"

using namespace nearmiss;
using namespace nearmiss::train;

TEST_CASE("schedule endpoints and closed form") {
    ScheduleConfig cfg;  // 0.01 -> 0.1 over 34 epochs, cosine to 0 at 196
    CHECK(lr_at(0, cfg) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(lr_at(34, cfg) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(lr_at(196, cfg) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(lr_at(34 + (196 - 34) / 2, cfg) == doctest::Approx(0.05).epsilon(1e-12));

    // independent closed form at every integer epoch
    for (int e = 0; e <= 196; ++e) {
        double want;
        if (e < 34) {
            want = 0.01 + (0.1 - 0.01) * double(e) / 34.0;
        } else {
            want = 0.0 + 0.5 * (0.1 - 0.0) * (1.0 + std::cos(double(e - 34) / 162.0 * M_PI));
        }
        CHECK(std::abs(lr_at(e, cfg) - want) < 1e-15);
    }
    CHECK_THROWS_AS(lr_at(-1, cfg), std::invalid_argument);
    CHECK_THROWS_AS(lr_at(197, cfg), std::invalid_argument);
}

TEST_CASE("schedule shape: warmup strictly increasing, cosine non-increasing") {
    ScheduleConfig cfg;
    for (int e = 1; e < 34; ++e) CHECK(lr_at(e, cfg) > lr_at(e - 1, cfg));
    for (int e = 35; e <= 196; ++e) CHECK(lr_at(e, cfg) <= lr_at(e - 1, cfg));
    // continuity at the junction: both pieces give lr_max
    CHECK(lr_at(33, cfg) < lr_at(34, cfg));
    CHECK(lr_at(34, cfg) == doctest::Approx(cfg.lr_max));
    CHECK(lr_at(35, cfg) < lr_at(34, cfg));
}

TEST_CASE("schedule validation") {
    ScheduleConfig bad;
    bad.lr_min = 0.2;  // >= lr_max
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    ScheduleConfig bad2;
    bad2.warmup_epochs = 200;
    CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
    OptimConfig bad3;
    bad3.momentum = 1.0;
    CHECK_THROWS_AS(bad3.validate(), std::invalid_argument);
}

TEST_CASE("sgd step follows velocity = m*v + g + wd*p; p -= lr*v") {
    nn::ParamStore store;
    auto* p = store.add("w", {2});
    p->value[0] = 1.0;
    p->value[1] = -2.0;
    OptimConfig cfg;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.1;
    SGD sgd(cfg);

    p->grad[0] = 0.5;
    p->grad[1] = -1.0;
    sgd.step(store, 0.1);
    // v = 0.9*0 + 0.5 + 0.1*1 = 0.6 ; p = 1 - 0.1*0.6 = 0.94
    CHECK(p->value[0] == doctest::Approx(0.94).epsilon(1e-12));
    // v = -1 + 0.1*-2 = -1.2 ; p = -2 + 0.12 = -1.88
    CHECK(p->value[1] == doctest::Approx(-1.88).epsilon(1e-12));

    p->grad[0] = 0.0;
    p->grad[1] = 0.0;
    sgd.step(store, 0.1);
    // momentum keeps moving: v = 0.9*0.6 + 0.094 = 0.634
    CHECK(p->value[0] == doctest::Approx(0.94 - 0.1 * (0.9 * 0.6 + 0.1 * 0.94)).epsilon(1e-9));

    // zero learning rate leaves parameters bit-identical
    double before0 = p->value[0], before1 = p->value[1];
    p->grad[0] = 3.0;
    p->grad[1] = -4.0;
    sgd.step(store, 0.0);
    CHECK(p->value[0] == before0);
    CHECK(p->value[1] == before1);
}

TEST_CASE("smooth_curve: identity, constants, impulse, validation") {
    std::vector<double> constant(10, 3.5);
    CHECK(smooth_curve(constant, 5) == constant);
    std::vector<double> any = {1, 2, 3, 4};
    CHECK(smooth_curve(any, 1) == any);
    std::vector<double> impulse(11, 0.0);
    impulse[5] = 1.0;
    auto s = smooth_curve(impulse, 5);
    for (int i = 3; i <= 7; ++i) CHECK(s[std::size_t(i)] == doctest::Approx(0.2));
    CHECK(s[2] == 0.0);
    CHECK(s[8] == 0.0);
    CHECK_THROWS_AS(smooth_curve(any, 4), std::invalid_argument);
    CHECK_THROWS_AS(smooth_curve(any, 0), std::invalid_argument);
    CHECK_THROWS_AS(smooth_curve(any, -3), std::invalid_argument);
}

TEST_CASE("curve files round trip") {
    namespace fs = std::filesystem;
    TrainingCurve curve;
    for (int i = 0; i < 5; ++i) {
        IterRecord r;
        r.iteration = i;
        r.epoch = i / 2;
        r.lr = 0.01 * i;
        r.loss = 1.0 / (i + 1);
        r.top1_error = 0.5 - 0.05 * i;
        curve.iterations.push_back(r);
    }
    fs::path path = fs::temp_directory_path() / "nearmiss_curve_test.csv";
    write_curve(path.string(), curve);
    auto back = read_curve(path.string());
    REQUIRE(back.iterations.size() == 5);
    for (int i = 0; i < 5; ++i) {
        CHECK(back.iterations[std::size_t(i)].lr == curve.iterations[std::size_t(i)].lr);
        CHECK(back.iterations[std::size_t(i)].loss == curve.iterations[std::size_t(i)].loss);
    }
    std::vector<double> loss;
    for (const auto& r : back.iterations) loss.push_back(r.loss);
    fs::path svg = fs::temp_directory_path() / "nearmiss_curve_test.svg";
    write_curve_svg(svg.string(), loss, 3, "loss");
    CHECK(fs::file_size(svg) > 200);
    fs::remove(path);
    fs::remove(svg);
}
