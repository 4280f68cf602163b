#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "nearmiss/metrics.hpp"
#include "nearmiss/rng.hpp"

using namespace nearmiss;
using namespace nearmiss::metrics;
using clips::Label;

TEST_CASE("published confusion matrix reproduces the published scores") {
    ConfusionMatrix cm{30, 24, 12, 42};
    auto r = compute_metrics(cm);
    CHECK(round2(r.accuracy) == doctest::Approx(66.67));
    CHECK(round2(r.recall) == doctest::Approx(55.56));
    CHECK(round2(r.precision) == doctest::Approx(71.43));
    CHECK(round2(r.f1) == doctest::Approx(62.50));
    CHECK_FALSE(r.undefined_precision);
    CHECK_FALSE(r.undefined_recall);
    CHECK_FALSE(r.undefined_f1);
}

TEST_CASE("identities hold exactly before rounding") {
    ConfusionMatrix cm{30, 24, 12, 42};
    auto r = compute_metrics(cm);
    CHECK(r.accuracy == 100.0 * double(cm.tp + cm.tn) / double(cm.total()));
    CHECK(r.recall == 100.0 * double(cm.tp) / double(cm.tp + cm.fn));
    CHECK(r.precision == 100.0 * double(cm.tp) / double(cm.tp + cm.fp));
    CHECK(r.f1 == doctest::Approx(2.0 * r.precision * r.recall / (r.precision + r.recall))
                      .epsilon(1e-15));
    CHECK(r.f1 >= std::min(r.precision, r.recall));
    CHECK(r.f1 <= std::max(r.precision, r.recall));
}

TEST_CASE("perfect classifier and zero-denominator flags") {
    auto perfect = compute_metrics({10, 0, 0, 10});
    CHECK(perfect.accuracy == 100.0);
    CHECK(perfect.recall == 100.0);
    CHECK(perfect.precision == 100.0);
    CHECK(perfect.f1 == 100.0);

    auto flagged = compute_metrics({0, 0, 5, 5});
    CHECK(flagged.precision == 0.0);
    CHECK(flagged.recall == 0.0);
    CHECK(flagged.f1 == 0.0);
    CHECK(flagged.undefined_precision);
    CHECK(flagged.undefined_recall);
    CHECK(flagged.undefined_f1);
    // tp+fp = 0 only
    auto no_preds = compute_metrics({0, 5, 0, 5});
    CHECK(no_preds.undefined_precision);
    CHECK_FALSE(no_preds.undefined_recall);
    CHECK(no_preds.undefined_f1);

    CHECK_THROWS_AS(compute_metrics({0, 0, 0, 0}), std::invalid_argument);
}

TEST_CASE("metamorphic: swapping the positive class swaps precision and recall") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        ConfusionMatrix cm{std::int64_t(rng.uniform_int(1, 50)),
                           std::int64_t(rng.uniform_int(1, 50)),
                           std::int64_t(rng.uniform_int(1, 50)),
                           std::int64_t(rng.uniform_int(1, 50))};
        ConfusionMatrix swapped{cm.tn, cm.fp, cm.fn, cm.tp};
        auto a = compute_metrics(cm);
        auto b = compute_metrics(swapped);
        CHECK(a.accuracy == doctest::Approx(b.accuracy).epsilon(1e-12));
        // swapping classes exchanges the roles of the error types
        CHECK(b.recall == doctest::Approx(100.0 * double(cm.tn) / double(cm.tn + cm.fp)));
        CHECK(b.precision == doctest::Approx(100.0 * double(cm.tn) / double(cm.tn + cm.fn)));
    }
}

TEST_CASE("scale-free: multiplying all counts leaves every score unchanged") {
    ConfusionMatrix cm{7, 3, 5, 11};
    auto base = compute_metrics(cm);
    for (std::int64_t k : {2, 5, 17}) {
        auto scaled = compute_metrics({cm.tp * k, cm.fn * k, cm.fp * k, cm.tn * k});
        CHECK(scaled.accuracy == doctest::Approx(base.accuracy).epsilon(1e-12));
        CHECK(scaled.recall == doctest::Approx(base.recall).epsilon(1e-12));
        CHECK(scaled.precision == doctest::Approx(base.precision).epsilon(1e-12));
        CHECK(scaled.f1 == doctest::Approx(base.f1).epsilon(1e-12));
    }
}

TEST_CASE("confusion accounting and input validation") {
    std::vector<Label> labels = {Label::near_miss, Label::near_miss, Label::safe_driving,
                                 Label::safe_driving, Label::near_miss};
    auto exact = confusion(labels, labels);
    CHECK(exact.fn == 0);
    CHECK(exact.fp == 0);
    CHECK(exact.tp == 3);
    CHECK(exact.tn == 2);

    std::vector<Label> all_nm(5, Label::near_miss);
    std::vector<Label> all_safe(5, Label::safe_driving);
    auto wrong = confusion(all_nm, all_safe);
    CHECK(wrong.fp == 5);
    CHECK(wrong.tp == 0);
    CHECK(wrong.fn == 0);
    CHECK(wrong.tn == 0);

    CHECK_THROWS_AS(confusion(all_nm, {Label::near_miss}), std::invalid_argument);
    CHECK_THROWS_AS(confusion({}, {}), std::invalid_argument);
}

TEST_CASE("improvement table reproduces the published deltas") {
    auto baselines = load_baselines(std::string(NEARMISS_DATA_DIR) + "/baselines.json");
    REQUIRE(baselines.size() == 4);
    auto ours = compute_metrics({30, 24, 12, 42});
    auto table = improvement_table(ours, baselines, "NTT (V)");
    const auto& mine = table.rows.back();
    REQUIRE(mine.precision.delta.has_value());
    CHECK(round2(*mine.precision.delta) == doctest::Approx(26.88));
    CHECK(round2(*mine.recall.delta) == doctest::Approx(12.43));
    CHECK(round2(*mine.f1.delta) == doctest::Approx(19.11));
    // NTT (V) has no published accuracy: no delta for that cell
    CHECK_FALSE(mine.accuracy.delta.has_value());

    std::string text = render_table(table);
    CHECK(text.find("26.88↑") != std::string::npos);
    CHECK(text.find("12.43↑") != std::string::npos);
    CHECK(text.find("19.11↑") != std::string::npos);
    // the NTT (V) accuracy cell renders as a dash
    CHECK(text.find("NTT (V)") != std::string::npos);
    auto line_start = text.find("NTT (V)");
    auto line_end = text.find('\n', line_start);
    CHECK(text.substr(line_start, line_end - line_start).find("-") != std::string::npos);

    CHECK_THROWS_AS(improvement_table(ours, baselines, "nope"), std::invalid_argument);
}

TEST_CASE("report json carries counts, scores and flags") {
    auto r = compute_metrics({0, 0, 5, 5});
    std::string j = report_to_json({0, 0, 5, 5}, r);
    CHECK(j.find("undefined_precision") != std::string::npos);
    CHECK(j.find("\"tp\": 0") != std::string::npos);
}

TEST_CASE("display rounding is half-up at two decimals") {
    CHECK(round2(66.666666) == doctest::Approx(66.67));
    CHECK(round2(62.495) == doctest::Approx(62.5));   // exactly .005 rounds up
    CHECK(round2(12.4255) == doctest::Approx(12.43));
    CHECK(format2(55.555555) == "55.56");
    CHECK(format2(62.5) == "62.50");
}
