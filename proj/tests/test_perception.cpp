#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "rvc/imaging.hpp"
#include "rvc/perception.hpp"
#include "rvc/random.hpp"
#include "rvc/world.hpp"
#include "support.hpp"

using namespace rvc;
using namespace rvc::perception;
using imaging::BScanFrame;
using imaging::MicroscopeFrame;
using world::WorldState;

namespace {

WorldState scene(Pose3 tip, std::uint64_t seed = 21) {
    world::NeedleModel n;
    n.tip = tip;
    return world::make_world(n, world::VeinModel::preset("embryo"), world::PhysicsConfig{}, seed);
}

const imaging::Scanline kLine{{0.0, 0.0}, {1.0, 0.0}};

BScanFrame bscan(const WorldState& w) { return imaging::render_bscan(w, kLine); }

// Confidence, or 0 when nothing is detected.
double tip_confidence(const MicroscopeFrame& f) {
    try {
        return detect_tip(f).confidence;
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NoNeedleDetected);
        return 0.0;
    }
}

}  // namespace

// ------------------------------------------------------------ tip

TEST(DetectTip, RoundTripAtKnownPixel) {
    const MicroscopeFrame probe = imaging::render_microscope(scene({0, 0, 0.2}));
    const Vec2 xy = imaging::px_to_mm(probe, {120.0, 85.0});
    const MicroscopeFrame f = imaging::render_microscope(scene({xy.x, xy.y, 0.2}));
    const TipDetection d = detect_tip(f);
    EXPECT_NEAR(d.tip_px.x, 120.0, 1.0);
    EXPECT_NEAR(d.tip_px.y, 85.0, 1.0);
    EXPECT_GT(d.confidence, 0.5);
    EXPECT_NEAR(d.bbox.width, 50.0, 1e-9);
    EXPECT_NEAR(d.bbox.height, 50.0, 1e-9);
    EXPECT_GE(d.tip_px.x, d.bbox.u0);
    EXPECT_LE(d.tip_px.x, d.bbox.u0 + d.bbox.width);
}

TEST(DetectTip, BlankFrameHasNoNeedle) {
    imaging::RenderOptions none;
    none.draw_needle = false;
    const MicroscopeFrame f = imaging::render_microscope(scene({0, 0, 0.2}), {}, none);
    EXPECT_CODE(detect_tip(f), ErrorCode::NoNeedleDetected);
}

TEST(DetectTip, BoxClippedAtFrameEdge) {
    const MicroscopeFrame probe = imaging::render_microscope(scene({0, 0, 0.2}));
    const Vec2 xy = imaging::px_to_mm(probe, {500.0, 10.0});
    const TipDetection d = detect_tip(imaging::render_microscope(scene({xy.x, xy.y, 0.2})));
    EXPECT_NEAR(d.tip_px.x, 500.0, 1.0);
    EXPECT_LE(d.bbox.u0 + d.bbox.width, 511.5 + 1e-9);
    EXPECT_GE(d.bbox.v0, -0.5 - 1e-9);
    EXPECT_LT(d.bbox.width, 50.0);
}

TEST(DetectTip, SmallGridWithinOnePixel) {
    for (int i = 0; i < 7; ++i) {
        for (int j = 0; j < 7; ++j) {
            const Pose3 tip{-4.0 + 1.31 * i, -3.5 + 1.17 * j, 0.1 + 0.05 * ((i + j) % 4)};
            const MicroscopeFrame f = imaging::render_microscope(scene(tip));
            const Vec2 want = imaging::mm_to_px(f, tip.xy());
            const TipDetection d = detect_tip(f);
            EXPECT_LE(norm(d.tip_px - want), 1.0) << tip.x << "," << tip.y;
        }
    }
}

TEST(DetectTip, OcclusionOverTipDegrades) {
    for (const Pose3 tip : {Pose3{0, 0.3, 0.05}, Pose3{-1.2, -0.4, 0.3}, Pose3{2.0, 1.0, 0.2}}) {
        const MicroscopeFrame f = imaging::render_microscope(scene(tip));
        const Vec2 t = imaging::mm_to_px(f, tip.xy());
        imaging::ArtifactConfig c;
        c.occlusion = imaging::Occlusion{{t.x - 10, t.y - 10, 20, 20}, imaging::palette::vein, 1.0};
        EXPECT_LT(tip_confidence(imaging::apply_artifacts(f, c)), 0.3);
    }
}

TEST(DetectTip, ConfidenceFallsWithOccludedArea) {
    for (const Pose3 tip : {Pose3{0, 0.3, 0.05}, Pose3{-1.2, -0.4, 0.3}}) {
        const MicroscopeFrame f = imaging::render_microscope(scene(tip));
        const Vec2 t = imaging::mm_to_px(f, tip.xy());
        double last = tip_confidence(f);
        EXPECT_GT(last, 0.5);
        for (int side = 2; side <= 30; side += 2) {
            imaging::ArtifactConfig c;
            c.occlusion = imaging::Occlusion{{t.x - side / 2.0, t.y - side / 2.0, double(side), double(side)},
                                             imaging::palette::vein, 1.0};
            const double conf = tip_confidence(imaging::apply_artifacts(f, c));
            EXPECT_LE(conf, last + 1e-9) << "side " << side;
            last = conf;
        }
        EXPECT_EQ(last, 0.0);
    }
}

TEST(DetectTip, ConfidenceFallsWithOccluderOpacity) {
    const Pose3 tip{0.5, 0.2, 0.1};
    const MicroscopeFrame f = imaging::render_microscope(scene(tip));
    const Vec2 t = imaging::mm_to_px(f, tip.xy());
    double last = 1.0;
    for (int k = 0; k <= 10; ++k) {
        imaging::ArtifactConfig c;
        c.occlusion = imaging::Occlusion{{t.x - 12, t.y - 12, 24, 24}, imaging::palette::vein, 0.1 * k};
        const double conf = tip_confidence(imaging::apply_artifacts(f, c));
        EXPECT_LE(conf, last + 1e-9) << "alpha " << 0.1 * k;
        last = conf;
    }
    EXPECT_LT(last, 0.3);
}

// ------------------------------------------------------------ contact

TEST(Contact, LogisticValues) {
    EXPECT_LT(contact_probability(10.0), 0.01);
    EXPECT_NEAR(contact_probability(10.0), 1.0 / (1.0 + std::exp(5.0)), 1e-15);
    EXPECT_DOUBLE_EQ(contact_probability(0.0), 0.5);
    EXPECT_NEAR(contact_probability(-4.0), 0.8808, 1e-4);
    const ContactDecision at = decide_contact(0.0, 0.5);
    EXPECT_TRUE(at.decision);
    EXPECT_EQ(at.threshold_used, 0.5);
    EXPECT_FALSE(decide_contact(10.0, 0.5).decision);
    EXPECT_TRUE(decide_contact(-4.0, 0.5).decision);
}

TEST(Contact, ProbabilityNonincreasingInGap) {
    Rng rng(17);
    for (int i = 0; i < 10000; ++i) {
        const double a = rng.uniform(-40, 40);
        const double b = a + rng.uniform(0, 10);
        ASSERT_GE(contact_probability(a), contact_probability(b));
        const double thr = rng.uniform();
        const ContactDecision d = decide_contact(a, thr);
        ASSERT_EQ(d.decision, d.probability >= thr);
        ASSERT_GE(d.probability, 0.0);
        ASSERT_LE(d.probability, 1.0);
    }
}

TEST(Contact, TenPixelsAboveIsNoContact) {
    const ContactDecision d = classify_contact(bscan(scene({0, 0, 10 * 0.0357})));
    EXPECT_NEAR(d.gap_px, 10.0, 0.5);
    EXPECT_LT(d.probability, 0.01);
    EXPECT_FALSE(d.decision);
}

TEST(Contact, AtRidgeIsHalf) {
    const ContactDecision d = classify_contact(bscan(scene({0, 0, 0.0})));
    EXPECT_NEAR(d.gap_px, 0.0, 0.5);
    EXPECT_NEAR(d.probability, 0.5, 0.07);
}

TEST(Contact, FourPixelsPastRidge) {
    const WorldState w = scene({0, 0, -4 * 0.0357});
    ASSERT_EQ(w.tissue.phase, world::TissuePhase::Deformed);
    const ContactDecision d = classify_contact(bscan(w));
    EXPECT_NEAR(d.gap_px, -4.0, 0.5);
    EXPECT_NEAR(d.probability, 0.88, 0.03);
    EXPECT_TRUE(d.decision);
}

TEST(Contact, MeasuredGapTracksHeight) {
    for (int k = -4; k <= 30; ++k) {
        const double z = k * 0.0357;
        const ContactDecision d = classify_contact(bscan(scene({0.02 * k, 0, z})));
        EXPECT_NEAR(d.gap_px, k, 0.5) << "k " << k;
    }
}

TEST(Contact, NeedleOutOfScan) {
    EXPECT_CODE(classify_contact(bscan(scene({5.0, 0.0, 1.0}))), ErrorCode::NeedleNotInScan);
    EXPECT_CODE(classify_contact(bscan(scene({0, 0, 0})), 1.5), ErrorCode::InvalidArgument);
}

// ------------------------------------------------------------ puncture

TEST(Puncture, DeformedIsNotPuncture) {
    for (double d : {0.03, 0.08, 0.15}) {
        const WorldState w = scene({0, 0, -d});
        ASSERT_EQ(w.tissue.phase, world::TissuePhase::Deformed);
        EXPECT_FALSE(detect_puncture(bscan(w)).decision) << d;
    }
}

TEST(Puncture, PuncturedIsDetected) {
    for (double z : {-0.16, -0.3, -0.45}) {
        const WorldState w = world::step(scene({0, 0, z + 0.45}), world::ZStep{-0.45}, 0.1);
        ASSERT_EQ(w.tissue.phase, world::TissuePhase::Punctured);
        const PunctureDecision d = detect_puncture(bscan(w));
        EXPECT_TRUE(d.decision) << z;
        EXPECT_GE(d.confidence, 0.5);
        EXPECT_GT(d.bbox.width, 0.0);
    }
}

TEST(Puncture, MaxSaltNoiseIsSeededAndDeterministic) {
    const WorldState w = world::step(scene({0, 0, 0.3}), world::ZStep{-0.5}, 0.1);
    const BScanFrame clean = bscan(w);
    int detected = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        imaging::ArtifactConfig c;
        c.noise_frac = 0.001;
        c.seed = seed;
        const BScanFrame noisy = imaging::apply_artifacts(clean, c);
        const PunctureDecision a = detect_puncture(noisy);
        const PunctureDecision b = detect_puncture(noisy);
        EXPECT_EQ(a.decision, b.decision);
        EXPECT_EQ(a.confidence, b.confidence);
        detected += a.decision;
    }
    EXPECT_GT(detected, 0);
}

TEST(Puncture, OracleAgreementOverInsertionSweep) {
    // Slow approach to the wall, then a fast stroke: the classifiers must
    // fire within one tick of the ground truth and agree everywhere else.
    WorldState w = scene({-0.1, 0, 0.25});
    const double dt = 0.05;
    int truth_contact = -1, seen_contact = -1, truth_punct = -1, seen_punct = -1;
    for (int tick = 0; tick < 200 && !world::wall_ruptured(w.tissue.phase); ++tick) {
        const bool slow = w.tissue.phase == world::TissuePhase::Free || w.tissue.deflection_mm < 0.1;
        w = world::step(w, slow ? world::MotionCommand{world::ZStep{-0.01}}
                                : world::MotionCommand{world::AxialInsertion{2.5, 0.05}},
                        dt);
        const BScanFrame f = bscan(w);
        if (truth_contact < 0 && w.tissue.phase != world::TissuePhase::Free) truth_contact = tick;
        if (seen_contact < 0 && classify_contact(f).decision) seen_contact = tick;
        if (truth_punct < 0 && world::wall_ruptured(w.tissue.phase)) truth_punct = tick;
        const bool punct = detect_puncture(f).decision;
        if (seen_punct < 0 && punct) seen_punct = tick;
        if (truth_punct < 0) {
            EXPECT_FALSE(punct) << "tick " << tick;
        }
    }
    ASSERT_GE(truth_contact, 0);
    ASSERT_GE(truth_punct, 0);
    EXPECT_LE(std::abs(seen_contact - truth_contact), 1);
    EXPECT_LE(std::abs(seen_punct - truth_punct), 1);
}

// ------------------------------------------------------------ metrics

TEST(Metrics, TableTwoConfusion) {
    const MetricsTable t = metrics_from_confusion({9, 3, 1, 14});
    // Hand arithmetic from the counts.
    EXPECT_DOUBLE_EQ(t.classes[0].precision, 9.0 / 10.0);
    EXPECT_DOUBLE_EQ(t.classes[1].precision, 14.0 / 17.0);
    EXPECT_DOUBLE_EQ(t.classes[0].recall, 9.0 / 12.0);
    EXPECT_DOUBLE_EQ(t.classes[1].recall, 14.0 / 15.0);
    EXPECT_NEAR(t.classes[0].f1, 18.0 / 22.0, 1e-12);
    EXPECT_NEAR(t.classes[1].f1, 28.0 / 32.0, 1e-12);
    EXPECT_EQ(t.classes[0].support, 12u);
    EXPECT_EQ(t.classes[1].support, 15u);
    EXPECT_DOUBLE_EQ(t.accuracy, 23.0 / 27.0);
    // Two-decimal reference values.
    const double tol = 0.005 + 1e-12;
    EXPECT_NEAR(t.classes[0].precision, 0.90, tol);
    EXPECT_NEAR(t.classes[1].precision, 0.82, tol);
    EXPECT_NEAR(t.classes[0].recall, 0.75, tol);
    EXPECT_NEAR(t.classes[1].recall, 0.93, tol);
    EXPECT_NEAR(t.classes[0].f1, 0.82, tol);
    EXPECT_NEAR(t.classes[1].f1, 0.87, tol);
    EXPECT_NEAR(t.accuracy, 0.852, 0.0005);
    EXPECT_FALSE(t.any_undefined());
}

TEST(Metrics, FromSamplesMatchesCounts) {
    std::vector<LabeledSample> s;
    auto add = [&](int truth, int pred, int n) {
        for (int i = 0; i < n; ++i) s.push_back({"f" + std::to_string(s.size()), truth, pred, 0.9});
    };
    add(0, 0, 9);
    add(0, 1, 3);
    add(1, 0, 1);
    add(1, 1, 14);
    const MetricsTable t = evaluate_classifier(s);
    EXPECT_EQ(t.confusion.tn, 9u);
    EXPECT_EQ(t.confusion.fp, 3u);
    EXPECT_EQ(t.confusion.fn, 1u);
    EXPECT_EQ(t.confusion.tp, 14u);
    EXPECT_DOUBLE_EQ(t.accuracy, 23.0 / 27.0);
}

TEST(Metrics, AllCorrect) {
    std::vector<LabeledSample> s;
    for (int i = 0; i < 10; ++i) s.push_back({"f", i % 2, i % 2, 1.0});
    const MetricsTable t = evaluate_classifier(s);
    for (const auto& c : t.classes) {
        EXPECT_EQ(c.precision, 1.0);
        EXPECT_EQ(c.recall, 1.0);
        EXPECT_EQ(c.f1, 1.0);
    }
    EXPECT_EQ(t.accuracy, 1.0);
}

TEST(Metrics, DegenerateAllPredictedPositive) {
    std::vector<LabeledSample> s;
    for (int i = 0; i < 6; ++i) s.push_back({"f", 0, 1, 0.7});
    const MetricsTable t = evaluate_classifier(s);
    EXPECT_EQ(t.classes[1].precision, 0.0);
    EXPECT_TRUE(t.classes[1].undefined_recall);
    EXPECT_TRUE(t.classes[1].undefined_f1);
    EXPECT_TRUE(t.classes[0].undefined_precision);
    EXPECT_EQ(t.classes[0].precision, 0.0);
    EXPECT_TRUE(t.any_undefined());
    EXPECT_EQ(t.accuracy, 0.0);
}

TEST(Metrics, Errors) {
    EXPECT_CODE(evaluate_classifier({}), ErrorCode::EmptySampleSet);
    EXPECT_CODE(metrics_from_confusion({}), ErrorCode::EmptySampleSet);
    EXPECT_CODE(evaluate_classifier({{"f", 2, 0, 0.5}}), ErrorCode::InvalidArgument);
}

// Brute-force oracle: recount the confusion from random label vectors.
TEST(Metrics, RandomSamplesAgreeWithDirectCount) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<LabeledSample> s(1 + rng.below(60));
        for (auto& x : s) x = {"f", int(rng.below(2)), int(rng.below(2)), rng.uniform()};
        const MetricsTable t = evaluate_classifier(s);
        for (int cls = 0; cls < 2; ++cls) {
            double hit = 0, pred = 0, real = 0;
            for (const auto& x : s) {
                hit += x.true_label == cls && x.predicted_label == cls;
                pred += x.predicted_label == cls;
                real += x.true_label == cls;
            }
            const auto& m = t.classes[static_cast<std::size_t>(cls)];
            EXPECT_EQ(m.support, std::size_t(real));
            EXPECT_DOUBLE_EQ(m.precision, pred > 0 ? hit / pred : 0.0);
            EXPECT_DOUBLE_EQ(m.recall, real > 0 ? hit / real : 0.0);
            ASSERT_GE(m.f1, 0.0);
            ASSERT_LE(m.f1, 1.0);
        }
    }
}
