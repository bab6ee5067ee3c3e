#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "ttv/dataset.hpp"
#include "ttv/spindoe.hpp"

using namespace ttv;

namespace {
constexpr double kDeg = M_PI / 180.0;

Vec3 seeded_axis(uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0, 1);
    return Vec3{g(rng), g(rng), g(rng)}.normalized();
}
}  // namespace

TEST_CASE("default pattern satisfies its invariants") {
    auto p = default_pattern();
    CHECK(p.dots.size() == 21);
    CHECK_NOTHROW(p.validate());
}

TEST_CASE("pattern validation rejects bad patterns") {
    auto p = default_pattern();
    // Too few dots
    DotPattern small;
    small.dot_radius_deg = p.dot_radius_deg;
    small.dots.assign(p.dots.begin(), p.dots.begin() + 10);
    CHECK_THROWS(small.validate());

    // Dots too close
    auto close = p;
    close.dots.push_back(Rotation::from_axis_angle({1, 0, 0}, 0.5 * kDeg).rotate(close.dots[0]));
    CHECK_THROWS(close.validate());

    // A rotation-symmetric pattern: a ring of 16 equally spaced dots maps
    // onto itself under a 22.5 degree turn.
    DotPattern ring;
    ring.dot_radius_deg = 4.0;
    for (int i = 0; i < 16; ++i) {
        double a = 2.0 * M_PI * i / 16;
        ring.dots.push_back(Vec3{std::cos(a), std::sin(a), 0.0});
    }
    CHECK_THROWS(ring.validate());
}

TEST_CASE("pattern file round trip") {
    auto p = default_pattern();
    auto path = std::filesystem::temp_directory_path() / "ttv_pattern_test.json";
    save_pattern(p, path.string());
    auto back = load_pattern(path.string());
    REQUIRE(back.dots.size() == p.dots.size());
    for (size_t i = 0; i < p.dots.size(); ++i)
        CHECK(angle_between(back.dots[i], p.dots[i]) < 1e-9);
    std::filesystem::remove(path);
}

TEST_CASE("render identity projects dots at pattern coordinates") {
    auto p = default_pattern();
    auto img = render_ball(Rotation::identity(), p, 60);
    auto dirs = detect_dots(img);
    REQUIRE(dirs.size() >= 5);

    // Every detection matches some front-hemisphere pattern dot within 2 deg.
    int matched = 0;
    for (const auto& d : dirs) {
        double best = 1e9;
        for (const auto& q : p.dots)
            if (q.z > 0.05) best = std::min(best, angle_between(d, q));
        if (best < 2.0 * kDeg) ++matched;
    }
    CHECK(matched == static_cast<int>(dirs.size()));
}

TEST_CASE("render of a half-turn about z equals the identity image rotated in-plane") {
    auto p = default_pattern();
    auto a = render_ball(Rotation::identity(), p, 60, {0, 0, 1});
    auto b = render_ball(Rotation::from_axis_angle({0, 0, 1}, M_PI), p, 60, {0, 0, 1});
    double max_diff = 0.0;
    for (int y = 0; y < 60; ++y)
        for (int x = 0; x < 60; ++x)
            max_diff = std::max(
                max_diff, std::abs(static_cast<double>(a.at(x, y)) - b.at(59 - x, 59 - y)));
    CHECK(max_diff < 0.06);  // interpolation tolerance at dot edges
}

TEST_CASE("blank sphere yields no dots") {
    DotPattern empty;
    empty.dot_radius_deg = 6.0;
    auto img = render_ball(Rotation::identity(), empty, 60);
    CHECK(detect_dots(img).empty());
}

TEST_CASE("detected dots are within 2 degrees of ground truth") {
    auto p = default_pattern();
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, M_PI);
    for (int trial = 0; trial < 10; ++trial) {
        Rotation r = Rotation::from_axis_angle(seeded_axis(trial + 100), u(rng));
        auto img = render_ball(r, p, 60);
        auto dirs = detect_dots(img);
        std::vector<Vec3> truth;
        for (const auto& q : p.dots) {
            Vec3 d = r.rotate(q);
            if (d.z > 0.12) truth.push_back(d);
        }
        REQUIRE(dirs.size() >= 4);
        int good = 0;
        for (const auto& d : dirs) {
            double best = 1e9;
            for (const auto& q : truth) best = std::min(best, angle_between(d, q));
            if (best < 2.0 * kDeg) ++good;
        }
        // allow at most one spurious/rim detection
        CHECK(good >= static_cast<int>(dirs.size()) - 1);
        CHECK(good >= 4);
    }
}

TEST_CASE("register identity orientation") {
    auto p = default_pattern();
    std::vector<Vec3> obs;
    for (const auto& q : p.dots)
        if (q.z > 0.1) obs.push_back(q);
    auto reg = register_orientation(obs, p);
    CHECK(reg.rotation.angle() < 0.5 * kDeg);
    CHECK(reg.inliers == static_cast<int>(obs.size()));
}

TEST_CASE("register a 90 degree turn about z") {
    auto p = default_pattern();
    Rotation r = Rotation::from_axis_angle({0, 0, 1}, M_PI / 2);
    std::vector<Vec3> obs;
    for (const auto& q : p.dots) {
        Vec3 d = r.rotate(q);
        if (d.z > 0.1) obs.push_back(d);
    }
    auto reg = register_orientation(obs, p);
    CHECK(reg.rotation.angle_to(r) < 0.5 * kDeg);

    // Uniqueness: no rotation well away from the truth explains the
    // observations equally well.
    int competitive = 0;
    for (int i = 0; i < 500; ++i) {
        Rotation cand = Rotation::from_axis_angle(seeded_axis(i + 1), (i % 36) * 10.0 * kDeg);
        if (cand.angle_to(r) < 10.0 * kDeg) continue;
        int close = 0;
        for (const auto& o : obs) {
            double best = 1e9;
            for (const auto& q : p.dots) best = std::min(best, angle_between(o, cand.rotate(q)));
            if (best < 3.0 * kDeg) ++close;
        }
        if (close >= static_cast<int>(obs.size()) - 1) ++competitive;
    }
    CHECK(competitive == 0);
}

TEST_CASE("register throws on too few dots") {
    auto p = default_pattern();
    CHECK_THROWS_AS(register_orientation({p.dots[0], p.dots[1]}, p), TooFewDots);
}

TEST_CASE("register equivariance") {
    // Registering observations rotated by Q returns Q * R within 0.5 deg.
    auto p = default_pattern();
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.2, M_PI);
    for (int trial = 0; trial < 8; ++trial) {
        Rotation r = Rotation::from_axis_angle(seeded_axis(trial + 300), u(rng));
        std::vector<Vec3> obs;
        for (const auto& q : p.dots) {
            Vec3 d = r.rotate(q);
            if (d.z > 0.1) obs.push_back(d);
        }
        if (obs.size() < 5) continue;
        Rotation q = Rotation::from_axis_angle(seeded_axis(trial + 600), u(rng));
        std::vector<Vec3> obs_q;
        for (const auto& o : obs) obs_q.push_back(q.rotate(o));
        auto reg = register_orientation(obs_q, p);
        CHECK(reg.rotation.angle_to(q * r) < 0.5 * kDeg);
    }
}

TEST_CASE("unwrap constant spin about z") {
    // 0.1 rev/frame at 350 fps -> 35 rps about +z, k ~ 0.
    auto track = make_decaying_track({0, 0, 1}, 35.0, 0.0, 350.0, 24);
    auto est = unwrap_spin(track);
    CHECK(est.rate0 == doctest::Approx(35.0).epsilon(1e-9));
    CHECK(angle_between(est.axis, {0, 0, 1}) < 1e-6);
    CHECK(std::abs(est.damping_k) < 1e-9);
    CHECK(est.reliable);
}

TEST_CASE("unwrap at the half-turn-per-frame limit is unreliable") {
    // 0.5 rev/frame = 175 rps at 350 fps.
    auto track = make_decaying_track({0, 1, 0}, 175.0, 0.0, 350.0, 24);
    auto est = unwrap_spin(track);
    CHECK(est.rate0 == doctest::Approx(175.0).epsilon(0.01));
    CHECK_FALSE(est.reliable);
}

TEST_CASE("unwrap identity track") {
    OrientationTrack track;
    for (int i = 0; i < 10; ++i) track.samples.push_back({i / 350.0, Rotation::identity(), 0});
    auto est = unwrap_spin(track);
    CHECK(est.rate0 == doctest::Approx(0.0));
    CHECK_FALSE(est.reliable);
}

TEST_CASE("unwrap requires three samples") {
    OrientationTrack track;
    track.samples.push_back({0.0, Rotation::identity(), 0});
    track.samples.push_back({0.01, Rotation::identity(), 0});
    CHECK_THROWS_AS(unwrap_spin(track), TooFewSamples);
}

TEST_CASE("unwrap recovers axis and damping from a decaying track") {
    // Noiseless decaying rotation: axis within 1 deg, k within 5%.
    for (uint64_t seed : {1u, 2u, 3u}) {
        Vec3 axis = seeded_axis(seed + 40);
        auto track = make_decaying_track(axis, 90.0, 0.091, 350.0, 200);
        auto est = unwrap_spin(track);
        CHECK(angle_between(est.axis, axis) < 1.0 * kDeg);
        CHECK(std::abs(est.damping_k - 0.091) / 0.091 < 0.05);
        CHECK(est.rate0 == doctest::Approx(90.0).epsilon(1e-3));
    }
}

TEST_CASE("unwrap estimate is invariant under a time shift") {
    Vec3 axis = seeded_axis(77);
    auto a = make_decaying_track(axis, 60.0, 0.091, 350.0, 60);
    auto b = a;
    for (auto& s : b.samples) s.t += 123.456;
    auto ea = unwrap_spin(a);
    auto eb = unwrap_spin(b);
    CHECK(ea.rate0 == doctest::Approx(eb.rate0).epsilon(1e-12));
    CHECK(ea.damping_k == doctest::Approx(eb.damping_k).epsilon(1e-9));
    CHECK(angle_between(ea.axis, eb.axis) < 1e-12);
}

TEST_CASE("full image pipeline recovers a 50 rps spin") {
    auto p = default_pattern();
    Vec3 axis = Vec3{1, 1, 1}.normalized();
    auto images = render_spin_sequence(p, axis, 50.0, 0.091, 350.0, 12, 60, 11);
    auto est = estimate_spin_from_images(images, p);
    CHECK(std::abs(est.rate0 - 50.0) / 50.0 < 0.02);
    CHECK(angle_between(est.axis, axis) < 5.0 * kDeg);
    CHECK(est.reliable);
}

TEST_CASE("blank frames cannot be estimated") {
    DotPattern p = default_pattern();
    DotPattern empty;
    empty.dot_radius_deg = 6.0;
    std::vector<BallImage> images;
    for (int i = 0; i < 5; ++i)
        images.push_back(render_ball(Rotation::identity(), empty, 60, {0, 0, 1}, i / 350.0));
    CHECK_THROWS_AS(estimate_spin_from_images(images, p), TooFewSamples);
}

TEST_CASE("aliased spin above the half-turn limit is flagged unreliable") {
    // 200 rps at 350 fps, rendered with the default decay.
    auto p = default_pattern();
    auto row = run_spin_case(p, seeded_axis(8), 200.0, 0.091, 350.0, 64, 60, 21);
    REQUIRE_FALSE(row.failed);
    CHECK_FALSE(row.estimate.reliable);
}

TEST_CASE("track csv round trip") {
    auto track = make_decaying_track({0, 0, 1}, 40.0, 0.05, 350.0, 8);
    for (auto& s : track.samples) s.inliers = 7;
    auto path = std::filesystem::temp_directory_path() / "ttv_track_test.csv";
    save_track_csv(track, path.string());
    auto back = load_track_csv(path.string());
    REQUIRE(back.samples.size() == track.samples.size());
    for (size_t i = 0; i < track.samples.size(); ++i) {
        CHECK(back.samples[i].t == track.samples[i].t);
        CHECK(back.samples[i].rotation.angle_to(track.samples[i].rotation) < 1e-12);
        CHECK(back.samples[i].inliers == 7);
    }
    std::filesystem::remove(path);
}
