#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "ttv/dataset.hpp"
#include "ttv/geometry.hpp"

using namespace ttv;

namespace {

CameraModel simple_camera() {
    CameraModel c;
    c.name = "test";
    c.kind = CameraKind::frame;
    c.fps = 100.0;
    c.intrinsics.fx = c.intrinsics.fy = 600.0;
    c.intrinsics.cx = 640.0;
    c.intrinsics.cy = 360.0;
    c.intrinsics.width = 1280;
    c.intrinsics.height = 720;
    return c;
}

}  // namespace

TEST_CASE("rotation basics") {
    Rotation r = Rotation::from_axis_angle({0, 0, 1}, M_PI / 2);
    Vec3 v = r.rotate({1, 0, 0});
    CHECK(v.x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(v.y == doctest::Approx(1.0).epsilon(1e-12));

    // canonicalization: w >= 0
    Rotation neg(-0.5, 0.1, 0.2, 0.3);
    CHECK(neg.w() >= 0.0);

    // composition associativity and inverse round trip
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 50; ++i) {
        Rotation a(u(rng), u(rng), u(rng), u(rng));
        Rotation b(u(rng), u(rng), u(rng), u(rng));
        Rotation c(u(rng), u(rng), u(rng), u(rng));
        CHECK(((a * b) * c).angle_to(a * (b * c)) < 1e-12);
        CHECK((a * a.inverse()).angle() < 1e-12);
        // matrix round trip
        Rotation back = Rotation::from_matrix(a.matrix());
        CHECK(a.angle_to(back) < 1e-9);
    }
}

TEST_CASE("pose compose and inverse") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 20; ++i) {
        Pose p{Rotation(u(rng), u(rng), u(rng), u(rng)), {u(rng), u(rng), u(rng)}};
        Pose q{Rotation(u(rng), u(rng), u(rng), u(rng)), {u(rng), u(rng), u(rng)}};
        Vec3 x{u(rng), u(rng), u(rng)};
        Vec3 a = (p * q).apply(x);
        Vec3 b = p.apply(q.apply(x));
        CHECK((a - b).norm() < 1e-12);
        Vec3 c = (p * p.inverse()).apply(x);
        CHECK((c - x).norm() < 1e-9);
    }
}

TEST_CASE("project on-axis point hits the principal point") {
    auto cam = simple_camera();
    auto px = project({0, 0, 2}, cam);
    REQUIRE(px.has_value());
    CHECK(px->x == doctest::Approx(640.0));
    CHECK(px->y == doctest::Approx(360.0));
}

TEST_CASE("project pinhole formula") {
    auto cam = simple_camera();
    auto px = project({0.1, 0, 2}, cam);
    REQUIRE(px.has_value());
    CHECK(px->x == doctest::Approx(670.0));  // cx + fx * x / z
    CHECK(px->y == doctest::Approx(360.0));
}

TEST_CASE("project behind camera") {
    auto cam = simple_camera();
    CHECK_FALSE(project({0, 0, -1}, cam).has_value());
    CHECK_FALSE(project({0, 0, 0}, cam).has_value());
}

TEST_CASE("distortion jacobian matches finite differences") {
    CameraIntrinsics K = simple_camera().intrinsics;
    K.distortion = {-0.12, 0.03, 1e-3, -2e-3};
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-0.4, 0.4);
    for (int i = 0; i < 30; ++i) {
        Vec2 n{u(rng), u(rng)};
        auto J = distort_jacobian(K, n);
        const double h = 1e-7;
        Vec2 dx = (distort(K, {n.x + h, n.y}) - distort(K, {n.x - h, n.y})) * (0.5 / h);
        Vec2 dy = (distort(K, {n.x, n.y + h}) - distort(K, {n.x, n.y - h})) * (0.5 / h);
        CHECK(J[0] == doctest::Approx(dx.x).epsilon(1e-5));
        CHECK(J[2] == doctest::Approx(dx.y).epsilon(1e-5));
        CHECK(J[1] == doctest::Approx(dy.x).epsilon(1e-5));
        CHECK(J[3] == doctest::Approx(dy.y).epsilon(1e-5));
    }
}

TEST_CASE("project/unproject round trip over the sensor") {
    // Property: project(unproject(u, v, d)) == (u, v) within 1e-6 px.
    auto rig = reference_rig();
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ud(0.5, 10.0);
    for (const auto& cam : rig.cameras) {
        std::uniform_real_distribution<double> ux(1.0, cam.intrinsics.width - 2.0);
        std::uniform_real_distribution<double> uy(1.0, cam.intrinsics.height - 2.0);
        for (int i = 0; i < 200; ++i) {
            Vec2 px{ux(rng), uy(rng)};
            double d = ud(rng);
            Vec3 world = unproject(cam, px, d);
            auto back = project(world, cam);
            REQUIRE(back.has_value());
            CHECK(std::abs(back->x - px.x) < 1e-6);
            CHECK(std::abs(back->y - px.y) < 1e-6);
        }
    }
}

TEST_CASE("triangulate round trip") {
    auto rig = reference_rig();
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> ux(-0.8, 0.8), uz(0.2, 1.2);
    for (int i = 0; i < 50; ++i) {
        Vec3 p{ux(rng), ux(rng), uz(rng)};
        std::vector<PixelObservation> obs;
        for (size_t c = 0; c < rig.cameras.size(); ++c) {
            auto px = project(p, rig.cameras[c]);
            if (px) obs.push_back({static_cast<int>(c), *px});
        }
        REQUIRE(obs.size() >= 2);
        Vec3 hat = triangulate(rig.cameras, obs);
        CHECK((hat - p).norm() < 1e-6);
    }
}

TEST_CASE("triangulate error cases") {
    auto rig = reference_rig();
    Vec3 p{0.2, 0.1, 0.5};
    auto px = project(p, rig.cameras[0]);
    REQUIRE(px.has_value());
    CHECK_THROWS_AS(triangulate(rig.cameras, {{0, *px}}), InsufficientObservations);

    // Two cameras with identical pose: parallel rays.
    std::vector<CameraModel> twins{rig.cameras[0], rig.cameras[0]};
    CHECK_THROWS_AS(triangulate(twins, {{0, *px}, {1, *px}}), DegenerateGeometry);
}

TEST_CASE("triangulate is invariant under a global rigid transform") {
    auto rig = reference_rig();
    Pose g{Rotation::from_axis_angle({0.3, -0.2, 0.9}, 0.7), {0.4, -1.2, 0.5}};
    Vec3 p{0.3, -0.2, 0.6};

    std::vector<PixelObservation> obs;
    for (size_t c = 0; c < rig.cameras.size(); ++c) {
        auto px = project(p, rig.cameras[c]);
        if (px) obs.push_back({static_cast<int>(c), *px});
    }
    Vec3 base = triangulate(rig.cameras, obs);

    // Transform the world: cameras get pose' = pose o g^-1, the point g(p).
    Rig moved = rig;
    for (auto& cam : moved.cameras) cam.pose = cam.pose * g.inverse();
    std::vector<PixelObservation> obs2;
    for (size_t c = 0; c < moved.cameras.size(); ++c) {
        auto px = project(g.apply(p), moved.cameras[c]);
        if (px) obs2.push_back({static_cast<int>(c), *px});
    }
    Vec3 hat = triangulate(moved.cameras, obs2);
    CHECK((g.inverse().apply(hat) - base).norm() < 1e-6);
}

TEST_CASE("reprojection mae basics") {
    auto rig = reference_rig();
    Vec3 p{0.1, 0.2, 0.5};
    std::vector<Vec3> points;
    std::vector<PixelObservation> obs;
    for (size_t c = 0; c < rig.cameras.size(); ++c) {
        auto px = project(p, rig.cameras[c]);
        REQUIRE(px.has_value());
        points.push_back(p);
        obs.push_back({static_cast<int>(c), *px});
    }
    auto stats = reprojection_mae(rig.cameras, points, obs);
    for (const auto& s : stats) {
        CHECK(s.mean == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(s.stddev == doctest::Approx(0.0).epsilon(1e-12));
    }

    // Constant +1 px offset in u.
    auto shifted = obs;
    for (auto& o : shifted) o.pixel.x += 1.0;
    stats = reprojection_mae(rig.cameras, points, shifted);
    for (const auto& s : stats) CHECK(s.mean == doctest::Approx(1.0).epsilon(1e-9));

    CHECK_THROWS_AS(reprojection_mae(rig.cameras, {}, {}), EmptyInput);
}

TEST_CASE("reprojection mae of gaussian noise approaches the rayleigh mean") {
    // sigma = 0.3 px on both axes -> mean radius sigma * sqrt(pi/2) ~ 0.376.
    auto rig = reference_rig();
    const auto& cam = rig.cameras[0];
    Vec3 p{0.0, 0.0, 0.4};
    auto base = project(p, cam);
    REQUIRE(base.has_value());

    std::mt19937_64 rng(99);
    std::normal_distribution<double> g(0.0, 0.3);
    std::vector<Vec3> points;
    std::vector<PixelObservation> obs;
    for (int i = 0; i < 1000; ++i) {
        points.push_back(p);
        obs.push_back({0, {base->x + g(rng), base->y + g(rng)}});
    }
    auto stats = reprojection_mae(rig.cameras, points, obs);
    CHECK(std::abs(stats[0].mean - 0.376) < 0.05);
}

TEST_CASE("rig json round trip") {
    auto rig = reference_rig();
    auto text = rig_to_json(rig);
    Rig back = rig_from_json(text);
    REQUIRE(back.cameras.size() == rig.cameras.size());
    CHECK(back.gauge == rig.gauge);
    for (size_t c = 0; c < rig.cameras.size(); ++c) {
        const auto& a = rig.cameras[c];
        const auto& b = back.cameras[c];
        CHECK(a.name == b.name);
        CHECK(a.kind == b.kind);
        CHECK(a.fps == doctest::Approx(b.fps));
        CHECK(a.intrinsics.fx == doctest::Approx(b.intrinsics.fx));
        CHECK(a.pose.rotation.angle_to(b.pose.rotation) < 1e-12);
        CHECK((a.pose.translation - b.pose.translation).norm() < 1e-12);
    }
}

TEST_CASE("rig json rejects event camera with fps") {
    auto rig = reference_rig();
    auto text = rig_to_json(rig);
    // Manually corrupt: give event_0 an fps field.
    auto pos = text.find("\"event_0\"");
    REQUIRE(pos != std::string::npos);
    text.insert(text.find('{', text.rfind('{', pos)) + 1, "\"fps\": 100,");
    CHECK_THROWS(rig_from_json(text));
}
