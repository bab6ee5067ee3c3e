#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "ttv/physics.hpp"

using namespace ttv;

TEST_CASE("free fall step") {
    BallState s;
    s.position = {0, 0, 1};
    PhysicsParams p;
    BallState out = step(s, p, 0.001);
    // Drag nibbles ~1e-9 off the free-fall value during the substeps.
    CHECK(out.velocity.z == doctest::Approx(-0.00981).epsilon(1e-6));
    CHECK(out.velocity.x == doctest::Approx(0.0));
    CHECK(out.omega.norm() == 0.0);
}

TEST_CASE("spin decay follows the closed form") {
    // 100 rps, k = 0.091: after 1 s the rate is 100 * exp(-0.091) ~ 91.30.
    BallState s;
    s.position = {0, 0, 5};
    s.omega = {0, 0, 100.0 * 2.0 * M_PI};
    PhysicsParams p;
    p.spin_damping = 0.091;
    for (int i = 0; i < 1000; ++i) s = step(s, p, 0.001);
    double rate = s.omega.norm() / (2.0 * M_PI);
    CHECK(rate == doctest::Approx(100.0 * std::exp(-0.091)).epsilon(1e-9));
    CHECK(rate == doctest::Approx(91.30).epsilon(1e-3));
}

TEST_CASE("magnus acceleration direction is omega cross v") {
    BallState s;
    s.position = {0, 0, 1};
    s.velocity = {5, 0, 0};
    s.omega = {0, 0, 200.0 * M_PI};
    PhysicsParams p;
    BallState out = step(s, p, 0.0005);
    // z x x = +y
    CHECK(out.velocity.y > 0.0);
}

TEST_CASE("spin direction exactly preserved") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0, 1);
    PhysicsParams p;
    for (int i = 0; i < 20; ++i) {
        Vec3 axis = Vec3{g(rng), g(rng), g(rng)}.normalized();
        BallState s;
        s.position = {0, 0, 2};
        s.velocity = {g(rng), g(rng), g(rng)};
        s.omega = axis * 300.0;
        for (int j = 0; j < 100; ++j) s = step(s, p, 0.002);
        CHECK(s.omega.normalized().dot(axis) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("invalid dt") {
    BallState s;
    PhysicsParams p;
    CHECK_THROWS_AS(step(s, p, 0.0), InvalidDt);
    CHECK_THROWS_AS(step(s, p, -0.001), InvalidDt);
    CHECK_THROWS_AS(step(s, p, 0.02), InvalidDt);
}

TEST_CASE("zero duration gives a single-state trajectory") {
    BallState s;
    s.position = {1, 2, 3};
    PhysicsParams p;
    auto traj = simulate(s, p, 0.0, 0.001);
    CHECK(traj.states.size() == 1);
}

TEST_CASE("drag-free flight is parabolic") {
    // Closed-form ballistics oracle: apex height = vz^2 / (2 g).
    PhysicsParams p;
    p.drag_coefficient = 1e-12;
    p.magnus_coefficient = 1e-12;
    p.spin_damping = 0.0;
    BallState s;
    s.position = {0, 0, 0.5};
    s.velocity = {2.0, 0.0, 3.1};
    auto traj = simulate(s, p, 3.1 / 9.81 * 2.0, 1e-4);
    double apex = 0.0;
    for (const auto& st : traj.states) apex = std::max(apex, st.position.z);
    double expected = 0.5 + 3.1 * 3.1 / (2.0 * 9.81);
    CHECK(std::abs(apex - expected) < 1e-6);
}

TEST_CASE("energy non-increasing under drag with fixed spin") {
    PhysicsParams p;
    p.spin_damping = 0.0;
    BallState s;
    s.position = {0, 0, 1.0};
    s.velocity = {6.0, 1.0, 2.0};
    s.omega = {0, 0, 100.0};
    auto traj = simulate(s, p, 0.8, 1e-3);
    double prev = 1e300;
    for (const auto& st : traj.states) {
        double e = 0.5 * p.mass * st.velocity.squared_norm() +
                   p.mass * p.gravity * st.position.z;
        CHECK(e <= prev + 1e-12);
        prev = e;
    }
}

TEST_CASE("rk4 fourth-order convergence") {
    // Halving dt shrinks the error by ~16x; measured slope >= 3.5.
    PhysicsParams p;
    BallState s0;
    s0.position = {0, 0, 1};
    s0.velocity = {5, 1, 2};
    s0.omega = {30, 200, 90};

    auto final_state = [&](double dt) {
        auto traj = simulate(s0, p, 0.5, dt);
        return traj.states.back();
    };
    // Finer steps than 2e-3 sink below the double accumulation floor (~1e-13).
    BallState ref = final_state(1.25e-4);
    std::vector<double> dts{8e-3, 4e-3, 2e-3};
    std::vector<double> errs;
    for (double dt : dts) {
        BallState s = final_state(dt);
        double e = (s.position - ref.position).norm() + (s.velocity - ref.velocity).norm();
        errs.push_back(e);
    }
    double slope1 = std::log2(errs[0] / errs[1]);
    double slope2 = std::log2(errs[1] / errs[2]);
    CHECK(slope1 >= 3.5);
    CHECK(slope2 >= 3.5);
}

TEST_CASE("fit_spin_damping recovers exact decay") {
    std::vector<std::pair<double, double>> samples;
    for (int i = 0; i < 60; ++i) {
        double t = i / 350.0;
        samples.push_back({t, 80.0 * std::exp(-0.091 * t)});
    }
    auto fit = fit_spin_damping(samples);
    CHECK(fit.k == doctest::Approx(0.091).epsilon(1e-9));
    CHECK(fit.rate0 == doctest::Approx(80.0).epsilon(1e-9));
}

TEST_CASE("fit_spin_damping constant rate gives k = 0") {
    std::vector<std::pair<double, double>> samples;
    for (int i = 0; i < 10; ++i) samples.push_back({i * 0.01, 42.0});
    auto fit = fit_spin_damping(samples);
    CHECK(fit.k == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(fit.rate0 == doctest::Approx(42.0).epsilon(1e-12));
}

TEST_CASE("fit_spin_damping error cases") {
    CHECK_THROWS_AS(fit_spin_damping({{0.0, 1.0}, {0.1, 1.0}}), TooFewSamples);
    CHECK_THROWS_AS(fit_spin_damping({{0.0, 1.0}, {0.1, -1.0}, {0.2, 1.0}}), NonPositiveRate);
}

TEST_CASE("fit recovers the configured k from a simulated flight") {
    PhysicsParams p;
    p.spin_damping = 0.063;
    BallState s;
    s.position = {0, 0, 2};
    s.velocity = {4, 0, 1};
    s.omega = {0, 60.0 * 2 * M_PI, 0};
    auto traj = simulate(s, p, 1.0, 1e-3);
    std::vector<std::pair<double, double>> samples;
    for (size_t i = 0; i < traj.states.size(); i += 10)
        samples.push_back({traj.states[i].t, traj.states[i].omega.norm() / (2 * M_PI)});
    auto fit = fit_spin_damping(samples);
    CHECK(fit.k == doctest::Approx(0.063).epsilon(1e-6));
}

TEST_CASE("trajectory csv round trip") {
    PhysicsParams p;
    BallState s;
    s.position = {0.1, -0.2, 1.0};
    s.velocity = {3, 1, 2};
    s.omega = {10, 20, 30};
    auto traj = simulate(s, p, 0.05, 1e-3);
    auto path = std::filesystem::temp_directory_path() / "ttv_traj_test.csv";
    save_trajectory_csv(traj, path.string());
    auto back = load_trajectory_csv(path.string());
    REQUIRE(back.states.size() == traj.states.size());
    for (size_t i = 0; i < traj.states.size(); ++i) {
        CHECK(back.states[i].t == traj.states[i].t);
        CHECK((back.states[i].position - traj.states[i].position).norm() == 0.0);
        CHECK((back.states[i].omega - traj.states[i].omega).norm() == 0.0);
    }
    std::filesystem::remove(path);
}
