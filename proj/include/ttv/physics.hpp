// Ball flight simulation: gravity, quadratic drag and Magnus lift integrated
// with RK4, plus exponential spin decay |w(t)| = |w(t0)| * exp(-k t) applied
// per step, and least-squares fitting of the decay coefficient k.

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "ttv/geometry.hpp"

namespace ttv {

struct BallState {
    double t = 0.0;   // s
    Vec3 position;    // m
    Vec3 velocity;    // m/s
    Vec3 omega;       // rad/s
};

struct PhysicsParams {
    double mass = 0.0027;          // kg
    double radius = 0.02;          // m
    double air_density = 1.204;    // kg/m^3
    double drag_coefficient = 0.4;
    double magnus_coefficient = 0.6;
    double gravity = 9.81;         // m/s^2
    double spin_damping = 0.091;   // 1/s

    void validate() const;
};

struct Trajectory {
    std::vector<BallState> states;  // strictly increasing t
};

struct InvalidDt : std::runtime_error {
    InvalidDt() : std::runtime_error("dt must satisfy 0 < dt <= 0.01 s") {}
};
struct TooFewSamples : std::runtime_error {
    explicit TooFewSamples(const std::string& what) : std::runtime_error(what) {}
};
struct NonPositiveRate : std::runtime_error {
    NonPositiveRate() : std::runtime_error("spin rates must be > 0 for log fit") {}
};

// One RK4 step of duration dt. Spin magnitude decays by exp(-k dt) with the
// direction unchanged; inside the step the Magnus term sees the closed-form
// decayed spin so the integrator keeps its fourth-order convergence.
BallState step(const BallState& state, const PhysicsParams& params, double dt);

// Repeated step() until initial.t + duration, including both endpoints.
Trajectory simulate(const BallState& initial, const PhysicsParams& params,
                    double duration, double dt);

// Linear interpolation of position at time t; clamped to the endpoints.
Vec3 trajectory_position(const Trajectory& traj, double t);

struct SpinDampingFit {
    double k = 0.0;      // 1/s
    double rate0 = 0.0;  // rps at t = 0 of the first sample
    double rms_log_residual = 0.0;
};

// Least-squares line through (t, log rate): slope -k, intercept log rate0.
// Sample times are shifted so rate0 refers to the first sample's time.
SpinDampingFit fit_spin_damping(const std::vector<std::pair<double, double>>& samples);

// CSV with header t,px,py,pz,vx,vy,vz,wx,wy,wz (SI units).
void save_trajectory_csv(const Trajectory& traj, const std::string& path);
Trajectory load_trajectory_csv(const std::string& path);

}  // namespace ttv
