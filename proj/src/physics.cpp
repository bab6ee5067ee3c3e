#include "ttv/physics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ttv {

void PhysicsParams::validate() const {
    for (double v : {mass, radius, air_density, drag_coefficient, magnus_coefficient, gravity})
        if (!(v > 0.0)) throw std::invalid_argument("physics parameters must be > 0");
    if (spin_damping < 0.0) throw std::invalid_argument("spin damping must be >= 0");
}

namespace {

// Acceleration under gravity, quadratic drag and Magnus lift.
//   F_drag   = -1/2 rho Cd A |v| v
//   F_magnus =  1/2 rho Cm A r (w x v)
Vec3 acceleration(const Vec3& v, const Vec3& omega, const PhysicsParams& p) {
    const double area = M_PI * p.radius * p.radius;
    Vec3 a{0.0, 0.0, -p.gravity};
    double speed = v.norm();
    double cdrag = 0.5 * p.air_density * p.drag_coefficient * area / p.mass;
    a = a - v * (cdrag * speed);
    double cmag = 0.5 * p.air_density * p.magnus_coefficient * area * p.radius / p.mass;
    a = a + omega.cross(v) * cmag;
    return a;
}

}  // namespace

BallState step(const BallState& s, const PhysicsParams& p, double dt) {
    if (!(dt > 0.0) || dt > 0.01) throw InvalidDt();

    // Spin decays along the step; sample it at the RK4 stage times.
    const double decay_half = std::exp(-p.spin_damping * 0.5 * dt);
    const double decay_full = decay_half * decay_half;
    const Vec3 w0 = s.omega;
    const Vec3 w_half = w0 * decay_half;
    const Vec3 w_full = w0 * decay_full;

    const Vec3 k1v = acceleration(s.velocity, w0, p);
    const Vec3 k1x = s.velocity;

    const Vec3 v2 = s.velocity + k1v * (0.5 * dt);
    const Vec3 k2v = acceleration(v2, w_half, p);
    const Vec3 k2x = v2;

    const Vec3 v3 = s.velocity + k2v * (0.5 * dt);
    const Vec3 k3v = acceleration(v3, w_half, p);
    const Vec3 k3x = v3;

    const Vec3 v4 = s.velocity + k3v * dt;
    const Vec3 k4v = acceleration(v4, w_full, p);
    const Vec3 k4x = v4;

    BallState out;
    out.t = s.t + dt;
    out.position = s.position + (k1x + (k2x + k3x) * 2.0 + k4x) * (dt / 6.0);
    out.velocity = s.velocity + (k1v + (k2v + k3v) * 2.0 + k4v) * (dt / 6.0);
    out.omega = w_full;
    return out;
}

Trajectory simulate(const BallState& initial, const PhysicsParams& p,
                    double duration, double dt) {
    if (!(duration >= 0.0)) throw std::invalid_argument("duration must be >= 0");
    Trajectory traj;
    traj.states.push_back(initial);
    if (duration == 0.0) return traj;

    long n_full = static_cast<long>(std::floor(duration / dt + 1e-9));
    double remainder = duration - static_cast<double>(n_full) * dt;
    BallState s = initial;
    for (long i = 0; i < n_full; ++i) {
        s = step(s, p, dt);
        traj.states.push_back(s);
    }
    if (remainder > 1e-12) {
        s = step(s, p, remainder);
        traj.states.push_back(s);
    }
    return traj;
}

Vec3 trajectory_position(const Trajectory& traj, double t) {
    const auto& st = traj.states;
    if (st.empty()) throw std::invalid_argument("empty trajectory");
    if (t <= st.front().t) return st.front().position;
    if (t >= st.back().t) return st.back().position;
    size_t hi = 1;
    while (hi < st.size() && st[hi].t < t) ++hi;
    const auto& a = st[hi - 1];
    const auto& b = st[hi];
    double u = (t - a.t) / (b.t - a.t);
    return a.position + (b.position - a.position) * u;
}

SpinDampingFit fit_spin_damping(const std::vector<std::pair<double, double>>& samples) {
    if (samples.size() < 3) throw TooFewSamples("fit_spin_damping needs >= 3 samples");
    for (const auto& [t, rate] : samples)
        if (!(rate > 0.0)) throw NonPositiveRate();

    const double t0 = samples.front().first;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(samples.size());
    for (const auto& [t, rate] : samples) {
        double x = t - t0;
        double y = std::log(rate);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    double denom = n * sxx - sx * sx;
    double slope, intercept;
    if (std::abs(denom) < 1e-300) {
        // All samples at one time: flat fit.
        slope = 0.0;
        intercept = sy / n;
    } else {
        slope = (n * sxy - sx * sy) / denom;
        intercept = (sy - slope * sx) / n;
    }

    SpinDampingFit fit;
    fit.k = -slope;
    fit.rate0 = std::exp(intercept);
    double ss = 0.0;
    for (const auto& [t, rate] : samples) {
        double r = std::log(rate) - (intercept + slope * (t - t0));
        ss += r * r;
    }
    fit.rms_log_residual = std::sqrt(ss / n);
    return fit;
}

void save_trajectory_csv(const Trajectory& traj, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "t,px,py,pz,vx,vy,vz,wx,wy,wz\n";
    char line[512];
    for (const auto& s : traj.states) {
        std::snprintf(line, sizeof(line),
                      "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      s.t, s.position.x, s.position.y, s.position.z, s.velocity.x,
                      s.velocity.y, s.velocity.z, s.omega.x, s.omega.y, s.omega.z);
        f << line;
    }
}

Trajectory load_trajectory_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("t,px,py,pz", 0) != 0)
        throw std::runtime_error("trajectory file: bad header in " + path);
    Trajectory traj;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        BallState s;
        double* fields[10] = {&s.t,          &s.position.x, &s.position.y, &s.position.z,
                              &s.velocity.x, &s.velocity.y, &s.velocity.z, &s.omega.x,
                              &s.omega.y,    &s.omega.z};
        std::stringstream ss(line);
        std::string cell;
        for (int i = 0; i < 10; ++i) {
            if (!std::getline(ss, cell, ','))
                throw std::runtime_error("trajectory file: short row in " + path);
            *fields[i] = std::stod(cell);
        }
        if (!traj.states.empty() && s.t <= traj.states.back().t)
            throw std::runtime_error("trajectory file: non-increasing timestamps");
        traj.states.push_back(s);
    }
    return traj;
}

}  // namespace ttv
