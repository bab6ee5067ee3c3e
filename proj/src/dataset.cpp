#include "ttv/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace ttv {

namespace {

constexpr double kDeg = M_PI / 180.0;

// world->camera look-at with z-up world and y-down camera convention.
Pose look_at(const Vec3& position, const Vec3& target) {
    Vec3 f = (target - position).normalized();
    Vec3 down{0, 0, -1};
    Vec3 r = down.cross(f).normalized();
    Vec3 d = f.cross(r);
    std::array<double, 9> m{r.x, r.y, r.z, d.x, d.y, d.z, f.x, f.y, f.z};
    Rotation rot = Rotation::from_matrix(m);
    return {rot, -(rot.rotate(position))};
}

Vec3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    while (true) {
        Vec3 v{g(rng), g(rng), g(rng)};
        double n = v.norm();
        if (n > 1e-6) return v / n;
    }
}

Rotation random_rotation(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> angle(0.0, M_PI);
    return Rotation::from_axis_angle(random_unit(rng), angle(rng));
}

}  // namespace

Rig reference_rig() {
    Rig rig;
    rig.gauge = 0;

    auto frame_cam = [&](const std::string& name, const Vec3& pos, int idx) {
        CameraModel c;
        c.name = name;
        c.kind = CameraKind::frame;
        c.fps = 140.0;
        c.intrinsics.width = 1280;
        c.intrinsics.height = 1024;
        c.intrinsics.fx = 1100.0 + 6.0 * idx;
        c.intrinsics.fy = 1102.0 + 5.0 * idx;
        c.intrinsics.cx = 639.5 - 2.0 * idx;
        c.intrinsics.cy = 511.5 + 1.5 * idx;
        c.intrinsics.distortion = {-0.11 + 0.01 * idx, 0.026, 4e-4, -3e-4};
        c.pose = look_at(pos, {0.0, 0.0, 0.25});
        return c;
    };
    auto event_cam = [&](const std::string& name, const Vec3& pos, int idx) {
        CameraModel c;
        c.name = name;
        c.kind = CameraKind::event;
        c.intrinsics.width = 1280;
        c.intrinsics.height = 720;
        c.intrinsics.fx = 1200.0 + 4.0 * idx;
        c.intrinsics.fy = 1198.0 + 6.0 * idx;
        c.intrinsics.cx = 639.5 + 1.0 * idx;
        c.intrinsics.cy = 359.5 - 1.0 * idx;
        c.intrinsics.distortion = {-0.09 + 0.008 * idx, 0.021, -2e-4, 3e-4};
        c.pose = look_at(pos, {0.0, 0.0, 0.3});
        return c;
    };

    rig.cameras.push_back(frame_cam("frame_0", {1.8, 1.7, 1.5}, 0));
    rig.cameras.push_back(frame_cam("frame_1", {1.8, -1.7, 1.6}, 1));
    rig.cameras.push_back(frame_cam("frame_2", {-1.8, 1.7, 1.45}, 2));
    rig.cameras.push_back(frame_cam("frame_3", {-1.8, -1.7, 1.55}, 3));
    rig.cameras.push_back(event_cam("event_0", {2.45, 0.1, 1.25}, 0));
    rig.cameras.push_back(event_cam("event_1", {-2.45, -0.1, 1.2}, 1));
    rig.validate();
    return rig;
}

namespace {

double spin_phase(double rate0_rps, double k, double t) {
    if (k > 1e-12) return 2.0 * M_PI * rate0_rps * (1.0 - std::exp(-k * t)) / k;
    return 2.0 * M_PI * rate0_rps * t;
}

}  // namespace

OrientationTrack make_decaying_track(const Vec3& axis, double rate0_rps, double damping_k,
                                     double fps, int n_frames, uint64_t noise_seed,
                                     double noise_deg) {
    Vec3 u = axis.normalized();
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> g(0.0, noise_deg * kDeg);
    OrientationTrack track;
    for (int i = 0; i < n_frames; ++i) {
        double t = i / fps;
        Rotation r = Rotation::from_axis_angle(u, spin_phase(rate0_rps, damping_k, t));
        if (noise_deg > 0.0) {
            double a = g(rng);
            r = Rotation::from_axis_angle(random_unit(rng), a) * r;
        }
        track.samples.push_back({t, r, 0});
    }
    return track;
}

std::vector<BallImage> render_spin_sequence(const DotPattern& pattern, const Vec3& axis,
                                            double rate0_rps, double damping_k, double fps,
                                            int n_frames, int resolution, uint64_t seed,
                                            double orientation_noise_deg) {
    Vec3 u = axis.normalized();
    std::mt19937_64 rng(seed);
    Rotation base = random_rotation(rng);
    std::normal_distribution<double> g(0.0, orientation_noise_deg * kDeg);
    std::vector<BallImage> images;
    for (int i = 0; i < n_frames; ++i) {
        double t = i / fps;
        Rotation r = Rotation::from_axis_angle(u, spin_phase(rate0_rps, damping_k, t)) * base;
        if (orientation_noise_deg > 0.0)
            r = Rotation::from_axis_angle(random_unit(rng), g(rng)) * r;
        images.push_back(render_ball(r, pattern, resolution, {0, 0, 1}, t));
    }
    return images;
}

SpinBenchmarkRow run_spin_case(const DotPattern& pattern, const Vec3& axis, double rate_rps,
                               double damping_k, double fps, int n_frames, int resolution,
                               uint64_t seed, double orientation_noise_deg) {
    SpinBenchmarkRow row;
    row.true_rate_rps = rate_rps;
    row.true_axis = axis.normalized();
    auto images = render_spin_sequence(pattern, axis, rate_rps, damping_k, fps, n_frames,
                                       resolution, seed, orientation_noise_deg);
    try {
        row.estimate = estimate_spin_from_images(images, pattern);
    } catch (const TooFewSamples&) {
        row.failed = true;
        return row;
    }
    row.rate_error_rel = std::abs(row.estimate.rate0 - rate_rps) / rate_rps;
    row.axis_error_deg = angle_between(row.estimate.axis, row.true_axis) / kDeg;
    return row;
}

std::vector<WandPose> random_wand_poses(int count, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(-0.7, 0.7), uy(-0.5, 0.5), uz(0.4, 1.3);
    std::vector<WandPose> poses;
    for (int i = 0; i < count; ++i) {
        WandPose p;
        p.t = static_cast<double>(i);
        p.point = {ux(rng), uy(rng), uz(rng)};
        p.direction = random_unit(rng);
        poses.push_back(p);
    }
    return poses;
}

// ------------------------------------------------------------- ball rendering

EventStream render_ball_events(const Trajectory& traj, const CameraModel& camera, double t_begin,
                               double t_end, const SnnDatasetParams& params) {
    const int w = camera.intrinsics.width, h = camera.intrinsics.height;
    IntensityFrame frame;
    frame.width = w;
    frame.height = h;
    frame.pixels.assign(static_cast<size_t>(w) * h,
                        static_cast<float>(params.background_intensity));

    EventCamera evcam(w, h, params.contrast, params.refractory_us);
    const double dt = 1.0 / params.internal_fps;

    struct Disk {
        double cx, cy, r;
        bool visible;
    };
    auto disk_at = [&](double t) {
        Disk d{0, 0, 0, false};
        Vec3 p = trajectory_position(traj, t);
        Vec3 pc = camera.pose.apply(p);
        if (pc.z <= 0.2) return d;
        auto px = project(p, camera);
        if (!px) return d;
        d.cx = px->x;
        d.cy = px->y;
        d.r = camera.intrinsics.fx * 0.02 / pc.z;  // ball radius 0.02 m
        d.visible = d.cx > -d.r && d.cy > -d.r && d.cx < w + d.r && d.cy < h + d.r;
        return d;
    };
    auto disk_rect = [&](const Disk& d) {
        PixelRect rect;
        rect.x0 = std::max(0, static_cast<int>(std::floor(d.cx - d.r - 2)));
        rect.y0 = std::max(0, static_cast<int>(std::floor(d.cy - d.r - 2)));
        rect.x1 = std::min(w, static_cast<int>(std::ceil(d.cx + d.r + 3)));
        rect.y1 = std::min(h, static_cast<int>(std::ceil(d.cy + d.r + 3)));
        return rect;
    };
    auto fill_rect = [&](const PixelRect& rect, float value) {
        for (int y = rect.y0; y < rect.y1; ++y)
            for (int x = rect.x0; x < rect.x1; ++x) frame.at(x, y) = value;
    };
    auto draw_disk = [&](const Disk& d) {
        PixelRect rect = disk_rect(d);
        for (int y = rect.y0; y < rect.y1; ++y)
            for (int x = rect.x0; x < rect.x1; ++x) {
                double dist = std::hypot(x - d.cx, y - d.cy);
                double cover = std::clamp(d.r - dist + 0.5, 0.0, 1.0);  // 1 px soft edge
                if (cover <= 0.0) continue;
                frame.at(x, y) = static_cast<float>(params.background_intensity * (1.0 - cover) +
                                                    params.ball_intensity * cover);
            }
    };

    Disk prev{0, 0, 0, false};
    bool first = true;
    for (double t = t_begin; t <= t_end + 1e-12; t += dt) {
        Disk cur = disk_at(t);
        PixelRect dirty{w, h, 0, 0};
        bool any = false;
        if (prev.visible) {
            PixelRect r0 = disk_rect(prev);
            fill_rect(r0, static_cast<float>(params.background_intensity));
            dirty = r0;
            any = true;
        }
        if (cur.visible) {
            draw_disk(cur);
            PixelRect r1 = disk_rect(cur);
            if (any) {
                dirty.x0 = std::min(dirty.x0, r1.x0);
                dirty.y0 = std::min(dirty.y0, r1.y0);
                dirty.x1 = std::max(dirty.x1, r1.x1);
                dirty.y1 = std::max(dirty.y1, r1.y1);
            } else {
                dirty = r1;
            }
            any = true;
        }
        frame.t = t;
        if (first) {
            evcam.push_frame(frame);
            first = false;
        } else if (any) {
            evcam.push_frame(frame, dirty);
        }
        prev = cur;
    }
    return evcam.take_stream();
}

std::vector<EventWindow> make_snn_event_windows(const Rig& rig, const SnnDatasetParams& params) {
    std::vector<int> event_cams;
    for (size_t c = 0; c < rig.cameras.size(); ++c)
        if (rig.cameras[c].kind == CameraKind::event) event_cams.push_back(static_cast<int>(c));
    if (event_cams.empty()) throw std::invalid_argument("rig has no event cameras");

    std::mt19937_64 rng(params.seed);
    std::uniform_real_distribution<double> px0(-1.5, -0.9), py0(-0.6, 0.6), pz0(0.25, 0.6);
    std::uniform_real_distribution<double> vx(3.0, 6.5), vy(-2.0, 2.0), vz(0.8, 3.0);
    std::uniform_real_distribution<double> rate(20.0, 120.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    PhysicsParams phys;
    std::vector<EventWindow> windows;
    const double window_s = params.window_us * 1e-6;
    int flip = 0;

    while (static_cast<int>(windows.size()) < params.n_windows) {
        BallState s0;
        double side = (flip % 2 == 0) ? 1.0 : -1.0;
        s0.position = {side * px0(rng), py0(rng), pz0(rng)};
        s0.velocity = {-side * vx(rng), vy(rng), vz(rng)};
        s0.omega = random_unit(rng) * (rate(rng) * 2.0 * M_PI);
        Trajectory traj = simulate(s0, phys, 0.85, 1e-3);

        int cam_idx = event_cams[flip % event_cams.size()];
        ++flip;
        const auto& cam = rig.cameras[cam_idx];

        // Times where the ball projects well inside the sensor and above the
        // table plane.
        std::vector<double> good;
        for (const auto& st : traj.states) {
            if (st.position.z < 0.05) continue;
            auto px = project(st.position, cam);
            if (!px) continue;
            double margin = 40.0;
            if (px->x < margin || px->y < margin || px->x >= cam.intrinsics.width - margin ||
                px->y >= cam.intrinsics.height - margin)
                continue;
            good.push_back(st.t);
        }
        if (good.size() < 50) continue;

        double lo = good.front(), hi = good.back() - window_s;
        if (hi <= lo) continue;
        int per_traj = 4;
        for (int k = 0; k < per_traj && static_cast<int>(windows.size()) < params.n_windows;
             ++k) {
            double t0 = lo + (hi - lo) * unit(rng);
            // The whole window must stay inside the good span (no gaps in
            // `good` happen in practice for these flights).
            EventStream stream =
                render_ball_events(traj, cam, t0 - 2e-3, t0 + window_s + 1e-3, params);

            uint32_t t0_us = static_cast<uint32_t>(std::llround(t0 * 1e6));
            int lx, ly;
            try {
                auto [gx, gy] = ground_truth_label(traj, cam, t0_us, params.window_us);
                lx = gx;
                ly = gy;
            } catch (const BallNotVisible&) {
                continue;
            }

            EventWindow win;
            win.window_us = params.window_us;
            win.label_x = lx;
            win.label_y = ly;
            win.events.width = stream.width;
            win.events.height = stream.height;
            for (const auto& e : stream.events) {
                if (e.t_us < t0_us || e.t_us >= t0_us + params.window_us) continue;
                Event r = e;
                r.t_us = e.t_us - t0_us;
                win.events.events.push_back(r);
            }
            if (static_cast<int>(win.events.events.size()) < params.min_events_per_window)
                continue;
            if (params.noise_rate_per_px_s > 0.0)
                inject_uniform_noise(win.events, params.noise_rate_per_px_s, 0, params.window_us,
                                     rng());
            windows.push_back(std::move(win));
        }
    }
    return windows;
}

snn::Dataset compile_snn_dataset(const std::vector<EventWindow>& windows, int time_steps) {
    snn::Dataset data;
    for (const auto& w : windows) {
        auto frames = accumulate(w.events, 0, w.window_us, time_steps);
        snn::Sample s;
        s.input = snn::spike_input_from_frames(frames);
        s.label_x = w.label_x;
        s.label_y = w.label_y;
        data.samples.push_back(std::move(s));
    }
    return data;
}

void save_event_windows(const std::vector<EventWindow>& windows, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "events");
    std::ofstream labels(fs::path(dir) / "labels.csv");
    if (!labels) throw std::runtime_error("cannot write labels.csv in " + dir);
    labels << "index,window_us,x,y\n";
    char name[64];
    for (size_t i = 0; i < windows.size(); ++i) {
        std::snprintf(name, sizeof(name), "%05zu.evs", i);
        save_events(windows[i].events, (fs::path(dir) / "events" / name).string());
        labels << i << ',' << windows[i].window_us << ',' << windows[i].label_x << ','
               << windows[i].label_y << '\n';
    }
}

std::vector<EventWindow> load_event_windows(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream labels(fs::path(dir) / "labels.csv");
    if (!labels) throw std::runtime_error("cannot read labels.csv in " + dir);
    std::string line;
    if (!std::getline(labels, line) || line.rfind("index,", 0) != 0)
        throw std::runtime_error("labels.csv: bad header");
    std::vector<EventWindow> out;
    char name[64];
    while (std::getline(labels, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        size_t index = std::stoul(cell);
        EventWindow w;
        std::getline(ss, cell, ',');
        w.window_us = static_cast<uint32_t>(std::stoul(cell));
        std::getline(ss, cell, ',');
        w.label_x = std::stoi(cell);
        std::getline(ss, cell, ',');
        w.label_y = std::stoi(cell);
        std::snprintf(name, sizeof(name), "%05zu.evs", index);
        w.events = load_events((fs::path(dir) / "events" / name).string());
        out.push_back(std::move(w));
    }
    return out;
}

}  // namespace ttv
