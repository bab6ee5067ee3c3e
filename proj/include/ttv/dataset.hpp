// Synthetic dataset builders shared by the CLI, the tests and the acceptance
// suite: the reference six-camera rig, spinning-ball image sequences, wand
// pose sampling, and event-window datasets for the detector.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ttv/event_sim.hpp"
#include "ttv/ewand.hpp"
#include "ttv/geometry.hpp"
#include "ttv/physics.hpp"
#include "ttv/snn.hpp"
#include "ttv/spindoe.hpp"

namespace ttv {

// Four 140 fps frame cameras at the corners and two event cameras at the
// sides, all aimed at the table centre; world frame is table-centred, z up.
Rig reference_rig();

// Exact quaternion track of a constant-axis spin with exponential decay
// (rate(t) = rate0 * exp(-k t)). Optional per-sample orientation noise.
OrientationTrack make_decaying_track(const Vec3& axis, double rate0_rps, double damping_k,
                                     double fps, int n_frames, uint64_t noise_seed = 0,
                                     double noise_deg = 0.0);

// Rendered ball image sequence of the same motion, starting from a seeded
// random base orientation.
std::vector<BallImage> render_spin_sequence(const DotPattern& pattern, const Vec3& axis,
                                            double rate0_rps, double damping_k, double fps,
                                            int n_frames, int resolution, uint64_t seed,
                                            double orientation_noise_deg = 0.0);

struct SpinBenchmarkRow {
    double true_rate_rps = 0.0;
    Vec3 true_axis;
    SpinEstimate estimate;
    double rate_error_rel = 0.0;
    double axis_error_deg = 0.0;
    bool failed = false;  // pipeline threw (too few registered frames)
};

SpinBenchmarkRow run_spin_case(const DotPattern& pattern, const Vec3& axis, double rate_rps,
                               double damping_k, double fps, int n_frames, int resolution,
                               uint64_t seed, double orientation_noise_deg = 0.0);

// Wand poses uniformly spread over the shared view volume above the table.
std::vector<WandPose> random_wand_poses(int count, uint64_t seed);

// -------------------------------------------------------------- SNN dataset

struct SnnDatasetParams {
    int n_windows = 2000;
    uint32_t window_us = 48000;  // divisible by each of T = 8, 16, 32
    double contrast = 0.25;
    double refractory_us = 0.0;
    double internal_fps = 2000.0;
    double ball_intensity = 0.9;
    double background_intensity = 0.35;
    double noise_rate_per_px_s = 0.05;  // uniform background events
    int min_events_per_window = 60;
    uint64_t seed = 42;
};

struct EventWindow {
    EventStream events;  // rebased so the window starts at t = 0
    uint32_t window_us = 0;
    int label_x = 0;
    int label_y = 0;
};

// Ball flights over the table seen by the rig's event cameras, chopped into
// labelled windows.
std::vector<EventWindow> make_snn_event_windows(const Rig& rig, const SnnDatasetParams& params);

// Bin windows into spike frames at the given T and pair with labels.
snn::Dataset compile_snn_dataset(const std::vector<EventWindow>& windows, int time_steps);

// Dataset directory: events/NNNNN.evs plus labels.csv (index,window_us,x,y).
void save_event_windows(const std::vector<EventWindow>& windows, const std::string& dir);
std::vector<EventWindow> load_event_windows(const std::string& dir);

// Intensity rendering of a moving ball used by the event-stream generators;
// exposed for tests. Returns events with global trajectory timestamps.
EventStream render_ball_events(const Trajectory& traj, const CameraModel& camera, double t_begin,
                               double t_end, const SnnDatasetParams& params);

}  // namespace ttv
