// Wand-based extrinsic calibration: simulate captures of a three-marker
// blinking-LED wand, identify markers by blink frequency in frame sequences
// and event streams, initialize camera poses from pairwise epipolar geometry,
// and refine with sparse Levenberg-Marquardt bundle adjustment.

#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ttv/event_sim.hpp"
#include "ttv/geometry.hpp"

namespace ttv {

struct WandGeometry {
    // Marker offsets along the wand axis, metres. Asymmetric by requirement
    // (d1 != d2/2) so the triple cannot be mirrored.
    std::array<double, 3> offsets{0.0, 0.24, 0.56};
    // Blink frequencies, Hz, pairwise separated by at least 20%.
    std::array<double, 3> frequencies{125.0, 200.0, 333.0};

    void validate() const;
};

void save_wand(const WandGeometry& w, const std::string& path);
WandGeometry load_wand(const std::string& path);

struct WandPose {
    double t = 0.0;
    Vec3 point;      // marker 0 position, m
    Vec3 direction;  // unit vector along the wand
};

struct MarkerDetection {
    int camera = 0;
    double t = 0.0;  // sample time, s
    Vec2 pixel;
    int marker = -1;  // 0, 1 or 2
    double confidence = 0.0;
};

// Detections file: CSV camera,t,u,v,marker,confidence.
void save_detections_csv(const std::vector<MarkerDetection>& d, const std::string& path);
std::vector<MarkerDetection> load_detections_csv(const std::string& path);

struct BlinkModel {
    double dwell_s = 1.0;          // hold time per wand pose (frame cameras)
    double gap_s = 0.1;            // pause between poses
    double event_window_s = 0.15;  // event recording gate at each dwell start
    double internal_fps = 2000.0;  // intensity sampling rate for the event model
    double blob_radius_px = 3.5;
    double blob_peak = 0.9;
    double blob_background = 0.08;
    double event_contrast = 0.45;
};

// One anonymous blob track over a dwell, as a frame camera sees it.
struct BlobTrack {
    Vec2 center;                // px
    std::vector<uint8_t> lit;   // one flag per frame of the dwell
};

struct FrameCapture {
    double fps = 0.0;
    // [sample][blob]; blob order carries no marker information.
    std::vector<std::vector<BlobTrack>> samples;
};

struct WandCapture {
    Rig rig;  // ground truth
    WandGeometry wand;
    BlinkModel model;
    std::vector<WandPose> poses;               // ground truth, one per sample
    std::vector<double> sample_times;          // dwell start per sample
    std::vector<FrameCapture> frame_captures;  // per camera; empty for event cameras
    std::vector<EventStream> event_streams;    // per camera; empty for frame cameras
};

struct NoVisibility : std::runtime_error {
    explicit NoVisibility(const std::string& what) : std::runtime_error(what) {}
};
struct AmbiguousFrequency : std::runtime_error {
    AmbiguousFrequency() : std::runtime_error("frequency classification margin too small") {}
};

// Simulates frame blob tracks and event streams for the wand held at each
// pose. Gaussian pixel noise sigma is applied once per (camera, sample,
// marker), i.e. at the detection level. Throws NoVisibility when some marker
// never appears in some camera.
WandCapture simulate_wand_capture(const Rig& rig, const WandGeometry& wand,
                                  const std::vector<WandPose>& poses, double noise_sigma_px,
                                  const BlinkModel& model, uint64_t seed);

struct FrequencyClass {
    int marker = -1;
    double confidence = 0.0;
    double measured_rate = 0.0;  // transitions/s (frames) or bursts/s (events)
};

// Frame-camera path: counts on/off transitions per second in the timeline and
// matches against the transition rate each configured frequency would produce
// at this fps (phase-averaged square-wave sampling). The classification bin
// width is the counting resolution 1/window; margins below twice that are
// rejected as AmbiguousFrequency.
FrequencyClass classify_marker_frequency(const std::vector<uint8_t>& on_off_timeline, double fps,
                                         const WandGeometry& wand);

// Event-camera path: positive-polarity burst times (seconds) over `window_s`;
// the burst rate is matched directly against the configured frequencies.
FrequencyClass classify_marker_frequency(const std::vector<double>& positive_burst_times,
                                         double window_s, const WandGeometry& wand);

// Runs frequency classification on every blob/cluster of a capture and emits
// one detection per (camera, sample, marker). Ambiguous blobs are skipped.
std::vector<MarkerDetection> detect_markers(const WandCapture& capture);

struct CalibrationProblem {
    Rig rig;  // intrinsics + kinds; poses are placeholders until initialized
    WandGeometry wand;
    struct Sample {
        double t = 0.0;
        // [camera][marker]
        std::vector<std::array<std::optional<Vec2>, 3>> obs;
    };
    std::vector<Sample> samples;
};

CalibrationProblem build_problem(const Rig& rig, const WandGeometry& wand,
                                 const std::vector<MarkerDetection>& detections);

struct InsufficientCorrespondences : std::runtime_error {
    explicit InsufficientCorrespondences(const std::string& what) : std::runtime_error(what) {}
};
struct DegenerateMotion : std::runtime_error {
    explicit DegenerateMotion(const std::string& what) : std::runtime_error(what) {}
};
struct SingularNormalEquations : std::runtime_error {
    SingularNormalEquations() : std::runtime_error("normal equations are singular") {}
};
struct DivergedOptimization : std::runtime_error {
    DivergedOptimization() : std::runtime_error("optimization diverged") {}
};

// Pairwise essential-matrix initialization (8-point, cheirality check), with
// metric scale from the known wand segment lengths, chained to the gauge
// camera over a maximum-correspondence spanning tree. The returned rig has
// the gauge camera at identity.
Rig initialize_extrinsics(const CalibrationProblem& problem);

struct CalibrationResult {
    Rig rig;  // refined extrinsics; gauge camera pose is identity
    std::vector<int> sample_indices;     // problem samples retained in the BA
    std::vector<WandPose> wand_poses;    // one per retained sample
    std::vector<MeanStd> reprojection;   // per camera, Euclidean px residuals
    bool converged = false;
    int iterations = 0;
    double final_cost = 0.0;
    std::vector<double> cost_history;    // robust cost after each accepted step
};

// Levenberg-Marquardt over camera extrinsics and per-sample wand poses
// (point + unit direction; marker collinearity and scale are enforced by the
// parameterization). Huber loss at 2 px, Schur complement over the wand-pose
// blocks, gauge camera held fixed. Stops when the relative cost change drops
// below 1e-10 or after 200 iterations.
CalibrationResult bundle_adjust(const CalibrationProblem& problem, const Rig& initial);

// Table-style per-camera report: CSV camera,mean,std.
void save_mae_csv(const Rig& rig, const std::vector<MeanStd>& stats, const std::string& path);

}  // namespace ttv
