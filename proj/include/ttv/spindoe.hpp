// Dot-pattern spin estimation: render dot-patterned ball images, detect dots,
// register per-frame orientation against the known pattern, unwrap the
// rotation sequence and fit spin axis / rate / damping.

#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ttv/geometry.hpp"
#include "ttv/physics.hpp"

namespace ttv {

struct DotPattern {
    std::vector<Vec3> dots;        // unit directions in the ball body frame
    double dot_radius_deg = 5.0;   // angular radius of a painted dot

    // Enforces: >= 15 dots, pairwise separation >= 2x dot radius, and
    // rotation asymmetry (no nontrivial rotation maps the set onto itself
    // within 1 degree).
    void validate() const;
};

// The 21-dot pattern shipped with the toolkit: seeded Fibonacci-sphere
// sampling with jitter, rotation-asymmetric by construction.
DotPattern default_pattern();

// Pattern file: JSON list of unit vectors plus the dot angular radius.
void save_pattern(const DotPattern& p, const std::string& path);
DotPattern load_pattern(const std::string& path);

struct BallImage {
    int width = 0, height = 0;
    std::vector<float> pixels;   // grayscale, 0..1
    double center_x = 0.0, center_y = 0.0;  // ball center, px
    double radius_px = 0.0;
    double t = 0.0;  // s

    float at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
    float& at(int x, int y) { return pixels[static_cast<size_t>(y) * width + x]; }
};

// Orthographic render of the shaded ball with dots darkened. `orientation`
// maps body-frame directions into the camera-aligned frame; dots are drawn
// only on the camera-facing hemisphere (rotated z > 0.05).
BallImage render_ball(const Rotation& orientation, const DotPattern& pattern, int resolution,
                      const Vec3& light_direction = {0, 0, 1}, double timestamp = 0.0);

// Adaptive threshold + connected components + weighted centroid, centroids
// back-projected onto the sphere (z = sqrt(1 - x^2 - y^2)). Directions are in
// the camera-aligned ball frame; the list may be empty.
std::vector<Vec3> detect_dots(const BallImage& image);

struct OrientationSample {
    double t = 0.0;
    Rotation rotation;  // body -> camera
    int inliers = 0;
};

struct OrientationTrack {
    std::vector<OrientationSample> samples;  // strictly increasing t
};

// Track file: CSV t,qw,qx,qy,qz,inliers.
void save_track_csv(const OrientationTrack& track, const std::string& path);
OrientationTrack load_track_csv(const std::string& path);

struct TooFewDots : std::runtime_error {
    TooFewDots() : std::runtime_error("orientation registration needs >= 3 dots") {}
};
struct NoConsensus : std::runtime_error {
    NoConsensus() : std::runtime_error("no orientation with >= 4 inlier dots") {}
};

struct RegistrationResult {
    Rotation rotation;  // R with R * pattern_i ~ observed_j for inliers
    int inliers = 0;
};

// Correspondence search over observed/pattern triplets matched by pairwise
// angular distance (tolerance 3 degrees), solved with Kabsch on the inlier
// set. A hint rotation short-circuits the search when it already explains the
// observations. Deterministic.
RegistrationResult register_orientation(const std::vector<Vec3>& observed,
                                        const DotPattern& pattern,
                                        const std::optional<Rotation>& hint = std::nullopt);

struct SpinEstimate {
    Vec3 axis{0, 0, 1};     // unit
    double rate0 = 0.0;     // rps at the first track sample
    double damping_k = 0.0; // 1/s
    double residual_deg = 0.0;  // RMS of per-step angle residuals
    bool reliable = false;
};

// Relative rotations between consecutive samples, axis-flip disambiguation by
// axis-consistency voting (the global sign is chosen so the fitted decay is
// physical, preferring the smaller angle on ties), exponential decay fit.
// reliable=false when the mean per-step angle is above 0.9*pi (near the
// half-turn-per-frame limit) or below 0.02*pi (noise floor).
SpinEstimate unwrap_spin(const OrientationTrack& track);

// Full pipeline: detect_dots -> register_orientation (hinted by the previous
// frame) -> unwrap_spin. Frames that fail to register are skipped; throws
// TooFewSamples when fewer than 3 frames register.
SpinEstimate estimate_spin_from_images(const std::vector<BallImage>& images,
                                       const DotPattern& pattern);

std::string spin_estimate_to_json(const SpinEstimate& e);

}  // namespace ttv
