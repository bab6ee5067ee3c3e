// Camera models, rigid transforms, projection, triangulation and
// reprojection-error metrics shared by the calibration, spin and
// event-simulation code.
//
// All types are immutable values; operations are pure functions and safe to
// call concurrently.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ttv {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double norm() const { return std::sqrt(x * x + y * y); }
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    double squared_norm() const { return dot(*this); }
    Vec3 normalized() const;
    bool finite() const {
        return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
    }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

/// Angle between two directions in radians, in [0, pi]. Inputs need not be
/// unit length.
double angle_between(const Vec3& a, const Vec3& b);

// Unit quaternion, canonicalized so w >= 0 (double cover removed).
class Rotation {
  public:
    Rotation() = default;
    Rotation(double w, double x, double y, double z);

    static Rotation identity() { return {}; }
    static Rotation from_axis_angle(const Vec3& axis, double angle_rad);
    // Rotation vector: axis * angle.
    static Rotation from_rotvec(const Vec3& r);
    // Row-major 3x3 rotation matrix.
    static Rotation from_matrix(const std::array<double, 9>& m);

    double w() const { return w_; }
    double x() const { return x_; }
    double y() const { return y_; }
    double z() const { return z_; }

    Vec3 rotate(const Vec3& v) const;
    Rotation inverse() const { return Rotation(w_, -x_, -y_, -z_); }
    // Composition: (a * b).rotate(v) == a.rotate(b.rotate(v)).
    Rotation operator*(const Rotation& o) const;

    // Axis-angle with angle in [0, pi]. For angle ~ 0 the axis defaults to
    // (1,0,0).
    std::pair<Vec3, double> axis_angle() const;
    double angle() const { return axis_angle().second; }
    // Relative angle between two rotations, radians in [0, pi].
    double angle_to(const Rotation& o) const;
    std::array<double, 9> matrix() const;

  private:
    double w_ = 1.0, x_ = 0.0, y_ = 0.0, z_ = 0.0;
};

// Rigid transform x_out = R * x_in + t. Used as world->camera.
struct Pose {
    Rotation rotation;
    Vec3 translation;

    Vec3 apply(const Vec3& p) const { return rotation.rotate(p) + translation; }
    Pose inverse() const {
        Rotation ri = rotation.inverse();
        return {ri, -ri.rotate(translation)};
    }
    // (a * b).apply(p) == a.apply(b.apply(p))
    Pose operator*(const Pose& o) const {
        return {rotation * o.rotation, rotation.rotate(o.translation) + translation};
    }
    // Origin of the transform expressed in the input frame (camera center for
    // a world->camera pose).
    Vec3 center() const { return -(rotation.inverse().rotate(translation)); }
};

struct CameraIntrinsics {
    double fx = 0.0, fy = 0.0;  // px
    double cx = 0.0, cy = 0.0;  // px
    // Radial-tangential distortion (k1, k2, p1, p2).
    std::array<double, 4> distortion{0, 0, 0, 0};
    int width = 0, height = 0;  // px

    void validate() const;
};

enum class CameraKind { frame, event };

struct CameraModel {
    std::string name;
    CameraIntrinsics intrinsics;
    Pose pose;  // world -> camera
    CameraKind kind = CameraKind::frame;
    double fps = 0.0;  // frame kind only; 0 for event cameras

    void validate() const;
};

struct Rig {
    std::vector<CameraModel> cameras;
    int gauge = 0;  // camera whose pose defines the frame after calibration

    void validate() const;
};

struct BehindCamera : std::runtime_error {
    BehindCamera() : std::runtime_error("point is behind the camera") {}
};
struct InsufficientObservations : std::runtime_error {
    InsufficientObservations()
        : std::runtime_error("triangulation needs at least two observations") {}
};
struct DegenerateGeometry : std::runtime_error {
    explicit DegenerateGeometry(const std::string& what) : std::runtime_error(what) {}
};
struct EmptyInput : std::runtime_error {
    explicit EmptyInput(const std::string& what) : std::runtime_error(what) {}
};

// Distortion in normalized image coordinates.
Vec2 distort(const CameraIntrinsics& intr, const Vec2& normalized);
// Inverse of distort() by fixed-point iteration (10 iterations, tol 1e-10).
Vec2 undistort(const CameraIntrinsics& intr, const Vec2& distorted);
// 2x2 Jacobian of distort() at `normalized`, row-major.
std::array<double, 4> distort_jacobian(const CameraIntrinsics& intr, const Vec2& normalized);

// Pixel coordinates of a world point, or nullopt when the point is at or
// behind the camera plane (z_camera <= 1e-9). Pixels outside the sensor
// bounds are still returned; callers filter.
std::optional<Vec2> project(const Vec3& world_point, const CameraModel& camera);

// Ray through a pixel, returned as the world point at camera depth `depth`.
Vec3 unproject(const CameraModel& camera, const Vec2& pixel, double depth);

struct PixelObservation {
    int camera = 0;  // index into the camera list given alongside
    Vec2 pixel;
};

// DLT estimate refined by a few Gauss-Newton steps on reprojection error.
// Throws InsufficientObservations (< 2 rays) or DegenerateGeometry (all rays
// within 0.1 degrees of parallel).
Vec3 triangulate(const std::vector<CameraModel>& cameras,
                 const std::vector<PixelObservation>& observations);

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;
    int count = 0;
};

// Per-camera mean/std of Euclidean pixel residuals between project(points[i])
// and observations[i]. points and observations are parallel arrays.
std::vector<MeanStd> reprojection_mae(const std::vector<CameraModel>& cameras,
                                      const std::vector<Vec3>& points,
                                      const std::vector<PixelObservation>& observations);

// Rig file I/O, JSON, schema 1. Field names are documented in the README.
std::string rig_to_json(const Rig& rig);
Rig rig_from_json(const std::string& json_text);
void save_rig(const Rig& rig, const std::string& path);
Rig load_rig(const std::string& path);

}  // namespace ttv
