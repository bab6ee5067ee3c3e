#include "ttv/geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ttv {

Vec3 Vec3::normalized() const {
    double n = norm();
    if (n < 1e-300) throw std::domain_error("cannot normalize zero vector");
    return *this / n;
}

double angle_between(const Vec3& a, const Vec3& b) {
    // atan2 form is stable near 0 and pi, unlike acos of the dot product.
    double c = a.dot(b);
    double s = a.cross(b).norm();
    return std::atan2(s, c);
}

Rotation::Rotation(double w, double x, double y, double z) {
    double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (n < 1e-300) throw std::domain_error("zero quaternion");
    double sign = w < 0.0 ? -1.0 : 1.0;
    w_ = sign * w / n;
    x_ = sign * x / n;
    y_ = sign * y / n;
    z_ = sign * z / n;
}

Rotation Rotation::from_axis_angle(const Vec3& axis, double angle_rad) {
    Vec3 u = axis.normalized();
    double h = 0.5 * angle_rad;
    double s = std::sin(h);
    return Rotation(std::cos(h), u.x * s, u.y * s, u.z * s);
}

Rotation Rotation::from_rotvec(const Vec3& r) {
    double angle = r.norm();
    if (angle < 1e-12) {
        // First-order expansion keeps the map smooth through zero.
        return Rotation(1.0, 0.5 * r.x, 0.5 * r.y, 0.5 * r.z);
    }
    return from_axis_angle(r, angle);
}

Rotation Rotation::from_matrix(const std::array<double, 9>& m) {
    // Shepperd's method: pick the largest diagonal combination.
    double t0 = 1.0 + m[0] + m[4] + m[8];
    double t1 = 1.0 + m[0] - m[4] - m[8];
    double t2 = 1.0 - m[0] + m[4] - m[8];
    double t3 = 1.0 - m[0] - m[4] + m[8];
    double w, x, y, z;
    if (t0 >= t1 && t0 >= t2 && t0 >= t3) {
        double s = 0.5 / std::sqrt(t0);
        w = 0.25 / s;
        x = (m[7] - m[5]) * s;
        y = (m[2] - m[6]) * s;
        z = (m[3] - m[1]) * s;
    } else if (t1 >= t2 && t1 >= t3) {
        double s = 0.5 / std::sqrt(t1);
        x = 0.25 / s;
        w = (m[7] - m[5]) * s;
        y = (m[1] + m[3]) * s;
        z = (m[2] + m[6]) * s;
    } else if (t2 >= t3) {
        double s = 0.5 / std::sqrt(t2);
        y = 0.25 / s;
        w = (m[2] - m[6]) * s;
        x = (m[1] + m[3]) * s;
        z = (m[5] + m[7]) * s;
    } else {
        double s = 0.5 / std::sqrt(t3);
        z = 0.25 / s;
        w = (m[3] - m[1]) * s;
        x = (m[2] + m[6]) * s;
        y = (m[5] + m[7]) * s;
    }
    return Rotation(w, x, y, z);
}

Vec3 Rotation::rotate(const Vec3& v) const {
    // v' = v + 2w(q x v) + 2 q x (q x v)
    Vec3 q{x_, y_, z_};
    Vec3 t = q.cross(v) * 2.0;
    return v + t * w_ + q.cross(t);
}

Rotation Rotation::operator*(const Rotation& o) const {
    return Rotation(w_ * o.w_ - x_ * o.x_ - y_ * o.y_ - z_ * o.z_,
                    w_ * o.x_ + x_ * o.w_ + y_ * o.z_ - z_ * o.y_,
                    w_ * o.y_ - x_ * o.z_ + y_ * o.w_ + z_ * o.x_,
                    w_ * o.z_ + x_ * o.y_ - y_ * o.x_ + z_ * o.w_);
}

std::pair<Vec3, double> Rotation::axis_angle() const {
    double s = std::sqrt(x_ * x_ + y_ * y_ + z_ * z_);
    double angle = 2.0 * std::atan2(s, std::abs(w_));
    if (s < 1e-300) return {{1.0, 0.0, 0.0}, 0.0};
    return {Vec3{x_ / s, y_ / s, z_ / s}, angle};
}

double Rotation::angle_to(const Rotation& o) const {
    return (inverse() * o).angle();
}

std::array<double, 9> Rotation::matrix() const {
    double xx = x_ * x_, yy = y_ * y_, zz = z_ * z_;
    double wx = w_ * x_, wy = w_ * y_, wz = w_ * z_;
    double xy = x_ * y_, xz = x_ * z_, yz = y_ * z_;
    return {1 - 2 * (yy + zz), 2 * (xy - wz),     2 * (xz + wy),
            2 * (xy + wz),     1 - 2 * (xx + zz), 2 * (yz - wx),
            2 * (xz - wy),     2 * (yz + wx),     1 - 2 * (xx + yy)};
}

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("fx, fy must be > 0");
    if (width <= 0 || height <= 0) throw std::invalid_argument("sensor size must be > 0");
    if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height)
        throw std::invalid_argument("principal point outside sensor");
}

void CameraModel::validate() const {
    intrinsics.validate();
    if (kind == CameraKind::event && fps != 0.0)
        throw std::invalid_argument("event cameras have no fps");
    if (kind == CameraKind::frame && !(fps > 0.0))
        throw std::invalid_argument("frame cameras need fps > 0");
}

void Rig::validate() const {
    if (cameras.empty()) throw std::invalid_argument("rig has no cameras");
    if (gauge < 0 || gauge >= static_cast<int>(cameras.size()))
        throw std::invalid_argument("gauge camera index out of range");
    for (const auto& c : cameras) c.validate();
}

Vec2 distort(const CameraIntrinsics& intr, const Vec2& n) {
    const auto [k1, k2, p1, p2] = intr.distortion;
    double r2 = n.x * n.x + n.y * n.y;
    double radial = 1.0 + k1 * r2 + k2 * r2 * r2;
    return {n.x * radial + 2.0 * p1 * n.x * n.y + p2 * (r2 + 2.0 * n.x * n.x),
            n.y * radial + p1 * (r2 + 2.0 * n.y * n.y) + 2.0 * p2 * n.x * n.y};
}

Vec2 undistort(const CameraIntrinsics& intr, const Vec2& d) {
    Vec2 n = d;
    for (int i = 0; i < 10; ++i) {
        Vec2 delta = distort(intr, n) - n;  // distortion offset at current estimate
        Vec2 next{d.x - delta.x, d.y - delta.y};
        if (std::abs(next.x - n.x) < 1e-10 && std::abs(next.y - n.y) < 1e-10) {
            n = next;
            break;
        }
        n = next;
    }
    return n;
}

std::array<double, 4> distort_jacobian(const CameraIntrinsics& intr, const Vec2& n) {
    const auto [k1, k2, p1, p2] = intr.distortion;
    double r2 = n.x * n.x + n.y * n.y;
    double radial = 1.0 + k1 * r2 + k2 * r2 * r2;
    double dr = k1 + 2.0 * k2 * r2;  // d(radial)/d(r2)
    double offdiag = 2.0 * n.x * n.y * dr + 2.0 * p1 * n.x + 2.0 * p2 * n.y;
    return {radial + 2.0 * n.x * n.x * dr + 2.0 * p1 * n.y + 6.0 * p2 * n.x,
            offdiag, offdiag,
            radial + 2.0 * n.y * n.y * dr + 6.0 * p1 * n.y + 2.0 * p2 * n.x};
}

std::optional<Vec2> project(const Vec3& world_point, const CameraModel& camera) {
    if (!world_point.finite()) throw std::invalid_argument("non-finite point");
    Vec3 pc = camera.pose.apply(world_point);
    if (pc.z <= 1e-9) return std::nullopt;
    Vec2 n{pc.x / pc.z, pc.y / pc.z};
    Vec2 d = distort(camera.intrinsics, n);
    const auto& K = camera.intrinsics;
    return Vec2{K.fx * d.x + K.cx, K.fy * d.y + K.cy};
}

Vec3 unproject(const CameraModel& camera, const Vec2& pixel, double depth) {
    const auto& K = camera.intrinsics;
    Vec2 d{(pixel.x - K.cx) / K.fx, (pixel.y - K.cy) / K.fy};
    Vec2 n = undistort(K, d);
    Vec3 pc{n.x * depth, n.y * depth, depth};
    return camera.pose.inverse().apply(pc);
}

namespace {

Vec3 ray_direction_world(const CameraModel& cam, const Vec2& pixel) {
    const auto& K = cam.intrinsics;
    Vec2 n = undistort(K, {(pixel.x - K.cx) / K.fx, (pixel.y - K.cy) / K.fy});
    return cam.pose.rotation.inverse().rotate(Vec3{n.x, n.y, 1.0}).normalized();
}

}  // namespace

Vec3 triangulate(const std::vector<CameraModel>& cameras,
                 const std::vector<PixelObservation>& observations) {
    if (observations.size() < 2) throw InsufficientObservations();
    for (const auto& o : observations)
        if (o.camera < 0 || o.camera >= static_cast<int>(cameras.size()))
            throw std::out_of_range("observation camera index");

    constexpr double kMinRayAngle = 0.1 * M_PI / 180.0;
    double max_angle = 0.0;
    std::vector<Vec3> rays;
    rays.reserve(observations.size());
    for (const auto& o : observations) rays.push_back(ray_direction_world(cameras[o.camera], o.pixel));
    for (size_t i = 0; i < rays.size(); ++i)
        for (size_t j = i + 1; j < rays.size(); ++j)
            max_angle = std::max(max_angle, angle_between(rays[i], rays[j]));
    if (max_angle < kMinRayAngle)
        throw DegenerateGeometry("triangulation rays are nearly parallel");

    // DLT on undistorted normalized coordinates.
    Eigen::MatrixXd A(2 * observations.size(), 4);
    for (size_t i = 0; i < observations.size(); ++i) {
        const auto& cam = cameras[observations[i].camera];
        const auto& K = cam.intrinsics;
        Vec2 n = undistort(K, {(observations[i].pixel.x - K.cx) / K.fx,
                               (observations[i].pixel.y - K.cy) / K.fy});
        auto R = cam.pose.rotation.matrix();
        const Vec3& t = cam.pose.translation;
        // P = [R | t] rows
        double P0[4] = {R[0], R[1], R[2], t.x};
        double P1[4] = {R[3], R[4], R[5], t.y};
        double P2[4] = {R[6], R[7], R[8], t.z};
        for (int c = 0; c < 4; ++c) {
            A(2 * i, c) = n.x * P2[c] - P0[c];
            A(2 * i + 1, c) = n.y * P2[c] - P1[c];
        }
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinV);
    Eigen::Vector4d h = svd.matrixV().col(3);
    if (std::abs(h(3)) < 1e-14) throw DegenerateGeometry("point at infinity");
    Vec3 p{h(0) / h(3), h(1) / h(3), h(2) / h(3)};

    // Gauss-Newton refinement on full (distorted) reprojection error.
    for (int iter = 0; iter < 10; ++iter) {
        Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
        Eigen::Vector3d g = Eigen::Vector3d::Zero();
        double cost = 0.0;
        for (const auto& o : observations) {
            const auto& cam = cameras[o.camera];
            const auto& K = cam.intrinsics;
            Vec3 pc = cam.pose.apply(p);
            if (pc.z <= 1e-9) continue;
            Vec2 n{pc.x / pc.z, pc.y / pc.z};
            Vec2 d = distort(K, n);
            Eigen::Vector2d r(K.fx * d.x + K.cx - o.pixel.x, K.fy * d.y + K.cy - o.pixel.y);
            cost += r.squaredNorm();

            auto Jd = distort_jacobian(K, n);
            Eigen::Matrix2d Jdist;
            Jdist << Jd[0], Jd[1], Jd[2], Jd[3];
            Eigen::Matrix2d Jk;
            Jk << K.fx, 0, 0, K.fy;
            Eigen::Matrix<double, 2, 3> Jn;
            Jn << 1.0 / pc.z, 0, -pc.x / (pc.z * pc.z), 0, 1.0 / pc.z, -pc.y / (pc.z * pc.z);
            auto Rm = cam.pose.rotation.matrix();
            Eigen::Matrix3d R;
            R << Rm[0], Rm[1], Rm[2], Rm[3], Rm[4], Rm[5], Rm[6], Rm[7], Rm[8];
            Eigen::Matrix<double, 2, 3> J = Jk * Jdist * Jn * R;
            H += J.transpose() * J;
            g += J.transpose() * r;
        }
        Eigen::Vector3d step = H.ldlt().solve(-g);
        p = {p.x + step(0), p.y + step(1), p.z + step(2)};
        if (step.norm() < 1e-12) break;
        (void)cost;
    }
    return p;
}

std::vector<MeanStd> reprojection_mae(const std::vector<CameraModel>& cameras,
                                      const std::vector<Vec3>& points,
                                      const std::vector<PixelObservation>& observations) {
    if (points.empty() || observations.empty())
        throw EmptyInput("reprojection_mae: no detections");
    if (points.size() != observations.size())
        throw std::invalid_argument("points and observations must be parallel");

    std::vector<std::vector<double>> residuals(cameras.size());
    for (size_t i = 0; i < points.size(); ++i) {
        const auto& o = observations[i];
        if (o.camera < 0 || o.camera >= static_cast<int>(cameras.size()))
            throw std::out_of_range("observation camera index");
        auto px = project(points[i], cameras[o.camera]);
        if (!px) throw BehindCamera();
        residuals[o.camera].push_back((*px - o.pixel).norm());
    }

    std::vector<MeanStd> out(cameras.size());
    for (size_t c = 0; c < cameras.size(); ++c) {
        const auto& r = residuals[c];
        out[c].count = static_cast<int>(r.size());
        if (r.empty()) continue;
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= r.size();
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        // Sample std; zero for a single residual.
        out[c].mean = mean;
        out[c].stddev = r.size() > 1 ? std::sqrt(var / (r.size() - 1)) : 0.0;
    }
    return out;
}

std::string rig_to_json(const Rig& rig) {
    nlohmann::json j;
    j["schema"] = 1;
    j["gauge"] = rig.gauge;
    j["cameras"] = nlohmann::json::array();
    for (const auto& c : rig.cameras) {
        nlohmann::json jc;
        jc["name"] = c.name;
        jc["kind"] = c.kind == CameraKind::frame ? "frame" : "event";
        if (c.kind == CameraKind::frame) jc["fps"] = c.fps;
        jc["width"] = c.intrinsics.width;
        jc["height"] = c.intrinsics.height;
        jc["fx"] = c.intrinsics.fx;
        jc["fy"] = c.intrinsics.fy;
        jc["cx"] = c.intrinsics.cx;
        jc["cy"] = c.intrinsics.cy;
        jc["dist"] = c.intrinsics.distortion;
        jc["q"] = {c.pose.rotation.w(), c.pose.rotation.x(), c.pose.rotation.y(),
                   c.pose.rotation.z()};
        jc["t"] = {c.pose.translation.x, c.pose.translation.y, c.pose.translation.z};
        j["cameras"].push_back(jc);
    }
    return j.dump(2) + "\n";
}

Rig rig_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (j.value("schema", 0) != 1) throw std::runtime_error("rig file: unsupported schema");
    Rig rig;
    rig.gauge = j.value("gauge", 0);
    for (const auto& jc : j.at("cameras")) {
        CameraModel c;
        c.name = jc.value("name", "");
        std::string kind = jc.at("kind").get<std::string>();
        if (kind == "frame")
            c.kind = CameraKind::frame;
        else if (kind == "event")
            c.kind = CameraKind::event;
        else
            throw std::runtime_error("rig file: unknown camera kind '" + kind + "'");
        if (c.kind == CameraKind::frame)
            c.fps = jc.at("fps").get<double>();
        else if (jc.contains("fps"))
            throw std::runtime_error("rig file: event camera must not set fps");
        c.intrinsics.width = jc.at("width").get<int>();
        c.intrinsics.height = jc.at("height").get<int>();
        c.intrinsics.fx = jc.at("fx").get<double>();
        c.intrinsics.fy = jc.at("fy").get<double>();
        c.intrinsics.cx = jc.at("cx").get<double>();
        c.intrinsics.cy = jc.at("cy").get<double>();
        c.intrinsics.distortion = jc.at("dist").get<std::array<double, 4>>();
        auto q = jc.at("q").get<std::array<double, 4>>();
        auto t = jc.at("t").get<std::array<double, 3>>();
        c.pose.rotation = Rotation(q[0], q[1], q[2], q[3]);
        c.pose.translation = {t[0], t[1], t[2]};
        rig.cameras.push_back(std::move(c));
    }
    rig.validate();
    return rig;
}

void save_rig(const Rig& rig, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << rig_to_json(rig);
}

Rig load_rig(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return rig_from_json(ss.str());
}

}  // namespace ttv
