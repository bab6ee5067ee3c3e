#include "ttv/ewand.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <queue>
#include <random>
#include <sstream>

#include "json.hpp"

namespace ttv {

namespace {

inline bool square_wave_on(double frequency, double t) {
    double phase = frequency * t;
    return phase - std::floor(phase) < 0.5;
}

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

Eigen::Matrix3d to_eigen(const Rotation& r) {
    auto m = r.matrix();
    Eigen::Matrix3d out;
    out << m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8];
    return out;
}

Rotation from_eigen(const Eigen::Matrix3d& m) {
    return Rotation::from_matrix(
        {m(0, 0), m(0, 1), m(0, 2), m(1, 0), m(1, 1), m(1, 2), m(2, 0), m(2, 1), m(2, 2)});
}

}  // namespace

void WandGeometry::validate() const {
    if (!(offsets[0] == 0.0 && offsets[1] > 0.0 && offsets[2] > offsets[1]))
        throw std::invalid_argument("wand offsets must be 0 < d1 < d2");
    if (std::abs(offsets[1] - 0.5 * offsets[2]) < 1e-6 * offsets[2])
        throw std::invalid_argument("wand spacing must be asymmetric (d1 != d2/2)");
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) {
            double lo = std::min(frequencies[i], frequencies[j]);
            double hi = std::max(frequencies[i], frequencies[j]);
            if (!(lo > 0.0) || hi - lo < 0.2 * lo)
                throw std::invalid_argument("blink frequencies must be >= 20% apart");
        }
}

void save_wand(const WandGeometry& w, const std::string& path) {
    nlohmann::json j;
    j["offsets_m"] = w.offsets;
    j["frequencies_hz"] = w.frequencies;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << j.dump(2) << "\n";
}

WandGeometry load_wand(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    WandGeometry w;
    w.offsets = j.at("offsets_m").get<std::array<double, 3>>();
    w.frequencies = j.at("frequencies_hz").get<std::array<double, 3>>();
    w.validate();
    return w;
}

void save_detections_csv(const std::vector<MarkerDetection>& d, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "camera,t,u,v,marker,confidence\n";
    char line[256];
    for (const auto& m : d) {
        std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%d,%.17g\n", m.camera, m.t,
                      m.pixel.x, m.pixel.y, m.marker, m.confidence);
        f << line;
    }
}

std::vector<MarkerDetection> load_detections_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("camera,t,u,v", 0) != 0)
        throw std::runtime_error("detections file: bad header");
    std::vector<MarkerDetection> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        MarkerDetection m;
        std::getline(ss, cell, ',');
        m.camera = std::stoi(cell);
        std::getline(ss, cell, ',');
        m.t = std::stod(cell);
        std::getline(ss, cell, ',');
        m.pixel.x = std::stod(cell);
        std::getline(ss, cell, ',');
        m.pixel.y = std::stod(cell);
        std::getline(ss, cell, ',');
        m.marker = std::stoi(cell);
        if (std::getline(ss, cell, ',')) m.confidence = std::stod(cell);
        out.push_back(m);
    }
    return out;
}

// ---------------------------------------------------------------- capture sim

WandCapture simulate_wand_capture(const Rig& rig, const WandGeometry& wand,
                                  const std::vector<WandPose>& poses, double noise_sigma_px,
                                  const BlinkModel& model, uint64_t seed) {
    rig.validate();
    wand.validate();
    if (poses.size() < 10) throw std::invalid_argument("need >= 10 wand poses");

    const int n_cams = static_cast<int>(rig.cameras.size());
    const int n_samples = static_cast<int>(poses.size());

    WandCapture cap;
    cap.rig = rig;
    cap.wand = wand;
    cap.model = model;
    cap.poses = poses;
    cap.frame_captures.resize(n_cams);
    cap.event_streams.resize(n_cams);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // Noisy projected centers, drawn in a fixed order: [sample][camera][marker].
    std::vector<std::vector<std::array<std::optional<Vec2>, 3>>> centers(n_samples);
    std::vector<std::vector<int>> visible_count(n_cams, std::vector<int>(3, 0));
    for (int s = 0; s < n_samples; ++s) {
        centers[s].resize(n_cams);
        for (int c = 0; c < n_cams; ++c) {
            const auto& cam = rig.cameras[c];
            for (int m = 0; m < 3; ++m) {
                Vec3 world = poses[s].point + poses[s].direction * wand.offsets[m];
                double nx = gauss(rng), ny = gauss(rng);
                auto px = project(world, cam);
                if (!px) continue;
                Vec2 noisy{px->x + noise_sigma_px * nx, px->y + noise_sigma_px * ny};
                double margin = model.blob_radius_px + 1.0;
                if (noisy.x < margin || noisy.y < margin ||
                    noisy.x >= cam.intrinsics.width - margin ||
                    noisy.y >= cam.intrinsics.height - margin)
                    continue;
                centers[s][c][m] = noisy;
                ++visible_count[c][m];
            }
        }
    }
    for (int c = 0; c < n_cams; ++c)
        for (int m = 0; m < 3; ++m)
            if (visible_count[c][m] == 0)
                throw NoVisibility("marker " + std::to_string(m) + " never visible in camera " +
                                   rig.cameras[c].name);

    const double pose_period = model.dwell_s + model.gap_s;
    for (int s = 0; s < n_samples; ++s) cap.sample_times.push_back(s * pose_period);

    // Frame cameras: anonymous blob tracks gated by the blink square wave.
    for (int c = 0; c < n_cams; ++c) {
        const auto& cam = rig.cameras[c];
        if (cam.kind != CameraKind::frame) continue;
        auto& fc = cap.frame_captures[c];
        fc.fps = cam.fps;
        fc.samples.resize(n_samples);
        const int n_frames = static_cast<int>(model.dwell_s * cam.fps);
        for (int s = 0; s < n_samples; ++s) {
            double t0 = cap.sample_times[s];
            std::array<int, 3> order{0, 1, 2};
            std::shuffle(order.begin(), order.end(), rng);
            for (int m : order) {
                if (!centers[s][c][m]) continue;
                BlobTrack track;
                track.center = *centers[s][c][m];
                track.lit.resize(n_frames);
                for (int j = 0; j < n_frames; ++j)
                    track.lit[j] = square_wave_on(wand.frequencies[m], t0 + j / cam.fps);
                fc.samples[s].push_back(std::move(track));
            }
        }
    }

    // Event cameras: render blob toggles through the event model, gated to
    // the first event_window_s of each dwell.
    for (int c = 0; c < n_cams; ++c) {
        const auto& cam = rig.cameras[c];
        if (cam.kind != CameraKind::event) continue;
        const int w = cam.intrinsics.width, h = cam.intrinsics.height;

        IntensityFrame frame;
        frame.width = w;
        frame.height = h;
        frame.pixels.assign(static_cast<size_t>(w) * h,
                            static_cast<float>(model.blob_background));

        const double r = model.blob_radius_px;
        auto blob_rect = [&](const Vec2& ctr) {
            PixelRect rect;
            rect.x0 = std::max(0, static_cast<int>(std::floor(ctr.x - r - 1)));
            rect.y0 = std::max(0, static_cast<int>(std::floor(ctr.y - r - 1)));
            rect.x1 = std::min(w, static_cast<int>(std::ceil(ctr.x + r + 2)));
            rect.y1 = std::min(h, static_cast<int>(std::ceil(ctr.y + r + 2)));
            return rect;
        };
        auto draw_blob = [&](const Vec2& ctr, bool on) {
            PixelRect rect = blob_rect(ctr);
            for (int y = rect.y0; y < rect.y1; ++y)
                for (int x = rect.x0; x < rect.x1; ++x) {
                    double dx = x - ctr.x, dy = y - ctr.y;
                    double q = 1.0 - (dx * dx + dy * dy) / (r * r);
                    if (q <= 0.0) continue;
                    float v = static_cast<float>(model.blob_background +
                                                 (on ? model.blob_peak * q : 0.0));
                    frame.at(x, y) = v;
                }
        };

        EventCamera evcam(w, h, model.event_contrast);
        const double dt = 1.0 / model.internal_fps;
        bool primed = false;
        double last_time = -1.0;
        for (int s = 0; s < n_samples; ++s) {
            double t0 = cap.sample_times[s];
            const int n_frames = static_cast<int>(model.event_window_s * model.internal_fps);
            std::array<bool, 3> lit{false, false, false};
            for (int j = 0; j < n_frames; ++j) {
                double t = t0 + j * dt;
                if (t <= last_time) continue;
                PixelRect dirty{w, h, 0, 0};
                bool any_change = false;
                for (int m = 0; m < 3; ++m) {
                    if (!centers[s][c][m]) continue;
                    bool on = square_wave_on(wand.frequencies[m], t);
                    if (!primed || on != lit[m]) {
                        draw_blob(*centers[s][c][m], on);
                        lit[m] = on;
                        PixelRect rect = blob_rect(*centers[s][c][m]);
                        dirty.x0 = std::min(dirty.x0, rect.x0);
                        dirty.y0 = std::min(dirty.y0, rect.y0);
                        dirty.x1 = std::max(dirty.x1, rect.x1);
                        dirty.y1 = std::max(dirty.y1, rect.y1);
                        any_change = true;
                    }
                }
                frame.t = t;
                if (!primed) {
                    evcam.push_frame(frame);  // full prime once
                    primed = true;
                } else if (any_change) {
                    evcam.push_frame(frame, dirty);
                } else {
                    continue;  // nothing changed; no frame needed
                }
                last_time = t;
            }
            // Turn all blobs off at the end of the recording gate so the next
            // sample starts from background.
            double t_end = t0 + n_frames * dt;
            PixelRect dirty{w, h, 0, 0};
            bool any = false;
            for (int m = 0; m < 3; ++m) {
                if (!centers[s][c][m] || !lit[m]) continue;
                draw_blob(*centers[s][c][m], false);
                PixelRect rect = blob_rect(*centers[s][c][m]);
                dirty.x0 = std::min(dirty.x0, rect.x0);
                dirty.y0 = std::min(dirty.y0, rect.y0);
                dirty.x1 = std::max(dirty.x1, rect.x1);
                dirty.y1 = std::max(dirty.y1, rect.y1);
                any = true;
            }
            if (primed && any && t_end > last_time) {
                frame.t = t_end;
                evcam.push_frame(frame, dirty);
                last_time = t_end;
            }
        }
        cap.event_streams[c] = evcam.take_stream();
    }
    return cap;
}

// ----------------------------------------------------- frequency classification

namespace {

FrequencyClass classify_rate(double measured_rate, const std::array<double, 3>& predicted,
                             double bin_width) {
    int best = 0;
    double db = std::abs(measured_rate - predicted[0]);
    double ds = 1e300;
    for (int m = 1; m < 3; ++m) {
        double d = std::abs(measured_rate - predicted[m]);
        if (d < db) {
            ds = db;
            db = d;
            best = m;
        } else if (d < ds) {
            ds = d;
        }
    }
    double margin = ds - db;
    if (margin < 2.0 * bin_width) throw AmbiguousFrequency();
    FrequencyClass out;
    out.marker = best;
    out.confidence = margin / (ds + db + 1e-12);
    out.measured_rate = measured_rate;
    return out;
}

}  // namespace

FrequencyClass classify_marker_frequency(const std::vector<uint8_t>& timeline, double fps,
                                         const WandGeometry& wand) {
    if (timeline.size() < 2) throw std::invalid_argument("timeline too short");
    const double window = (timeline.size() - 1) / fps;
    const double slowest = *std::min_element(wand.frequencies.begin(), wand.frequencies.end());
    if (window * slowest < 5.0)
        throw std::invalid_argument("window must cover >= 5 periods of the slowest frequency");

    int transitions = 0;
    for (size_t i = 1; i < timeline.size(); ++i)
        if ((timeline[i] != 0) != (timeline[i - 1] != 0)) ++transitions;
    double measured = transitions / window;

    // Expected transition rate of each configured frequency at this fps,
    // phase-averaged; sampling a square wave below Nyquist aliases the count,
    // so the prediction must come from the same sampling process.
    std::array<double, 3> predicted{};
    const int n = static_cast<int>(timeline.size());
    for (int m = 0; m < 3; ++m) {
        double f = wand.frequencies[m];
        double total = 0.0;
        const int n_phases = 64;
        for (int p = 0; p < n_phases; ++p) {
            double phase = p / (n_phases * f);
            int tr = 0;
            bool prev = square_wave_on(f, phase);
            for (int j = 1; j < n; ++j) {
                bool cur = square_wave_on(f, phase + j / fps);
                if (cur != prev) ++tr;
                prev = cur;
            }
            total += tr / window;
        }
        predicted[m] = total / n_phases;
    }
    return classify_rate(measured, predicted, 1.0 / window);
}

FrequencyClass classify_marker_frequency(const std::vector<double>& bursts, double window_s,
                                         const WandGeometry& wand) {
    const double slowest = *std::min_element(wand.frequencies.begin(), wand.frequencies.end());
    if (window_s * slowest < 5.0)
        throw std::invalid_argument("window must cover >= 5 periods of the slowest frequency");
    if (bursts.size() < 2) throw AmbiguousFrequency();
    double span = bursts.back() - bursts.front();
    if (span <= 0.0) throw AmbiguousFrequency();
    double measured = (bursts.size() - 1) / span;
    return classify_rate(measured, wand.frequencies, 1.0 / window_s);
}

// ----------------------------------------------------------- marker detection

namespace {

struct EventCluster {
    double sum_x = 0.0, sum_y = 0.0, sum_xx = 0.0, sum_yy = 0.0;
    int count = 0;
    std::vector<double> positive_times;  // s

    Vec2 centroid() const { return {sum_x / count, sum_y / count}; }
    double rms_spread() const {
        Vec2 c = centroid();
        double var = sum_xx / count - c.x * c.x + sum_yy / count - c.y * c.y;
        return std::sqrt(std::max(var, 0.0));
    }
};

std::vector<EventCluster> cluster_events(const EventStream& stream, uint32_t t0_us,
                                         uint32_t t1_us, double merge_radius_px) {
    std::vector<EventCluster> clusters;
    auto lo = std::lower_bound(stream.events.begin(), stream.events.end(), t0_us,
                               [](const Event& e, uint32_t t) { return e.t_us < t; });
    for (auto it = lo; it != stream.events.end() && it->t_us < t1_us; ++it) {
        double x = it->x, y = it->y;
        int best = -1;
        double best_d = merge_radius_px;
        for (size_t k = 0; k < clusters.size(); ++k) {
            Vec2 c = clusters[k].centroid();
            double d = std::hypot(c.x - x, c.y - y);
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(k);
            }
        }
        if (best < 0) {
            clusters.push_back({});
            best = static_cast<int>(clusters.size()) - 1;
        }
        auto& cl = clusters[best];
        cl.sum_x += x;
        cl.sum_y += y;
        cl.sum_xx += x * x;
        cl.sum_yy += y * y;
        cl.count += 1;
        if (it->polarity > 0) cl.positive_times.push_back(it->t_us * 1e-6);
    }
    // Merge clusters that drifted together.
    for (size_t i = 0; i < clusters.size(); ++i)
        for (size_t j = i + 1; j < clusters.size();) {
            Vec2 a = clusters[i].centroid(), b = clusters[j].centroid();
            if (std::hypot(a.x - b.x, a.y - b.y) < merge_radius_px) {
                clusters[i].sum_x += clusters[j].sum_x;
                clusters[i].sum_y += clusters[j].sum_y;
                clusters[i].sum_xx += clusters[j].sum_xx;
                clusters[i].sum_yy += clusters[j].sum_yy;
                clusters[i].count += clusters[j].count;
                clusters[i].positive_times.insert(clusters[i].positive_times.end(),
                                                  clusters[j].positive_times.begin(),
                                                  clusters[j].positive_times.end());
                clusters.erase(clusters.begin() + j);
            } else {
                ++j;
            }
        }
    for (auto& c : clusters) std::sort(c.positive_times.begin(), c.positive_times.end());
    return clusters;
}

// Group positive event times into bursts separated by > 0.75 ms.
std::vector<double> burst_times(const std::vector<double>& times) {
    std::vector<double> bursts;
    constexpr double kGap = 0.75e-3;
    size_t i = 0;
    while (i < times.size()) {
        size_t j = i + 1;
        double sum = times[i];
        while (j < times.size() && times[j] - times[j - 1] <= kGap) {
            sum += times[j];
            ++j;
        }
        if (j - i >= 3) bursts.push_back(sum / (j - i));
        i = j;
    }
    return bursts;
}

}  // namespace

std::vector<MarkerDetection> detect_markers(const WandCapture& cap) {
    std::vector<MarkerDetection> out;
    const int n_cams = static_cast<int>(cap.rig.cameras.size());
    const int n_samples = static_cast<int>(cap.sample_times.size());

    for (int c = 0; c < n_cams; ++c) {
        const auto& cam = cap.rig.cameras[c];
        for (int s = 0; s < n_samples; ++s) {
            std::array<std::optional<MarkerDetection>, 3> best;
            auto consider = [&](int marker, double conf, const Vec2& px) {
                if (!best[marker] || conf > best[marker]->confidence)
                    best[marker] = MarkerDetection{c, cap.sample_times[s], px, marker, conf};
            };
            if (cam.kind == CameraKind::frame) {
                for (const auto& blob : cap.frame_captures[c].samples[s]) {
                    try {
                        auto fc = classify_marker_frequency(blob.lit, cam.fps, cap.wand);
                        consider(fc.marker, fc.confidence, blob.center);
                    } catch (const AmbiguousFrequency&) {
                    }
                }
            } else {
                uint32_t t0 = static_cast<uint32_t>(cap.sample_times[s] * 1e6);
                uint32_t t1 =
                    t0 + static_cast<uint32_t>(cap.model.event_window_s * 1e6);
                double r = cap.model.blob_radius_px;
                auto clusters = cluster_events(cap.event_streams[c], t0, t1, 3.5 * r);
                for (const auto& cl : clusters) {
                    if (cl.count < 20) continue;  // stray noise
                    // A single blob spreads ~r/sqrt(2); wider clusters are
                    // overlapping markers whose centroid is meaningless.
                    if (cl.rms_spread() > 0.71 * r + 1.0) continue;
                    auto bursts = burst_times(cl.positive_times);
                    try {
                        auto fc =
                            classify_marker_frequency(bursts, cap.model.event_window_s, cap.wand);
                        consider(fc.marker, fc.confidence, cl.centroid());
                    } catch (const AmbiguousFrequency&) {
                    }
                }
            }
            for (int m = 0; m < 3; ++m)
                if (best[m]) out.push_back(*best[m]);
        }
    }
    return out;
}

CalibrationProblem build_problem(const Rig& rig, const WandGeometry& wand,
                                 const std::vector<MarkerDetection>& detections) {
    CalibrationProblem p;
    p.rig = rig;
    p.wand = wand;
    std::map<double, CalibrationProblem::Sample> by_time;
    for (const auto& d : detections) {
        if (d.camera < 0 || d.camera >= static_cast<int>(rig.cameras.size()))
            throw std::out_of_range("detection camera index");
        if (d.marker < 0 || d.marker > 2) throw std::out_of_range("marker id");
        auto& s = by_time[d.t];
        s.t = d.t;
        s.obs.resize(rig.cameras.size());
        s.obs[d.camera][d.marker] = d.pixel;
    }
    for (auto& [t, s] : by_time) p.samples.push_back(std::move(s));
    return p;
}

// ------------------------------------------------------------- initialization

namespace {

struct Correspondence {
    Vec2 a;  // normalized, undistorted, camera A
    Vec2 b;
    int sample;
    int marker;
};

Vec2 normalized_obs(const CameraModel& cam, const Vec2& pixel) {
    const auto& K = cam.intrinsics;
    return undistort(K, {(pixel.x - K.cx) / K.fx, (pixel.y - K.cy) / K.fy});
}

// Two-view midpoint-free DLT triangulation with P_a = [I|0], P_b = [R|t].
Eigen::Vector3d triangulate_pair(const Eigen::Matrix3d& R, const Eigen::Vector3d& t,
                                 const Vec2& xa, const Vec2& xb) {
    Eigen::Matrix4d A;
    Eigen::Matrix<double, 3, 4> Pa, Pb;
    Pa << 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0;
    Pb.leftCols<3>() = R;
    Pb.col(3) = t;
    A.row(0) = xa.x * Pa.row(2) - Pa.row(0);
    A.row(1) = xa.y * Pa.row(2) - Pa.row(1);
    A.row(2) = xb.x * Pb.row(2) - Pb.row(0);
    A.row(3) = xb.y * Pb.row(2) - Pb.row(1);
    Eigen::JacobiSVD<Eigen::Matrix4d> svd(A, Eigen::ComputeFullV);
    Eigen::Vector4d h = svd.matrixV().col(3);
    return h.head<3>() / h(3);
}

// Fraction of correspondences lying on a single image line (degeneracy probe).
bool points_collinear(const std::vector<Vec2>& pts) {
    if (pts.size() < 3) return true;
    double mx = 0, my = 0;
    for (const auto& p : pts) {
        mx += p.x;
        my += p.y;
    }
    mx /= pts.size();
    my /= pts.size();
    double sxx = 0, sxy = 0, syy = 0;
    for (const auto& p : pts) {
        sxx += (p.x - mx) * (p.x - mx);
        sxy += (p.x - mx) * (p.y - my);
        syy += (p.y - my) * (p.y - my);
    }
    Eigen::Matrix2d C;
    C << sxx, sxy, sxy, syy;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(C);
    // Smallest/largest spread ratio; a line keeps everything in one direction
    // up to detection noise.
    double lo = eig.eigenvalues()(0), hi = eig.eigenvalues()(1);
    return hi <= 0.0 || lo / hi < 1e-4;
}

struct RelativePose {
    Eigen::Matrix3d R;   // X_b = R X_a + t
    Eigen::Vector3d t;
};

RelativePose relative_pose_8pt(const std::vector<Correspondence>& corr,
                               const WandGeometry& wand) {
    std::vector<Vec2> pa, pb;
    for (const auto& c : corr) {
        pa.push_back(c.a);
        pb.push_back(c.b);
    }
    if (points_collinear(pa) || points_collinear(pb))
        throw DegenerateMotion("correspondences are collinear in the image");

    // Hartley normalization.
    auto normalizer = [](const std::vector<Vec2>& pts) {
        double mx = 0, my = 0;
        for (const auto& p : pts) {
            mx += p.x;
            my += p.y;
        }
        mx /= pts.size();
        my /= pts.size();
        double scale = 0.0;
        for (const auto& p : pts) scale += std::hypot(p.x - mx, p.y - my);
        scale = std::sqrt(2.0) * pts.size() / std::max(scale, 1e-12);
        Eigen::Matrix3d T;
        T << scale, 0, -scale * mx, 0, scale, -scale * my, 0, 0, 1;
        return T;
    };
    Eigen::Matrix3d Ta = normalizer(pa), Tb = normalizer(pb);

    Eigen::MatrixXd A(corr.size(), 9);
    for (size_t i = 0; i < corr.size(); ++i) {
        Eigen::Vector3d xa = Ta * Eigen::Vector3d(pa[i].x, pa[i].y, 1.0);
        Eigen::Vector3d xb = Tb * Eigen::Vector3d(pb[i].x, pb[i].y, 1.0);
        A.row(i) << xb.x() * xa.x(), xb.x() * xa.y(), xb.x(), xb.y() * xa.x(), xb.y() * xa.y(),
            xb.y(), xa.x(), xa.y(), 1.0;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv(7) < 1e-6 * sv(0))
        throw DegenerateMotion("epipolar system rank-deficient (coplanar/collinear motion)");
    Eigen::Matrix3d E;
    Eigen::VectorXd e = svd.matrixV().col(8);
    E << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
    E = Tb.transpose() * E * Ta;

    // Project onto the essential manifold and decompose.
    Eigen::JacobiSVD<Eigen::Matrix3d> esvd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d U = esvd.matrixU(), V = esvd.matrixV();
    if (U.determinant() < 0) U.col(2) *= -1;
    if (V.determinant() < 0) V.col(2) *= -1;
    Eigen::Matrix3d W;
    W << 0, -1, 0, 1, 0, 0, 0, 0, 1;

    RelativePose best;
    int best_count = -1;
    for (int ri = 0; ri < 2; ++ri) {
        Eigen::Matrix3d R = ri == 0 ? Eigen::Matrix3d(U * W * V.transpose())
                                    : Eigen::Matrix3d(U * W.transpose() * V.transpose());
        for (int ti = 0; ti < 2; ++ti) {
            Eigen::Vector3d t = (ti == 0 ? 1.0 : -1.0) * U.col(2);
            int count = 0;
            for (const auto& c : corr) {
                Eigen::Vector3d X = triangulate_pair(R, t, c.a, c.b);
                Eigen::Vector3d Xb = R * X + t;
                if (X.z() > 0 && Xb.z() > 0) ++count;
            }
            if (count > best_count) {
                best_count = count;
                best.R = R;
                best.t = t;
            }
        }
    }
    if (best_count < static_cast<int>(corr.size()) * 3 / 4)
        throw DegenerateMotion("cheirality check failed for every decomposition");

    // Metric scale from the known wand segment lengths.
    std::map<int, std::array<std::optional<Eigen::Vector3d>, 3>> by_sample;
    for (const auto& c : corr)
        by_sample[c.sample][c.marker] = triangulate_pair(best.R, best.t, c.a, c.b);
    std::vector<double> scales;
    for (const auto& [s, markers] : by_sample) {
        if (markers[0] && markers[1])
            scales.push_back(wand.offsets[1] / (*markers[1] - *markers[0]).norm());
        if (markers[0] && markers[2])
            scales.push_back(wand.offsets[2] / (*markers[2] - *markers[0]).norm());
    }
    if (scales.empty()) throw DegenerateMotion("no wand segment available for scale");
    std::sort(scales.begin(), scales.end());
    double scale = scales[scales.size() / 2];
    if (!(scale > 0.0) || !std::isfinite(scale))
        throw DegenerateMotion("unstable metric scale");
    best.t *= scale;
    return best;
}

}  // namespace

Rig initialize_extrinsics(const CalibrationProblem& problem) {
    const Rig& rig = problem.rig;
    const int n = static_cast<int>(rig.cameras.size());
    if (n < 2) throw InsufficientCorrespondences("rig needs at least two cameras");

    // Common-sample counts per camera pair.
    std::vector<std::vector<int>> common(n, std::vector<int>(n, 0));
    for (const auto& s : problem.samples) {
        for (int a = 0; a < n; ++a) {
            bool va = s.obs.size() > static_cast<size_t>(a) &&
                      (s.obs[a][0] || s.obs[a][1] || s.obs[a][2]);
            if (!va) continue;
            for (int b = a + 1; b < n; ++b) {
                bool vb = s.obs.size() > static_cast<size_t>(b) &&
                          (s.obs[b][0] || s.obs[b][1] || s.obs[b][2]);
                if (vb) {
                    ++common[a][b];
                    ++common[b][a];
                }
            }
        }
    }

    // Maximum-correspondence spanning tree from the gauge camera.
    constexpr int kMinCommonSamples = 8;
    std::vector<int> parent(n, -1);
    std::vector<bool> done(n, false);
    done[rig.gauge] = true;
    using Edge = std::tuple<int, int, int>;  // (-count, parent, child) for min-heap
    std::priority_queue<Edge, std::vector<Edge>, std::greater<>> heap;
    auto push_edges = [&](int from) {
        for (int to = 0; to < n; ++to)
            if (!done[to] && common[from][to] >= kMinCommonSamples)
                heap.push({-common[from][to], from, to});
    };
    push_edges(rig.gauge);
    while (!heap.empty()) {
        auto [negc, from, to] = heap.top();
        heap.pop();
        if (done[to]) continue;
        done[to] = true;
        parent[to] = from;
        push_edges(to);
    }
    for (int c = 0; c < n; ++c)
        if (!done[c])
            throw InsufficientCorrespondences(
                "camera " + rig.cameras[c].name +
                " shares fewer than 8 sample times with the gauge chain");

    // Order children so parents are solved first.
    std::vector<int> order;
    std::vector<bool> placed(n, false);
    placed[rig.gauge] = true;
    while (static_cast<int>(order.size()) < n - 1)
        for (int c = 0; c < n; ++c)
            if (!placed[c] && placed[parent[c]]) {
                order.push_back(c);
                placed[c] = true;
            }

    Rig out = rig;
    out.cameras[rig.gauge].pose = Pose{};  // identity: the gauge frame

    for (int child : order) {
        int par = parent[child];
        std::vector<Correspondence> corr;
        for (size_t si = 0; si < problem.samples.size(); ++si) {
            const auto& s = problem.samples[si];
            if (s.obs.size() <= static_cast<size_t>(std::max(par, child))) continue;
            for (int m = 0; m < 3; ++m) {
                if (!s.obs[par][m] || !s.obs[child][m]) continue;
                corr.push_back({normalized_obs(rig.cameras[par], *s.obs[par][m]),
                                normalized_obs(rig.cameras[child], *s.obs[child][m]),
                                static_cast<int>(si), m});
            }
        }
        if (corr.size() < 8)
            throw InsufficientCorrespondences("camera pair has fewer than 8 correspondences");
        RelativePose rel = relative_pose_8pt(corr, problem.wand);
        Pose rel_pose{from_eigen(rel.R), Vec3{rel.t.x(), rel.t.y(), rel.t.z()}};
        out.cameras[child].pose = rel_pose * out.cameras[par].pose;
    }
    return out;
}

// ------------------------------------------------------------ bundle adjustment

namespace {

struct WandParam {
    Eigen::Vector3d point;
    Eigen::Vector3d dir;  // unit
};

struct ResidualRef {
    int sample;  // index into retained samples
    int camera;
    int marker;
    Vec2 obs;
};

constexpr double kHuberDelta = 2.0;  // px

double robust_cost(double s) {
    return s <= kHuberDelta ? s * s : kHuberDelta * (2.0 * s - kHuberDelta);
}

}  // namespace

CalibrationResult bundle_adjust(const CalibrationProblem& problem, const Rig& initial) {
    const int n_cams = static_cast<int>(initial.cameras.size());
    const int gauge = initial.gauge;

    // Retain samples that at least two cameras observed.
    std::vector<int> retained;
    for (size_t si = 0; si < problem.samples.size(); ++si) {
        const auto& s = problem.samples[si];
        int cams_seeing = 0;
        for (int c = 0; c < n_cams && c < static_cast<int>(s.obs.size()); ++c)
            if (s.obs[c][0] || s.obs[c][1] || s.obs[c][2]) ++cams_seeing;
        if (cams_seeing >= 2) retained.push_back(static_cast<int>(si));
    }
    if (retained.empty()) throw InsufficientCorrespondences("no multi-camera samples");
    const int n_samples = static_cast<int>(retained.size());

    // Initial wand poses by triangulation + line fit honoring the offsets.
    std::vector<WandParam> wands(n_samples);
    std::vector<bool> wand_ok(n_samples, false);
    for (int k = 0; k < n_samples; ++k) {
        const auto& s = problem.samples[retained[k]];
        std::array<std::optional<Vec3>, 3> pts;
        for (int m = 0; m < 3; ++m) {
            std::vector<PixelObservation> obs;
            for (int c = 0; c < n_cams && c < static_cast<int>(s.obs.size()); ++c)
                if (s.obs[c][m]) obs.push_back({c, *s.obs[c][m]});
            if (obs.size() >= 2) {
                try {
                    pts[m] = triangulate(initial.cameras, obs);
                } catch (const DegenerateGeometry&) {
                }
            }
        }
        std::vector<std::pair<double, Vec3>> got;
        for (int m = 0; m < 3; ++m)
            if (pts[m]) got.push_back({problem.wand.offsets[m], *pts[m]});
        if (got.size() < 2) continue;
        double dbar = 0.0;
        Vec3 xbar{0, 0, 0};
        for (const auto& [d, X] : got) {
            dbar += d;
            xbar = xbar + X;
        }
        dbar /= got.size();
        xbar = xbar / static_cast<double>(got.size());
        Vec3 dir{0, 0, 0};
        double denom = 0.0;
        for (const auto& [d, X] : got) {
            dir = dir + (X - xbar) * (d - dbar);
            denom += (d - dbar) * (d - dbar);
        }
        dir = dir / std::max(denom, 1e-12);
        if (dir.norm() < 1e-9) continue;
        dir = dir.normalized();
        Vec3 point = xbar - dir * dbar;
        wands[k] = {Eigen::Vector3d(point.x, point.y, point.z),
                    Eigen::Vector3d(dir.x, dir.y, dir.z)};
        wand_ok[k] = true;
    }

    // Drop samples whose wand could not be initialized.
    {
        std::vector<int> keep;
        std::vector<WandParam> kw;
        for (int k = 0; k < n_samples; ++k)
            if (wand_ok[k]) {
                keep.push_back(retained[k]);
                kw.push_back(wands[k]);
            }
        retained = keep;
        wands = kw;
    }
    const int ns = static_cast<int>(retained.size());
    if (ns == 0) throw InsufficientCorrespondences("no triangulable wand samples");

    // Camera parameter blocks (gauge excluded).
    std::vector<int> cam_block(n_cams, -1);
    int nc = 0;
    for (int c = 0; c < n_cams; ++c)
        if (c != gauge) cam_block[c] = nc++;

    std::vector<Eigen::Matrix3d> R(n_cams);
    std::vector<Eigen::Vector3d> t(n_cams);
    for (int c = 0; c < n_cams; ++c) {
        R[c] = to_eigen(initial.cameras[c].pose.rotation);
        t[c] = Eigen::Vector3d(initial.cameras[c].pose.translation.x,
                               initial.cameras[c].pose.translation.y,
                               initial.cameras[c].pose.translation.z);
    }

    // Residual list.
    std::vector<ResidualRef> residuals;
    for (int k = 0; k < ns; ++k) {
        const auto& s = problem.samples[retained[k]];
        for (int c = 0; c < n_cams && c < static_cast<int>(s.obs.size()); ++c)
            for (int m = 0; m < 3; ++m)
                if (s.obs[c][m]) residuals.push_back({k, c, m, *s.obs[c][m]});
    }

    auto evaluate_cost = [&](const std::vector<Eigen::Matrix3d>& Rv,
                             const std::vector<Eigen::Vector3d>& tv,
                             const std::vector<WandParam>& wv) {
        double cost = 0.0;
        for (const auto& rr : residuals) {
            const auto& K = initial.cameras[rr.camera].intrinsics;
            Eigen::Vector3d Xw =
                wv[rr.sample].point + problem.wand.offsets[rr.marker] * wv[rr.sample].dir;
            Eigen::Vector3d Xc = Rv[rr.camera] * Xw + tv[rr.camera];
            if (Xc.z() <= 1e-9) {
                cost += 1e12;  // behind the camera: reject any step that does this
                continue;
            }
            Vec2 nrm{Xc.x() / Xc.z(), Xc.y() / Xc.z()};
            Vec2 d = distort(K, nrm);
            double ru = K.fx * d.x + K.cx - rr.obs.x;
            double rv2 = K.fy * d.y + K.cy - rr.obs.y;
            cost += robust_cost(std::hypot(ru, rv2));
        }
        return cost;
    };

    const int n_rounds = 200;
    double lambda = 1e-6;
    double cost = evaluate_cost(R, t, wands);
    std::vector<double> cost_history{cost};
    bool converged = false;
    int iterations = 0;
    int consecutive_increases = 0;
    // At a residual scale of 1e-10 px the relative-change test is meaningless;
    // treat the problem as solved.
    const double cost_floor = static_cast<double>(residuals.size()) * 1e-20;

    for (int round = 0; round < n_rounds && !converged; ++round) {
        ++iterations;
        // Tangent bases for the wand directions, fixed for this round.
        std::vector<Eigen::Matrix<double, 3, 2>> tangent(ns);
        for (int k = 0; k < ns; ++k) {
            Eigen::Vector3d u = wands[k].dir;
            Eigen::Vector3d ref =
                std::abs(u.z()) < 0.9 ? Eigen::Vector3d(0, 0, 1) : Eigen::Vector3d(1, 0, 0);
            Eigen::Vector3d b1 = u.cross(ref).normalized();
            Eigen::Vector3d b2 = u.cross(b1);
            tangent[k].col(0) = b1;
            tangent[k].col(1) = b2;
        }

        std::vector<Eigen::Matrix<double, 6, 6>> A(nc, Eigen::Matrix<double, 6, 6>::Zero());
        std::vector<Eigen::Matrix<double, 6, 1>> ga(nc, Eigen::Matrix<double, 6, 1>::Zero());
        std::vector<Eigen::Matrix<double, 5, 5>> C(ns, Eigen::Matrix<double, 5, 5>::Zero());
        std::vector<Eigen::Matrix<double, 5, 1>> gc(ns, Eigen::Matrix<double, 5, 1>::Zero());
        std::map<std::pair<int, int>, Eigen::Matrix<double, 6, 5>> B;  // (cam block, sample)

        for (const auto& rr : residuals) {
            const auto& K = initial.cameras[rr.camera].intrinsics;
            const auto& wp = wands[rr.sample];
            double dm = problem.wand.offsets[rr.marker];
            Eigen::Vector3d Xw = wp.point + dm * wp.dir;
            Eigen::Vector3d Xc = R[rr.camera] * Xw + t[rr.camera];
            if (Xc.z() <= 1e-9) continue;

            Vec2 nrm{Xc.x() / Xc.z(), Xc.y() / Xc.z()};
            Vec2 dpix = distort(K, nrm);
            Eigen::Vector2d r(K.fx * dpix.x + K.cx - rr.obs.x, K.fy * dpix.y + K.cy - rr.obs.y);

            auto Jd = distort_jacobian(K, nrm);
            Eigen::Matrix2d Jdist;
            Jdist << Jd[0], Jd[1], Jd[2], Jd[3];
            Eigen::Matrix2d Jk;
            Jk << K.fx, 0, 0, K.fy;
            Eigen::Matrix<double, 2, 3> Jn;
            double iz = 1.0 / Xc.z();
            Jn << iz, 0, -Xc.x() * iz * iz, 0, iz, -Xc.y() * iz * iz;
            Eigen::Matrix<double, 2, 3> Jx = Jk * Jdist * Jn;

            double s = r.norm();
            double w = s <= kHuberDelta ? 1.0 : kHuberDelta / s;
            double sw = std::sqrt(w);
            r *= sw;

            Eigen::Matrix<double, 2, 5> Jw;
            Jw.leftCols<3>() = Jx * R[rr.camera];
            Eigen::Matrix<double, 3, 2> dir_jac;
            dir_jac.col(0) = tangent[rr.sample].col(0).cross(wp.dir);
            dir_jac.col(1) = tangent[rr.sample].col(1).cross(wp.dir);
            Jw.rightCols<2>() = Jx * R[rr.camera] * (dm * dir_jac);
            Jw *= sw;

            int bc = cam_block[rr.camera];
            if (bc >= 0) {
                Eigen::Matrix<double, 2, 6> Jc;
                Jc.leftCols<3>() = -Jx * skew(R[rr.camera] * Xw);
                Jc.rightCols<3>() = Jx;
                Jc *= sw;
                A[bc] += Jc.transpose() * Jc;
                ga[bc] += Jc.transpose() * r;
                auto [it, inserted] =
                    B.try_emplace({bc, rr.sample}, Eigen::Matrix<double, 6, 5>::Zero());
                it->second += Jc.transpose() * Jw;
            }
            C[rr.sample] += Jw.transpose() * Jw;
            gc[rr.sample] += Jw.transpose() * r;
        }

        double gmax = 0.0;
        for (const auto& g : ga) gmax = std::max(gmax, g.cwiseAbs().maxCoeff());
        for (const auto& g : gc) gmax = std::max(gmax, g.cwiseAbs().maxCoeff());
        if (gmax < 1e-14) {
            converged = true;
            break;
        }

        bool accepted = false;
        for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
            // Damped blocks.
            std::vector<Eigen::Matrix<double, 5, 5>> Cinv(ns);
            bool singular = false;
            for (int k = 0; k < ns; ++k) {
                Eigen::Matrix<double, 5, 5> Cd = C[k];
                for (int i = 0; i < 5; ++i)
                    Cd(i, i) += lambda * std::max(C[k](i, i), 1e-12);
                Eigen::LDLT<Eigen::Matrix<double, 5, 5>> ldlt(Cd);
                if (ldlt.info() != Eigen::Success) {
                    singular = true;
                    break;
                }
                Cinv[k] = ldlt.solve(Eigen::Matrix<double, 5, 5>::Identity());
            }
            if (singular) throw SingularNormalEquations();

            // Schur complement onto the camera blocks.
            Eigen::MatrixXd S = Eigen::MatrixXd::Zero(6 * nc, 6 * nc);
            Eigen::VectorXd gs = Eigen::VectorXd::Zero(6 * nc);
            for (int bc = 0; bc < nc; ++bc) {
                Eigen::Matrix<double, 6, 6> Ad = A[bc];
                for (int i = 0; i < 6; ++i)
                    Ad(i, i) += lambda * std::max(A[bc](i, i), 1e-12);
                S.block<6, 6>(6 * bc, 6 * bc) = Ad;
                gs.segment<6>(6 * bc) = -ga[bc];
            }
            // Group B blocks by sample for the cross terms.
            std::vector<std::vector<std::pair<int, const Eigen::Matrix<double, 6, 5>*>>>
                by_sample(ns);
            for (const auto& [key, blk] : B) by_sample[key.second].push_back({key.first, &blk});
            for (int k = 0; k < ns; ++k) {
                for (const auto& [bi, Bi] : by_sample[k]) {
                    Eigen::Matrix<double, 6, 5> BiC = (*Bi) * Cinv[k];
                    gs.segment<6>(6 * bi) += BiC * gc[k];
                    for (const auto& [bj, Bj] : by_sample[k])
                        S.block<6, 6>(6 * bi, 6 * bj) -= BiC * Bj->transpose();
                }
            }

            Eigen::LDLT<Eigen::MatrixXd> sldlt(S);
            if (sldlt.info() != Eigen::Success) throw SingularNormalEquations();
            Eigen::VectorXd dc = sldlt.solve(gs);
            if (!dc.allFinite()) throw SingularNormalEquations();

            // Back-substitute the wand increments.
            std::vector<Eigen::Matrix<double, 5, 1>> dw(ns);
            for (int k = 0; k < ns; ++k) {
                Eigen::Matrix<double, 5, 1> rhs = -gc[k];
                for (const auto& [bi, Bi] : by_sample[k])
                    rhs -= Bi->transpose() * dc.segment<6>(6 * bi);
                dw[k] = Cinv[k] * rhs;
            }

            // Trial parameters.
            std::vector<Eigen::Matrix3d> Rn = R;
            std::vector<Eigen::Vector3d> tn = t;
            std::vector<WandParam> wn = wands;
            for (int c = 0; c < n_cams; ++c) {
                int bc = cam_block[c];
                if (bc < 0) continue;
                Eigen::Vector3d drot = dc.segment<3>(6 * bc);
                Eigen::Vector3d dt = dc.segment<3>(6 * bc + 3);
                Rotation upd = Rotation::from_rotvec({drot.x(), drot.y(), drot.z()});
                Rn[c] = to_eigen(upd) * R[c];
                tn[c] = t[c] + dt;
            }
            for (int k = 0; k < ns; ++k) {
                wn[k].point += dw[k].head<3>();
                Eigen::Vector3d gamma =
                    tangent[k].col(0) * dw[k](3) + tangent[k].col(1) * dw[k](4);
                Rotation upd = Rotation::from_rotvec({gamma.x(), gamma.y(), gamma.z()});
                Eigen::Matrix3d Ru = to_eigen(upd);
                wn[k].dir = (Ru * wn[k].dir).normalized();
            }

            double new_cost = evaluate_cost(Rn, tn, wn);
            if (!std::isfinite(new_cost)) throw SingularNormalEquations();
            if (new_cost <= cost) {
                // LM only accepts non-increasing steps, so a run of cost
                // increases signals a broken objective.
                if (new_cost > cost && ++consecutive_increases >= 5)
                    throw DivergedOptimization();
                if (new_cost < cost) consecutive_increases = 0;
                double rel = (cost - new_cost) / std::max(cost, 1e-300);
                R = Rn;
                t = tn;
                wands = wn;
                cost = new_cost;
                cost_history.push_back(cost);
                lambda = std::max(lambda / 3.0, 1e-12);
                accepted = true;
                if (rel < 1e-10 || cost <= cost_floor) converged = true;
            } else {
                lambda *= 10.0;
            }
        }
        if (!accepted) converged = true;  // no productive step remains
    }

    // Assemble the result.
    CalibrationResult result;
    result.rig = initial;
    for (int c = 0; c < n_cams; ++c) {
        result.rig.cameras[c].pose.rotation = from_eigen(R[c]);
        result.rig.cameras[c].pose.translation = {t[c].x(), t[c].y(), t[c].z()};
    }
    result.rig.gauge = gauge;
    result.sample_indices = retained;
    for (int k = 0; k < ns; ++k) {
        WandPose wp;
        wp.t = problem.samples[retained[k]].t;
        wp.point = {wands[k].point.x(), wands[k].point.y(), wands[k].point.z()};
        wp.direction = {wands[k].dir.x(), wands[k].dir.y(), wands[k].dir.z()};
        result.wand_poses.push_back(wp);
    }
    result.converged = converged;
    result.iterations = iterations;
    result.final_cost = cost;
    result.cost_history = std::move(cost_history);

    std::vector<Vec3> pts;
    std::vector<PixelObservation> obs;
    for (const auto& rr : residuals) {
        const auto& wp = result.wand_poses[rr.sample];
        pts.push_back(wp.point + wp.direction * problem.wand.offsets[rr.marker]);
        obs.push_back({rr.camera, rr.obs});
    }
    result.reprojection = reprojection_mae(result.rig.cameras, pts, obs);
    return result;
}

void save_mae_csv(const Rig& rig, const std::vector<MeanStd>& stats, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "camera,mean,std\n";
    char line[256];
    for (size_t c = 0; c < stats.size(); ++c) {
        std::snprintf(line, sizeof(line), "%s,%.6f,%.6f\n",
                      rig.cameras[c].name.empty() ? ("camera_" + std::to_string(c)).c_str()
                                                  : rig.cameras[c].name.c_str(),
                      stats[c].mean, stats[c].stddev);
        f << line;
    }
}

}  // namespace ttv
