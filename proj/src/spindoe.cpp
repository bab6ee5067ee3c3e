#include "ttv/spindoe.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace ttv {

namespace {

constexpr double kDeg = M_PI / 180.0;

// Unique rotation mapping the pair (a0, a1) onto (b0, b1); all inputs unit.
Rotation align_two_pairs(const Vec3& a0, const Vec3& a1, const Vec3& b0, const Vec3& b1) {
    auto basis = [](const Vec3& u, const Vec3& v) {
        Vec3 e1 = u;
        Vec3 e2 = (v - u * u.dot(v)).normalized();
        Vec3 e3 = e1.cross(e2);
        Eigen::Matrix3d m;
        m << e1.x, e2.x, e3.x, e1.y, e2.y, e3.y, e1.z, e2.z, e3.z;
        return m;
    };
    Eigen::Matrix3d R = basis(b0, b1) * basis(a0, a1).transpose();
    return Rotation::from_matrix({R(0, 0), R(0, 1), R(0, 2), R(1, 0), R(1, 1), R(1, 2), R(2, 0),
                                  R(2, 1), R(2, 2)});
}

// Wahba/Kabsch solve for R minimizing sum |obs_i - R pat_i|^2 over unit
// directions.
Rotation kabsch(const std::vector<Vec3>& obs, const std::vector<Vec3>& pat) {
    Eigen::Matrix3d B = Eigen::Matrix3d::Zero();
    for (size_t i = 0; i < obs.size(); ++i) {
        Eigen::Vector3d o(obs[i].x, obs[i].y, obs[i].z);
        Eigen::Vector3d p(pat[i].x, pat[i].y, pat[i].z);
        B += o * p.transpose();
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(B, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d U = svd.matrixU();
    Eigen::Matrix3d V = svd.matrixV();
    double d = (U * V.transpose()).determinant();
    Eigen::Matrix3d R = U * Eigen::Vector3d(1, 1, d).asDiagonal() * V.transpose();
    return Rotation::from_matrix({R(0, 0), R(0, 1), R(0, 2), R(1, 0), R(1, 1), R(1, 2), R(2, 0),
                                  R(2, 1), R(2, 2)});
}

struct Match {
    int obs;
    int pat;
    double angle;
};

// Greedy one-to-one assignment of observations to rotated pattern dots.
std::vector<Match> match_dots(const std::vector<Vec3>& observed, const std::vector<Vec3>& pattern,
                              const Rotation& R, double gate_rad) {
    std::vector<Vec3> rotated(pattern.size());
    for (size_t j = 0; j < pattern.size(); ++j) rotated[j] = R.rotate(pattern[j]);
    std::vector<Match> all;
    for (size_t i = 0; i < observed.size(); ++i)
        for (size_t j = 0; j < pattern.size(); ++j) {
            double a = angle_between(observed[i], rotated[j]);
            if (a <= gate_rad) all.push_back({static_cast<int>(i), static_cast<int>(j), a});
        }
    std::sort(all.begin(), all.end(), [](const Match& a, const Match& b) {
        if (a.angle != b.angle) return a.angle < b.angle;
        if (a.obs != b.obs) return a.obs < b.obs;
        return a.pat < b.pat;
    });
    std::vector<bool> used_obs(observed.size(), false), used_pat(pattern.size(), false);
    std::vector<Match> out;
    for (const auto& m : all) {
        if (used_obs[m.obs] || used_pat[m.pat]) continue;
        used_obs[m.obs] = used_pat[m.pat] = true;
        out.push_back(m);
    }
    return out;
}

Rotation refine_with_matches(const std::vector<Vec3>& observed, const std::vector<Vec3>& pattern,
                             Rotation R, double gate_rad, std::vector<Match>& matches) {
    for (int iter = 0; iter < 3; ++iter) {
        matches = match_dots(observed, pattern, R, gate_rad);
        if (matches.size() < 3) break;
        std::vector<Vec3> o, p;
        for (const auto& m : matches) {
            o.push_back(observed[m.obs]);
            p.push_back(pattern[m.pat]);
        }
        R = kabsch(o, p);
    }
    return R;
}

}  // namespace

void DotPattern::validate() const {
    if (dots.size() < 15) throw std::invalid_argument("pattern needs >= 15 dots");
    if (!(dot_radius_deg > 0.0)) throw std::invalid_argument("dot radius must be > 0");
    for (const auto& d : dots)
        if (std::abs(d.norm() - 1.0) > 1e-6)
            throw std::invalid_argument("pattern dots must be unit vectors");

    const double min_sep = 2.0 * dot_radius_deg * kDeg;
    for (size_t i = 0; i < dots.size(); ++i)
        for (size_t j = i + 1; j < dots.size(); ++j)
            if (angle_between(dots[i], dots[j]) < min_sep)
                throw std::invalid_argument("pattern dots closer than twice the dot radius");

    // Rotation asymmetry: any self-mapping rotation must send dot 0 to some
    // dot j and dot 1 to some dot l with matching pair angle; enumerate those
    // candidates and reject patterns where a nontrivial one maps every dot
    // onto the set within 1 degree.
    const double tol = 1.0 * kDeg;
    const double a01 = angle_between(dots[0], dots[1]);
    for (size_t j = 0; j < dots.size(); ++j) {
        for (size_t l = 0; l < dots.size(); ++l) {
            if (l == j) continue;
            if (std::abs(angle_between(dots[j], dots[l]) - a01) > 2.0 * tol) continue;
            Rotation R = align_two_pairs(dots[0], dots[1], dots[j], dots[l]);
            if (R.angle() < tol) continue;  // identity
            bool maps_all = true;
            for (const auto& d : dots) {
                Vec3 rd = R.rotate(d);
                double best = M_PI;
                for (const auto& e : dots) best = std::min(best, angle_between(rd, e));
                if (best > tol) {
                    maps_all = false;
                    break;
                }
            }
            if (maps_all)
                throw std::invalid_argument("pattern is rotation-symmetric");
        }
    }
}

DotPattern default_pattern() {
    // Fibonacci sphere with seeded jitter; constants frozen once the layout
    // passed validate().
    constexpr int kDots = 21;
    constexpr double kJitterDeg = 4.0;
    std::mt19937_64 rng(0x5eed0215u);
    std::normal_distribution<double> gauss(0.0, kJitterDeg * kDeg);

    DotPattern p;
    p.dot_radius_deg = 6.0;
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < kDots; ++i) {
        double z = 1.0 - 2.0 * (i + 0.5) / kDots;
        double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        double phi = golden * i;
        Vec3 d{r * std::cos(phi), r * std::sin(phi), z};
        // Jitter along two tangent directions.
        Vec3 ref = std::abs(d.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
        Vec3 t1 = d.cross(ref).normalized();
        Vec3 t2 = d.cross(t1);
        Vec3 tilt = t1 * gauss(rng) + t2 * gauss(rng);
        double a = tilt.norm();
        if (a > 1e-12) d = Rotation::from_axis_angle(tilt, a).rotate(d);
        p.dots.push_back(d.normalized());
    }
    return p;
}

void save_pattern(const DotPattern& p, const std::string& path) {
    nlohmann::json j;
    j["dot_radius_deg"] = p.dot_radius_deg;
    j["dots"] = nlohmann::json::array();
    for (const auto& d : p.dots) j["dots"].push_back({d.x, d.y, d.z});
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << j.dump(2) << "\n";
}

DotPattern load_pattern(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    DotPattern p;
    p.dot_radius_deg = j.at("dot_radius_deg").get<double>();
    for (const auto& jd : j.at("dots")) {
        Vec3 d{jd.at(0).get<double>(), jd.at(1).get<double>(), jd.at(2).get<double>()};
        p.dots.push_back(d.normalized());
    }
    p.validate();
    return p;
}

BallImage render_ball(const Rotation& orientation, const DotPattern& pattern, int resolution,
                      const Vec3& light_direction, double timestamp) {
    if (resolution < 32) throw std::invalid_argument("resolution must be >= 32");

    BallImage img;
    img.width = img.height = resolution;
    img.pixels.assign(static_cast<size_t>(resolution) * resolution, 0.0f);
    img.center_x = img.center_y = 0.5 * (resolution - 1);
    img.radius_px = 0.46 * resolution;
    img.t = timestamp;

    Vec3 light = light_direction.normalized();
    std::vector<Vec3> dots;
    for (const auto& d : pattern.dots) {
        Vec3 r = orientation.rotate(d);
        if (r.z > 0.05) dots.push_back(r);  // camera-facing hemisphere only
    }

    const double r_dot = pattern.dot_radius_deg * kDeg;
    const double edge = 1.0 / img.radius_px;  // ~1 px of angular softening
    const double cos_gate = std::cos(r_dot + 2.0 * edge);
    const float background = 0.05f;

    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            double nx = (x - img.center_x) / img.radius_px;
            double ny = (y - img.center_y) / img.radius_px;
            double rho2 = nx * nx + ny * ny;
            double rho = std::sqrt(rho2);
            double cover = std::clamp((1.0 - rho) * img.radius_px + 0.5, 0.0, 1.0);
            if (cover <= 0.0) {
                img.at(x, y) = background;
                continue;
            }
            Vec3 n{nx, ny, std::sqrt(std::max(0.0, 1.0 - rho2))};
            double shade = 0.35 + 0.55 * std::max(0.0, n.dot(light));
            double darken = 0.0;
            for (const auto& d : dots) {
                double c = n.dot(d);
                if (c < cos_gate) continue;
                double a = std::acos(std::clamp(c, -1.0, 1.0));
                darken = std::max(darken, std::clamp((r_dot - a) / edge + 0.5, 0.0, 1.0));
            }
            double value = shade * (1.0 - 0.72 * darken);
            img.at(x, y) = static_cast<float>(background * (1.0 - cover) + value * cover);
        }
    }
    return img;
}

std::vector<Vec3> detect_dots(const BallImage& img) {
    if (img.radius_px <= 5.0) throw std::invalid_argument("ball radius must exceed 5 px");
    const int w = img.width, h = img.height;
    const double R = img.radius_px;

    // Local background per pixel: high percentile over a ring window, which
    // ignores the (dark, small) dots.
    std::vector<float> bg(static_cast<size_t>(w) * h, 0.0f);
    std::vector<uint8_t> inside(static_cast<size_t>(w) * h, 0);
    auto rho_of = [&](int x, int y) {
        double nx = (x - img.center_x) / R;
        double ny = (y - img.center_y) / R;
        return std::sqrt(nx * nx + ny * ny);
    };
    std::vector<float> window;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (rho_of(x, y) > 0.97) continue;
            inside[static_cast<size_t>(y) * w + x] = 1;
            window.clear();
            for (int dy = -6; dy <= 6; ++dy) {
                for (int dx = -6; dx <= 6; ++dx) {
                    if (std::abs(dx) <= 2 && std::abs(dy) <= 2) continue;  // exclude dot core
                    int xx = x + dx, yy = y + dy;
                    if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
                    if (rho_of(xx, yy) > 0.99) continue;
                    window.push_back(img.at(xx, yy));
                }
            }
            if (window.empty()) continue;
            size_t k = window.size() * 3 / 4;
            std::nth_element(window.begin(), window.begin() + k, window.end());
            bg[static_cast<size_t>(y) * w + x] = window[k];
        }
    }

    // Threshold and 8-connected components.
    std::vector<uint8_t> mask(static_cast<size_t>(w) * h, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            size_t i = static_cast<size_t>(y) * w + x;
            if (inside[i] && img.pixels[i] < 0.7f * bg[i]) mask[i] = 1;
        }

    std::vector<int> label(static_cast<size_t>(w) * h, -1);
    std::vector<Vec3> out;
    std::vector<std::pair<int, int>> stack;
    int next_label = 0;
    for (int y0 = 0; y0 < h; ++y0) {
        for (int x0 = 0; x0 < w; ++x0) {
            size_t i0 = static_cast<size_t>(y0) * w + x0;
            if (!mask[i0] || label[i0] >= 0) continue;
            stack.assign(1, {x0, y0});
            label[i0] = next_label;
            double sw = 0.0;
            Vec3 dir_sum{0, 0, 0};
            int size = 0;
            bool truncated = false;  // blob clipped by the limb: centroid biased
            while (!stack.empty()) {
                auto [x, y] = stack.back();
                stack.pop_back();
                ++size;
                size_t i = static_cast<size_t>(y) * w + x;
                if (rho_of(x, y) > 0.93) truncated = true;
                double wgt = std::max(0.0f, bg[i] - img.pixels[i]);
                double nx = (x - img.center_x) / R;
                double ny = (y - img.center_y) / R;
                double nz2 = 1.0 - nx * nx - ny * ny;
                if (nz2 > 0.0) {
                    // Average on the sphere rather than in the image plane;
                    // this removes most of the projective bias near the rim.
                    dir_sum = dir_sum + Vec3{nx, ny, std::sqrt(nz2)} * wgt;
                    sw += wgt;
                }
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int xx = x + dx, yy = y + dy;
                        if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
                        size_t ii = static_cast<size_t>(yy) * w + xx;
                        if (mask[ii] && label[ii] < 0) {
                            label[ii] = next_label;
                            stack.push_back({xx, yy});
                        }
                    }
            }
            ++next_label;
            if (size < 3 || sw <= 0.0 || truncated) continue;
            Vec3 d = dir_sum / sw;
            double n = d.norm();
            if (n < 1e-9) continue;
            d = d / n;
            if (d.z < 0.12) continue;  // too close to the rim to trust
            out.push_back(d);
        }
    }
    return out;
}

RegistrationResult register_orientation(const std::vector<Vec3>& observed,
                                        const DotPattern& pattern,
                                        const std::optional<Rotation>& hint) {
    if (observed.size() < 3) throw TooFewDots();
    const auto& pat = pattern.dots;
    const double gate = 3.0 * kDeg;
    const double pair_tol = 3.0 * kDeg;

    auto score_matches = [](const std::vector<Match>& ms) {
        double s = 0.0;
        for (const auto& m : ms) s += m.angle;
        return ms.empty() ? 1e9 : s / ms.size();
    };

    // Fast path: the hint already explains the observations.
    if (hint) {
        std::vector<Match> ms;
        Rotation R = refine_with_matches(observed, pat, *hint, 2.0 * gate, ms);
        ms = match_dots(observed, pat, R, gate);
        if (ms.size() >= std::max<size_t>(4, observed.size() * 3 / 5)) {
            std::vector<Vec3> o, p;
            for (const auto& m : ms) {
                o.push_back(observed[m.obs]);
                p.push_back(pat[m.pat]);
            }
            return {kabsch(o, p), static_cast<int>(ms.size())};
        }
    }

    // Pairwise angle table of the pattern.
    struct Pair {
        double angle;
        int i, j;
    };
    std::vector<Pair> pairs;
    for (size_t i = 0; i < pat.size(); ++i)
        for (size_t j = 0; j < pat.size(); ++j)
            if (i != j) pairs.push_back({angle_between(pat[i], pat[j]), static_cast<int>(i),
                                         static_cast<int>(j)});

    const int n = static_cast<int>(observed.size());
    std::vector<Match> best_matches;
    Rotation best_rot;
    double best_score = 1e9;

    int triplets_tried = 0;
    constexpr int kMaxTriplets = 400;
    for (int a = 0; a < n && triplets_tried < kMaxTriplets; ++a) {
        for (int b = a + 1; b < n && triplets_tried < kMaxTriplets; ++b) {
            double ab = angle_between(observed[a], observed[b]);
            for (int c = b + 1; c < n && triplets_tried < kMaxTriplets; ++c) {
                ++triplets_tried;
                double ac = angle_between(observed[a], observed[c]);
                double bc = angle_between(observed[b], observed[c]);
                for (const auto& pr : pairs) {
                    if (std::abs(pr.angle - ab) > pair_tol) continue;
                    for (size_t k = 0; k < pat.size(); ++k) {
                        if (static_cast<int>(k) == pr.i || static_cast<int>(k) == pr.j) continue;
                        if (std::abs(angle_between(pat[pr.i], pat[k]) - ac) > pair_tol) continue;
                        if (std::abs(angle_between(pat[pr.j], pat[k]) - bc) > pair_tol) continue;
                        Rotation R = kabsch({observed[a], observed[b], observed[c]},
                                            {pat[pr.i], pat[pr.j], pat[static_cast<int>(k)]});
                        auto ms = match_dots(observed, pat, R, gate);
                        double sc = score_matches(ms);
                        if (ms.size() > best_matches.size() ||
                            (ms.size() == best_matches.size() && sc < best_score)) {
                            best_matches = ms;
                            best_rot = R;
                            best_score = sc;
                        }
                    }
                }
            }
        }
    }

    if (best_matches.size() < 4) throw NoConsensus();
    std::vector<Match> ms;
    Rotation R = refine_with_matches(observed, pat, best_rot, gate, ms);
    if (ms.size() < 4) throw NoConsensus();
    return {R, static_cast<int>(ms.size())};
}

SpinEstimate unwrap_spin(const OrientationTrack& track) {
    const auto& s = track.samples;
    if (s.size() < 3) throw TooFewSamples("unwrap_spin needs >= 3 orientation samples");

    const size_t n_steps = s.size() - 1;
    std::vector<Vec3> axes(n_steps);
    std::vector<double> thetas(n_steps), dts(n_steps), mids(n_steps);
    for (size_t i = 0; i < n_steps; ++i) {
        if (s[i + 1].t <= s[i].t)
            throw std::invalid_argument("orientation track times must be strictly increasing");
        Rotation rel = s[i + 1].rotation * s[i].rotation.inverse();
        auto [axis, theta] = rel.axis_angle();
        axes[i] = axis;
        thetas[i] = theta;
        dts[i] = s[i + 1].t - s[i].t;
        mids[i] = 0.5 * (s[i].t + s[i + 1].t);
    }

    // Consensus direction: principal eigenvector of the angle-weighted outer
    // product sum (sign-blind).
    Eigen::Matrix3d M = Eigen::Matrix3d::Zero();
    for (size_t i = 0; i < n_steps; ++i) {
        Eigen::Vector3d a(axes[i].x, axes[i].y, axes[i].z);
        M += thetas[i] * a * a.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(M);
    Eigen::Vector3d u_e = eig.eigenvectors().col(2);
    Vec3 u{u_e(0), u_e(1), u_e(2)};

    // Candidate A: every step read as a rotation about the +u hemisphere;
    // candidate B is the global flip (the aliased partner).
    struct Candidate {
        std::vector<double> angles;
        Vec3 axis{0, 0, 1};
        double mean_angle = 0.0;
        double k = 0.0, rate0 = 0.0, k_stderr = 0.0;
        double rms_resid_rad = 0.0;
    };
    auto build = [&](bool flip) {
        Candidate c;
        c.angles.resize(n_steps);
        Vec3 axis_sum{0, 0, 0};
        for (size_t i = 0; i < n_steps; ++i) {
            bool aligned = axes[i].dot(u) >= 0.0;
            double phi = aligned ? thetas[i] : 2.0 * M_PI - thetas[i];
            Vec3 ax = aligned ? axes[i] : -axes[i];
            if (flip) {
                phi = 2.0 * M_PI - phi;
                ax = -ax;
            }
            c.angles[i] = phi;
            axis_sum = axis_sum + ax * thetas[i];
            c.mean_angle += phi;
        }
        c.mean_angle /= static_cast<double>(n_steps);
        if (axis_sum.norm() > 1e-12) c.axis = axis_sum.normalized();

        // Exponential decay fit on per-step rates at interval midpoints.
        std::vector<std::pair<double, double>> pts;
        for (size_t i = 0; i < n_steps; ++i) {
            double rate = c.angles[i] / (2.0 * M_PI * dts[i]);
            if (rate > 1e-9) pts.push_back({mids[i], rate});
        }
        if (pts.size() >= 3) {
            auto fit = fit_spin_damping(pts);
            c.k = fit.k;
            c.rate0 = fit.rate0;
            double t0 = pts.front().first;
            double sxx = 0.0, sx = 0.0;
            for (const auto& [t, r] : pts) sx += t - t0;
            double xbar = sx / pts.size();
            for (const auto& [t, r] : pts) sxx += (t - t0 - xbar) * (t - t0 - xbar);
            if (pts.size() > 2 && sxx > 1e-300)
                c.k_stderr = fit.rms_log_residual * std::sqrt(pts.size() / ((pts.size() - 2.0) * sxx));
            double ss = 0.0;
            for (size_t i = 0; i < n_steps; ++i) {
                double pred = 2.0 * M_PI * dts[i] * fit.rate0 *
                              std::exp(-fit.k * (mids[i] - pts.front().first));
                ss += (c.angles[i] - pred) * (c.angles[i] - pred);
            }
            c.rms_resid_rad = std::sqrt(ss / n_steps);
        } else {
            double mean_rate = 0.0;
            for (size_t i = 0; i < n_steps; ++i) mean_rate += c.angles[i] / (2.0 * M_PI * dts[i]);
            c.k = 0.0;
            c.rate0 = mean_rate / static_cast<double>(n_steps);
            c.k_stderr = 0.0;
            c.rms_resid_rad = 0.0;
        }
        return c;
    };

    Candidate A = build(false);
    Candidate B = build(true);

    // A physically decaying fit (k >= 0 within noise) breaks the global-flip
    // ambiguity; with no decay information the smaller-angle reading wins.
    auto plausible = [](const Candidate& c) { return c.k >= -(3.0 * c.k_stderr + 1e-3); };
    const Candidate* chosen = &A;
    if (plausible(A) && !plausible(B))
        chosen = &A;
    else if (plausible(B) && !plausible(A))
        chosen = &B;
    else
        chosen = A.mean_angle <= B.mean_angle ? &A : &B;

    SpinEstimate est;
    est.axis = chosen->axis;
    est.rate0 = chosen->rate0;
    est.damping_k = chosen->k;
    est.residual_deg = chosen->rms_resid_rad / kDeg;
    // Beyond the angle band, an estimate is only trusted when the decay fit
    // explains the per-step angles (mis-registered frames near the aliasing
    // limit show up as large residuals or an unphysically growing rate).
    bool fit_ok = chosen->rms_resid_rad <= std::max(0.05 * chosen->mean_angle, 2.0 * kDeg);
    est.reliable = chosen->mean_angle >= 0.02 * M_PI && chosen->mean_angle <= 0.9 * M_PI &&
                   fit_ok && plausible(*chosen);
    return est;
}

SpinEstimate estimate_spin_from_images(const std::vector<BallImage>& images,
                                       const DotPattern& pattern) {
    if (images.size() < 3) throw TooFewSamples("estimate_spin_from_images needs >= 3 images");
    OrientationTrack track;
    std::optional<Rotation> hint;
    for (const auto& img : images) {
        auto dirs = detect_dots(img);
        if (dirs.size() < 3) continue;
        try {
            auto reg = register_orientation(dirs, pattern, hint);
            track.samples.push_back({img.t, reg.rotation, reg.inliers});
            hint = reg.rotation;
        } catch (const NoConsensus&) {
            // Frame skipped; rate computation stays Delta-t aware.
        }
    }
    if (track.samples.size() < 3)
        throw TooFewSamples("fewer than 3 frames registered");
    return unwrap_spin(track);
}

void save_track_csv(const OrientationTrack& track, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "t,qw,qx,qy,qz,inliers\n";
    char line[256];
    for (const auto& s : track.samples) {
        std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", s.t,
                      s.rotation.w(), s.rotation.x(), s.rotation.y(), s.rotation.z(), s.inliers);
        f << line;
    }
}

OrientationTrack load_track_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("t,qw", 0) != 0)
        throw std::runtime_error("track file: bad header in " + path);
    OrientationTrack track;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        double v[5];
        for (int i = 0; i < 5; ++i) {
            if (!std::getline(ss, cell, ',')) throw std::runtime_error("track file: short row");
            v[i] = std::stod(cell);
        }
        int inliers = 0;
        if (std::getline(ss, cell, ',')) inliers = std::stoi(cell);
        track.samples.push_back({v[0], Rotation(v[1], v[2], v[3], v[4]), inliers});
    }
    return track;
}

std::string spin_estimate_to_json(const SpinEstimate& e) {
    nlohmann::json j;
    j["axis"] = {e.axis.x, e.axis.y, e.axis.z};
    j["rate0_rps"] = e.rate0;
    j["damping_k"] = e.damping_k;
    j["residual_deg"] = e.residual_deg;
    j["reliable"] = e.reliable;
    return j.dump(2) + "\n";
}

}  // namespace ttv
