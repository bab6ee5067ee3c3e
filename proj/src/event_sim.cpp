#include "ttv/event_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace ttv {

namespace {

constexpr double kLogOffset = 1e-3;
// Absolute slack (log units) absorbs float->double rounding of intensities so
// a step crafted to land exactly on a grid level still counts as crossed.
// Being absolute rather than relative to C keeps the level grids for C and 2C
// exactly nested.
constexpr double kLevelSlack = 1e-6;

inline double log_intensity(float v) {
    return std::log(static_cast<double>(v) + kLogOffset);
}

inline int32_t grid_level(double log_i, double contrast) {
    return static_cast<int32_t>(std::floor((log_i + kLevelSlack) / contrast));
}

}  // namespace

EventCamera::EventCamera(int width, int height, double contrast, double refractory_us)
    : width_(width), height_(height), contrast_(contrast), refractory_us_(refractory_us) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("bad sensor size");
    if (!(contrast > 0.0)) throw std::invalid_argument("contrast threshold must be > 0");
    size_t n = static_cast<size_t>(width) * height;
    level_.assign(n, 0);
    log_prev_.assign(n, 0.0);
    last_emit_us_.assign(n, -1e18);
}

void EventCamera::process_pixel(int x, int y, double log_new, double t0, double t1) {
    size_t idx = static_cast<size_t>(y) * width_ + x;
    double log_old = log_prev_[idx];
    int32_t lvl_new = grid_level(log_new, contrast_);
    int32_t lvl_old = level_[idx];
    if (lvl_new != lvl_old) {
        int dir = lvl_new > lvl_old ? 1 : -1;
        double denom = log_new - log_old;
        // Boundaries crossed: upward (lvl_old, lvl_new] at lvl*C, downward
        // [lvl_new+1, lvl_old] walked from the top.
        int32_t first = dir > 0 ? lvl_old + 1 : lvl_old;
        int32_t last = dir > 0 ? lvl_new : lvl_new + 1;
        for (int32_t lvl = first; dir > 0 ? lvl <= last : lvl >= last; lvl += dir) {
            double boundary = static_cast<double>(lvl) * contrast_;
            double frac = 0.5;
            if (std::abs(denom) > 1e-300) frac = (boundary - log_old) / denom;
            frac = std::clamp(frac, 0.0, 1.0);
            double t_ev_us = (t0 + frac * (t1 - t0)) * 1e6;
            if (t_ev_us - last_emit_us_[idx] >= refractory_us_ || refractory_us_ <= 0.0) {
                Event e;
                e.t_us = static_cast<uint32_t>(std::llround(t_ev_us));
                e.x = static_cast<uint16_t>(x);
                e.y = static_cast<uint16_t>(y);
                e.polarity = static_cast<int8_t>(dir);
                events_.push_back(e);
                last_emit_us_[idx] = t_ev_us;
            }
        }
        level_[idx] = lvl_new;
    }
    log_prev_[idx] = log_new;
}

void EventCamera::push_frame(const IntensityFrame& frame, std::optional<PixelRect> changed) {
    if (frame.width != width_ || frame.height != height_)
        throw std::invalid_argument("frame size mismatch");
    if (primed_ && frame.t <= t_prev_)
        throw std::invalid_argument("frame times must be strictly increasing");

    if (!primed_) {
        for (int y = 0; y < height_; ++y)
            for (int x = 0; x < width_; ++x) {
                size_t idx = static_cast<size_t>(y) * width_ + x;
                double l = log_intensity(frame.at(x, y));
                log_prev_[idx] = l;
                level_[idx] = grid_level(l, contrast_);
            }
        primed_ = true;
        t_prev_ = frame.t;
        return;
    }

    PixelRect r{0, 0, width_, height_};
    if (changed) {
        r = *changed;
        r.x0 = std::max(0, r.x0);
        r.y0 = std::max(0, r.y0);
        r.x1 = std::min(width_, r.x1);
        r.y1 = std::min(height_, r.y1);
    }
    for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
            size_t idx = static_cast<size_t>(y) * width_ + x;
            double log_new = log_intensity(frame.at(x, y));
            if (log_new == log_prev_[idx]) continue;  // unchanged pixels never cross
            process_pixel(x, y, log_new, t_prev_, frame.t);
        }
    }
    t_prev_ = frame.t;
}

EventStream EventCamera::take_stream() {
    std::stable_sort(events_.begin(), events_.end(),
                     [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
    EventStream s;
    s.width = width_;
    s.height = height_;
    s.events = std::move(events_);
    events_.clear();
    return s;
}

EventStream generate_events(const std::vector<IntensityFrame>& frames, double contrast,
                            double refractory_us) {
    if (frames.empty()) throw std::invalid_argument("no frames");
    EventCamera cam(frames[0].width, frames[0].height, contrast, refractory_us);
    for (const auto& f : frames) cam.push_frame(f);
    return cam.take_stream();
}

void inject_uniform_noise(EventStream& stream, double rate_per_pixel_per_s, uint32_t t0_us,
                          uint32_t t1_us, uint64_t seed) {
    if (t1_us <= t0_us || rate_per_pixel_per_s <= 0.0) return;
    double span_s = (t1_us - t0_us) * 1e-6;
    double expected =
        rate_per_pixel_per_s * span_s * static_cast<double>(stream.width) * stream.height;
    std::mt19937_64 rng(seed);
    std::poisson_distribution<long> count_dist(expected);
    long n = count_dist(rng);
    std::uniform_int_distribution<uint32_t> tx(t0_us, t1_us - 1);
    std::uniform_int_distribution<int> px(0, stream.width - 1);
    std::uniform_int_distribution<int> py(0, stream.height - 1);
    std::uniform_int_distribution<int> pol(0, 1);
    for (long i = 0; i < n; ++i) {
        Event e;
        e.t_us = tx(rng);
        e.x = static_cast<uint16_t>(px(rng));
        e.y = static_cast<uint16_t>(py(rng));
        e.polarity = pol(rng) ? 1 : -1;
        stream.events.push_back(e);
    }
    std::stable_sort(stream.events.begin(), stream.events.end(),
                     [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
}

std::vector<uint32_t> SpikeFrameSequence::active_cells(int t) const {
    std::vector<uint32_t> out;
    size_t wps = words_per_step();
    size_t base = static_cast<size_t>(t) * wps;
    for (size_t w = 0; w < wps; ++w) {
        uint64_t word = bits[base + w];
        while (word) {
            int b = __builtin_ctzll(word);
            out.push_back(static_cast<uint32_t>(w * 64 + b));
            word &= word - 1;
        }
    }
    return out;
}

SpikeFrameSequence accumulate(const EventStream& stream, uint32_t t0_us, uint32_t window_us,
                              int time_steps) {
    if (time_steps <= 0) throw std::invalid_argument("time_steps must be > 0");
    if (window_us == 0 || window_us % static_cast<uint32_t>(time_steps) != 0)
        throw std::invalid_argument("window must be divisible by time_steps");
    if (stream.width <= 0 || stream.height <= 0)
        throw std::invalid_argument("stream has no resolution");

    SpikeFrameSequence seq;
    seq.time_steps = time_steps;
    seq.window_us = window_us;
    seq.bits.assign(SpikeFrameSequence::words_per_step() * time_steps, 0);

    const uint32_t sub = window_us / static_cast<uint32_t>(time_steps);
    const int grid = SpikeFrameSequence::kGrid;
    size_t count = 0;
    for (const auto& e : stream.events) {
        if (e.t_us < t0_us || e.t_us >= t0_us + window_us) continue;
        int t = static_cast<int>((e.t_us - t0_us) / sub);
        int cx = static_cast<int>(static_cast<int64_t>(e.x) * grid / stream.width);
        int cy = static_cast<int>(static_cast<int64_t>(e.y) * grid / stream.height);
        seq.set(t, e.polarity > 0 ? 0 : 1, cy, cx);
        ++count;
    }
    seq.empty_window = count == 0;
    return seq;
}

std::pair<int, int> ground_truth_label(const Trajectory& traj, const CameraModel& camera,
                                       uint32_t t0_us, uint32_t window_us) {
    double t_mid = (static_cast<double>(t0_us) + 0.5 * window_us) * 1e-6;
    Vec3 p = trajectory_position(traj, t_mid);
    auto px = project(p, camera);
    if (!px) throw BallNotVisible();
    if (px->x < 0.0 || px->x >= camera.intrinsics.width || px->y < 0.0 ||
        px->y >= camera.intrinsics.height)
        throw BallNotVisible();
    const int grid = SpikeFrameSequence::kGrid;
    int lx = static_cast<int>(std::lround(px->x * grid / camera.intrinsics.width));
    int ly = static_cast<int>(std::lround(px->y * grid / camera.intrinsics.height));
    return {std::clamp(lx, 0, grid - 1), std::clamp(ly, 0, grid - 1)};
}

void save_events(const EventStream& stream, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    const char magic[4] = {'E', 'V', 'S', '1'};
    uint32_t w = static_cast<uint32_t>(stream.width);
    uint32_t h = static_cast<uint32_t>(stream.height);
    uint32_t n = static_cast<uint32_t>(stream.events.size());
    f.write(magic, 4);
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(&h), 4);
    f.write(reinterpret_cast<const char*>(&n), 4);
    for (const auto& e : stream.events) {
        f.write(reinterpret_cast<const char*>(&e.t_us), 4);
        f.write(reinterpret_cast<const char*>(&e.x), 2);
        f.write(reinterpret_cast<const char*>(&e.y), 2);
        f.write(reinterpret_cast<const char*>(&e.polarity), 1);
    }
}

EventStream load_events(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    char magic[4];
    uint32_t w = 0, h = 0, n = 0;
    f.read(magic, 4);
    if (std::memcmp(magic, "EVS1", 4) != 0) throw std::runtime_error("bad event file magic");
    f.read(reinterpret_cast<char*>(&w), 4);
    f.read(reinterpret_cast<char*>(&h), 4);
    f.read(reinterpret_cast<char*>(&n), 4);
    EventStream s;
    s.width = static_cast<int>(w);
    s.height = static_cast<int>(h);
    s.events.resize(n);
    for (auto& e : s.events) {
        f.read(reinterpret_cast<char*>(&e.t_us), 4);
        f.read(reinterpret_cast<char*>(&e.x), 2);
        f.read(reinterpret_cast<char*>(&e.y), 2);
        f.read(reinterpret_cast<char*>(&e.polarity), 1);
    }
    if (!f) throw std::runtime_error("truncated event file " + path);
    return s;
}

void save_events_csv(const EventStream& stream, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "t_us,x,y,polarity\n";
    for (const auto& e : stream.events)
        f << e.t_us << ',' << e.x << ',' << e.y << ',' << static_cast<int>(e.polarity) << '\n';
}

}  // namespace ttv
