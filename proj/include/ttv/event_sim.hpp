// Contrast-threshold event camera model and spike-frame accumulation.
//
// Log intensity log(I + 1e-3) is quantized onto a global level grid of pitch
// C; a pixel emits one event per grid level crossed, with the timestamp
// interpolated linearly inside the frame interval. The grid formulation makes
// two properties exact: reversing an intensity sequence in time swaps on/off
// counts, and doubling C never increases the event count (the coarser grid is
// a subset of the finer one).

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ttv/geometry.hpp"
#include "ttv/physics.hpp"

namespace ttv {

struct Event {
    uint32_t t_us = 0;
    uint16_t x = 0;
    uint16_t y = 0;
    int8_t polarity = 1;  // +1 or -1
};

struct EventStream {
    int width = 0;
    int height = 0;
    std::vector<Event> events;  // non-decreasing t_us
};

// Grayscale intensity grid, row-major, values >= 0.
struct IntensityFrame {
    double t = 0.0;  // s
    int width = 0;
    int height = 0;
    std::vector<float> pixels;

    float at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
    float& at(int x, int y) { return pixels[static_cast<size_t>(y) * width + x]; }
};

struct PixelRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open [x0,x1) x [y0,y1)
};

class EventCamera {
  public:
    EventCamera(int width, int height, double contrast_threshold, double refractory_us = 0.0);

    // Feed the next intensity frame. Pixels outside `changed` are guaranteed
    // unchanged since the previous frame and are skipped; omit it to scan the
    // whole frame. Frame times must be strictly increasing.
    void push_frame(const IntensityFrame& frame, std::optional<PixelRect> changed = std::nullopt);

    // Sorted stream of everything emitted so far.
    EventStream take_stream();

    int width() const { return width_; }
    int height() const { return height_; }

  private:
    void process_pixel(int x, int y, double log_new, double t0, double t1);

    int width_, height_;
    double contrast_;
    double refractory_us_;
    bool primed_ = false;
    double t_prev_ = 0.0;
    std::vector<int32_t> level_;       // current grid level per pixel
    std::vector<double> log_prev_;     // log intensity at the previous frame
    std::vector<double> last_emit_us_; // refractory bookkeeping
    std::vector<Event> events_;
};

// Convenience wrapper: run a frame list through EventCamera. Fewer than two
// frames yields an empty stream.
EventStream generate_events(const std::vector<IntensityFrame>& frames,
                            double contrast_threshold, double refractory_us = 0.0);

// Adds uniformly distributed background events (rate in events per pixel per
// second over [t0_us, t1_us)), then re-sorts. Deterministic in seed.
void inject_uniform_noise(EventStream& stream, double rate_per_pixel_per_s,
                          uint32_t t0_us, uint32_t t1_us, uint64_t seed);

// T binary frames of 2 channels (on/off) at 128x128, max-pooled from the
// sensor resolution.
struct SpikeFrameSequence {
    int time_steps = 0;
    uint32_t window_us = 0;
    bool empty_window = false;
    static constexpr int kGrid = 128;
    std::vector<uint64_t> bits;  // [t][channel][y][x] packed

    static size_t words_per_step() { return 2 * kGrid * kGrid / 64; }
    bool get(int t, int ch, int y, int x) const {
        size_t idx = bit_index(t, ch, y, x);
        return (bits[idx >> 6] >> (idx & 63)) & 1u;
    }
    void set(int t, int ch, int y, int x) {
        size_t idx = bit_index(t, ch, y, x);
        bits[idx >> 6] |= uint64_t{1} << (idx & 63);
    }
    // Active cell indices (ch * 128 * 128 + y * 128 + x) for one sub-window.
    std::vector<uint32_t> active_cells(int t) const;

  private:
    static size_t bit_index(int t, int ch, int y, int x) {
        return ((static_cast<size_t>(t) * 2 + ch) * kGrid + y) * kGrid + x;
    }
};

// Bin events of [t0, t0 + window) into T equal sub-windows; window must be
// divisible by T. An event-free window sets empty_window instead of failing.
SpikeFrameSequence accumulate(const EventStream& stream, uint32_t t0_us, uint32_t window_us,
                              int time_steps);

struct BallNotVisible : std::runtime_error {
    BallNotVisible() : std::runtime_error("ball not visible at window midpoint") {}
};

// Ball center at the window midpoint, projected and scaled to the 128x128
// class grid (rounded). Throws BallNotVisible when the projection fails or
// lands outside the sensor.
std::pair<int, int> ground_truth_label(const Trajectory& traj, const CameraModel& camera,
                                       uint32_t t0_us, uint32_t window_us);

// Binary event file: 16-byte header (magic "EVS1", u32 width, u32 height,
// u32 count), then count records of (u32 t_us, u16 x, u16 y, i8 polarity),
// little-endian.
void save_events(const EventStream& stream, const std::string& path);
EventStream load_events(const std::string& path);
// CSV export mode: header t_us,x,y,polarity.
void save_events_csv(const EventStream& stream, const std::string& path);

}  // namespace ttv
