// Spiking network core: two convolutional and two linear layers of non-leaky
// integrate-and-fire neurons (heaviside activation, soft reset by threshold
// subtraction), unrolled over T time steps.
//
// Templated on the scalar so the gradient checks can run the exact same
// backward code in double precision. The "relaxed" mode replaces the
// heaviside by its piecewise-linear integral (the ramp whose derivative is
// the rectangular surrogate window); in that mode the backward pass is the
// true gradient of the forward pass, which is what finite differences verify.
//
// Binary mode keeps spikes as index lists and only evaluates the
// backpropagated error where the surrogate window is open; with the default
// threshold 1 and beta 0.5 the membrane pass-through factor vanishes inside
// the window, so most of the work is sparse.

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace ttv::snn {

struct ConvSpec {
    int out_channels = 8;
    int kernel = 5;
    int stride = 2;
};

struct NetworkConfig {
    int in_channels = 2;
    int in_h = 128;
    int in_w = 128;
    ConvSpec conv1{8, 5, 2};
    ConvSpec conv2{16, 5, 2};
    int hidden = 512;
    int outputs = 256;
    int time_steps = 8;
    float threshold = 1.0f;
    float surrogate_beta = 0.5f;
    uint64_t seed = 1;
};

struct ShapeMismatch : std::runtime_error {
    explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

// Active input cells (ch * H * W + y * W + x) per time step.
struct SpikeInput {
    int time_steps = 0;
    std::vector<std::vector<uint32_t>> steps;
};

struct SynOpsReport {
    std::array<int64_t, 4> per_layer{};  // synapses fed into conv1..fc2
    int64_t total = 0;
};

namespace detail {

inline int conv_out(int in, const ConvSpec& c) {
    int out = (in - c.kernel) / c.stride + 1;
    if (out <= 0) throw std::invalid_argument("conv output collapses to zero");
    return out;
}

// Valid (kernel offset, output coordinate) pairs per input coordinate.
inline std::vector<std::vector<std::pair<int, int>>> valid_taps(int in, int out,
                                                                const ConvSpec& c) {
    std::vector<std::vector<std::pair<int, int>>> taps(in);
    for (int y = 0; y < in; ++y)
        for (int k = 0; k < c.kernel; ++k) {
            int rem = y - k;
            if (rem < 0 || rem % c.stride != 0) continue;
            int o = rem / c.stride;
            if (o >= out) continue;
            taps[y].push_back({k, o});
        }
    return taps;
}

inline void set_bit(std::vector<uint64_t>& bits, int i) {
    bits[static_cast<size_t>(i) >> 6] |= uint64_t{1} << (i & 63);
}
inline bool get_bit(const std::vector<uint64_t>& bits, int i) {
    return (bits[static_cast<size_t>(i) >> 6] >> (i & 63)) & 1u;
}

}  // namespace detail

template <typename S>
class NetworkT {
  public:
    explicit NetworkT(const NetworkConfig& cfg) : cfg_(cfg) {
        c1_h_ = detail::conv_out(cfg.in_h, cfg.conv1);
        c1_w_ = detail::conv_out(cfg.in_w, cfg.conv1);
        c2_h_ = detail::conv_out(c1_h_, cfg.conv2);
        c2_w_ = detail::conv_out(c1_w_, cfg.conv2);
        in_n_ = cfg.in_channels * cfg.in_h * cfg.in_w;
        c1_n_ = cfg.conv1.out_channels * c1_h_ * c1_w_;
        c2_n_ = cfg.conv2.out_channels * c2_h_ * c2_w_;

        w1_.assign(static_cast<size_t>(cfg.conv1.out_channels) * cfg.in_channels *
                       cfg.conv1.kernel * cfg.conv1.kernel,
                   S(0));
        b1_.assign(cfg.conv1.out_channels, S(0));
        w2_.assign(static_cast<size_t>(cfg.conv2.out_channels) * cfg.conv1.out_channels *
                       cfg.conv2.kernel * cfg.conv2.kernel,
                   S(0));
        b2_.assign(cfg.conv2.out_channels, S(0));
        wf1_.assign(static_cast<size_t>(c2_n_) * cfg.hidden, S(0));  // [in][out]
        bf1_.assign(cfg.hidden, S(0));
        wf2_.assign(static_cast<size_t>(cfg.hidden) * cfg.outputs, S(0));  // [in][out]
        bf2_.assign(cfg.outputs, S(0));

        taps_in_y_ = detail::valid_taps(cfg.in_h, c1_h_, cfg.conv1);
        taps_in_x_ = detail::valid_taps(cfg.in_w, c1_w_, cfg.conv1);
        taps_c1_y_ = detail::valid_taps(c1_h_, c2_h_, cfg.conv2);
        taps_c1_x_ = detail::valid_taps(c1_w_, c2_w_, cfg.conv2);

        fan_in_.resize(static_cast<size_t>(cfg.in_h) * cfg.in_w);
        for (int y = 0; y < cfg.in_h; ++y)
            for (int x = 0; x < cfg.in_w; ++x)
                fan_in_[static_cast<size_t>(y) * cfg.in_w + x] =
                    static_cast<int32_t>(taps_in_y_[y].size() * taps_in_x_[x].size()) *
                    cfg.conv1.out_channels;
        fan_c1_.resize(static_cast<size_t>(c1_h_) * c1_w_);
        for (int y = 0; y < c1_h_; ++y)
            for (int x = 0; x < c1_w_; ++x)
                fan_c1_[static_cast<size_t>(y) * c1_w_ + x] =
                    static_cast<int32_t>(taps_c1_y_[y].size() * taps_c1_x_[x].size()) *
                    cfg.conv2.out_channels;

        init_weights();
        rebuild_transposed();
    }

    const NetworkConfig& config() const { return cfg_; }
    int input_size() const { return in_n_; }
    int conv1_size() const { return c1_n_; }
    int conv2_size() const { return c2_n_; }

    // Flat parameter access in document order: conv1 W,b; conv2 W,b; fc1
    // (stored [in][out]); fc2. Used by the optimizer, serialization and the
    // finite-difference checks.
    std::vector<std::vector<S>*> parameter_blocks() {
        return {&w1_, &b1_, &w2_, &b2_, &wf1_, &bf1_, &wf2_, &bf2_};
    }
    std::vector<const std::vector<S>*> parameter_blocks() const {
        return {&w1_, &b1_, &w2_, &b2_, &wf1_, &bf1_, &wf2_, &bf2_};
    }
    void rebuild_transposed() {
        // conv2 weights reindexed as [ic][ky][kx][oc] for the backward pass.
        const int OC = cfg_.conv2.out_channels, IC = cfg_.conv1.out_channels,
                  K = cfg_.conv2.kernel;
        w2t_.assign(w2_.size(), S(0));
        for (int oc = 0; oc < OC; ++oc)
            for (int ic = 0; ic < IC; ++ic)
                for (int ky = 0; ky < K; ++ky)
                    for (int kx = 0; kx < K; ++kx)
                        w2t_[((static_cast<size_t>(ic) * K + ky) * K + kx) * OC + oc] =
                            w2_[((static_cast<size_t>(oc) * IC + ic) * K + ky) * K + kx];
    }

    struct Trace {
        bool relaxed = false;
        // Binary mode: spike index lists per step.
        std::vector<std::vector<uint32_t>> c1_spk, c2_spk, h_spk, o_spk;
        // Relaxed mode: dense spike values per step.
        std::vector<std::vector<S>> c1_val, c2_val, h_val, o_val;
        // Surrogate window masks per step (both modes).
        std::vector<std::vector<uint64_t>> c1_win, c2_win, h_win, o_win;
        std::vector<S> rates;
        SynOpsReport synops;
        std::array<int64_t, 4> spikes{};  // emitted per layer
        // Relaxed mode: smallest distance of any membrane value to a ramp
        // kink (v = theta +- beta). Finite differences are invalid across a
        // kink; callers use this to discard such draws.
        S min_kink_distance = S(1e30);
    };

    Trace forward(const SpikeInput& input, bool record_trace, bool relaxed) const;

    struct Grads {
        std::vector<S> w1, b1, w2, b2, wf1, bf1, wf2, bf2;
        void init_like(const NetworkT& net) {
            w1.assign(net.w1_.size(), S(0));
            b1.assign(net.b1_.size(), S(0));
            w2.assign(net.w2_.size(), S(0));
            b2.assign(net.b2_.size(), S(0));
            wf1.assign(net.wf1_.size(), S(0));
            bf1.assign(net.bf1_.size(), S(0));
            wf2.assign(net.wf2_.size(), S(0));
            bf2.assign(net.bf2_.size(), S(0));
        }
        void add(const Grads& o) {
            auto acc = [](std::vector<S>& a, const std::vector<S>& b) {
                for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
            };
            acc(w1, o.w1);
            acc(b1, o.b1);
            acc(w2, o.w2);
            acc(b2, o.b2);
            acc(wf1, o.wf1);
            acc(bf1, o.bf1);
            acc(wf2, o.wf2);
            acc(bf2, o.bf2);
        }
        std::vector<std::vector<S>*> blocks() {
            return {&w1, &b1, &w2, &b2, &wf1, &bf1, &wf2, &bf2};
        }
    };

    // Accumulates d(loss)/d(parameters) into `grads` for one sample, given
    // d(loss)/d(rates).
    void backward(const SpikeInput& input, const Trace& trace, const std::vector<S>& drates,
                  Grads& grads) const;

  private:
    void init_weights();

    void membrane_step(std::vector<S>& current_row, std::vector<S>& potential,
                       std::vector<uint32_t>* spikes, std::vector<S>* values,
                       std::vector<uint64_t>* win, bool relaxed, S* min_kink) const;

    NetworkConfig cfg_;
    int in_n_ = 0, c1_n_ = 0, c2_n_ = 0;
    int c1_h_ = 0, c1_w_ = 0, c2_h_ = 0, c2_w_ = 0;

    std::vector<S> w1_, b1_, w2_, b2_, wf1_, bf1_, wf2_, bf2_;
    std::vector<S> w2t_;
    std::vector<std::vector<std::pair<int, int>>> taps_in_y_, taps_in_x_, taps_c1_y_, taps_c1_x_;
    std::vector<int32_t> fan_in_, fan_c1_;
};

// ---------------------------------------------------------------- definitions

template <typename S>
void NetworkT<S>::init_weights() {
    std::mt19937_64 rng(cfg_.seed);
    auto fill_uniform = [&rng](std::vector<S>& w, double bound) {
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : w) v = static_cast<S>(dist(rng));
    };
    // Kaiming-style bounds scaled up: spiking layers need enough drive to
    // cross the threshold within a few steps of sparse input.
    double f1 = cfg_.in_channels * cfg_.conv1.kernel * cfg_.conv1.kernel;
    double f2 = cfg_.conv1.out_channels * cfg_.conv2.kernel * cfg_.conv2.kernel;
    fill_uniform(w1_, 5.0 * std::sqrt(1.0 / f1));
    fill_uniform(w2_, 3.0 * std::sqrt(1.0 / f2));
    fill_uniform(wf1_, 3.0 * std::sqrt(1.0 / c2_n_));
    fill_uniform(wf2_, 3.0 * std::sqrt(1.0 / cfg_.hidden));
    // Biases start at zero.
}

template <typename S>
void NetworkT<S>::membrane_step(std::vector<S>& current_row, std::vector<S>& potential,
                                std::vector<uint32_t>* spikes, std::vector<S>* values,
                                std::vector<uint64_t>* win, bool relaxed, S* min_kink) const {
    const S theta = static_cast<S>(cfg_.threshold);
    const S beta = static_cast<S>(cfg_.surrogate_beta);
    const int n = static_cast<int>(potential.size());
    const bool window_open = beta > S(0);
    for (int i = 0; i < n; ++i) {
        S v = potential[i] + current_row[i];
        if (window_open && std::abs(v - theta) <= beta) detail::set_bit(*win, i);
        if (relaxed) {
            if (min_kink && beta > S(0)) {
                S lower = std::abs(v - (theta - beta));
                S upper = std::abs(v - (theta + beta));
                *min_kink = std::min({*min_kink, lower, upper});
            }
            S s = beta > S(0) ? std::clamp((v - theta + beta) / (S(2) * beta), S(0), S(1))
                              : (v >= theta ? S(1) : S(0));
            (*values)[i] = s;
            potential[i] = v - theta * s;
        } else {
            if (v >= theta) {
                spikes->push_back(static_cast<uint32_t>(i));
                potential[i] = v - theta;
            } else {
                potential[i] = v;
            }
        }
    }
}

template <typename S>
typename NetworkT<S>::Trace NetworkT<S>::forward(const SpikeInput& input, bool record_trace,
                                                 bool relaxed) const {
    if (input.time_steps != cfg_.time_steps ||
        static_cast<int>(input.steps.size()) != cfg_.time_steps)
        throw ShapeMismatch("input time steps do not match the network configuration");
    const int T = cfg_.time_steps;
    const int HWin = cfg_.in_h * cfg_.in_w;
    const int A1 = c1_h_ * c1_w_, A2 = c2_h_ * c2_w_;
    const int IC1 = cfg_.in_channels, OC1 = cfg_.conv1.out_channels;
    const int OC2 = cfg_.conv2.out_channels;
    const int K1 = cfg_.conv1.kernel, K2 = cfg_.conv2.kernel;

    Trace tr;
    tr.relaxed = relaxed;
    tr.rates.assign(cfg_.outputs, S(0));
    auto words = [](int n) { return static_cast<size_t>((n + 63) / 64); };
    tr.c1_win.assign(T, std::vector<uint64_t>(words(c1_n_), 0));
    tr.c2_win.assign(T, std::vector<uint64_t>(words(c2_n_), 0));
    tr.h_win.assign(T, std::vector<uint64_t>(words(cfg_.hidden), 0));
    tr.o_win.assign(T, std::vector<uint64_t>(words(cfg_.outputs), 0));
    if (relaxed) {
        tr.c1_val.assign(T, std::vector<S>(c1_n_, S(0)));
        tr.c2_val.assign(T, std::vector<S>(c2_n_, S(0)));
        tr.h_val.assign(T, std::vector<S>(cfg_.hidden, S(0)));
        tr.o_val.assign(T, std::vector<S>(cfg_.outputs, S(0)));
    } else {
        tr.c1_spk.assign(T, {});
        tr.c2_spk.assign(T, {});
        tr.h_spk.assign(T, {});
        tr.o_spk.assign(T, {});
    }

    std::vector<S> current;
    std::vector<S> u1(c1_n_, S(0)), u2(c2_n_, S(0)), uh(cfg_.hidden, S(0)),
        uo(cfg_.outputs, S(0));

    // conv1 over all steps
    for (int t = 0; t < T; ++t) {
        current.assign(c1_n_, S(0));
        for (int oc = 0; oc < OC1; ++oc)
            std::fill(current.begin() + static_cast<size_t>(oc) * A1,
                      current.begin() + static_cast<size_t>(oc + 1) * A1, b1_[oc]);
        for (uint32_t idx : input.steps[t]) {
            if (static_cast<int>(idx) >= in_n_) throw ShapeMismatch("input spike out of range");
            int ic = static_cast<int>(idx) / HWin;
            int rem = static_cast<int>(idx) % HWin;
            int y = rem / cfg_.in_w, x = rem % cfg_.in_w;
            tr.synops.per_layer[0] += fan_in_[rem];
            const size_t w_ic_base = static_cast<size_t>(ic) * K1 * K1;
            const size_t w_oc_stride = static_cast<size_t>(IC1) * K1 * K1;
            for (auto [ky, oy] : taps_in_y_[y])
                for (auto [kx, ox] : taps_in_x_[x]) {
                    size_t wbase = w_ic_base + static_cast<size_t>(ky) * K1 + kx;
                    size_t obase = static_cast<size_t>(oy) * c1_w_ + ox;
                    for (int oc = 0; oc < OC1; ++oc)
                        current[static_cast<size_t>(oc) * A1 + obase] +=
                            w1_[wbase + static_cast<size_t>(oc) * w_oc_stride];
                }
        }
        membrane_step(current, u1, relaxed ? nullptr : &tr.c1_spk[t],
                      relaxed ? &tr.c1_val[t] : nullptr, &tr.c1_win[t], relaxed,
                      &tr.min_kink_distance);
    }

    // conv2 over all steps
    for (int t = 0; t < T; ++t) {
        current.assign(c2_n_, S(0));
        for (int oc = 0; oc < OC2; ++oc)
            std::fill(current.begin() + static_cast<size_t>(oc) * A2,
                      current.begin() + static_cast<size_t>(oc + 1) * A2, b2_[oc]);
        auto feed = [&](int idx, S value) {
            int ic = idx / A1;
            int rem = idx % A1;
            int y = rem / c1_w_, x = rem % c1_w_;
            const size_t w_ic_base = static_cast<size_t>(ic) * K2 * K2;
            const size_t w_oc_stride = static_cast<size_t>(OC1) * K2 * K2;
            for (auto [ky, oy] : taps_c1_y_[y])
                for (auto [kx, ox] : taps_c1_x_[x]) {
                    size_t wbase = w_ic_base + static_cast<size_t>(ky) * K2 + kx;
                    size_t obase = static_cast<size_t>(oy) * c2_w_ + ox;
                    for (int oc = 0; oc < OC2; ++oc)
                        current[static_cast<size_t>(oc) * A2 + obase] +=
                            value * w2_[wbase + static_cast<size_t>(oc) * w_oc_stride];
                }
        };
        if (relaxed) {
            for (int i = 0; i < c1_n_; ++i)
                if (tr.c1_val[t][i] != S(0)) feed(i, tr.c1_val[t][i]);
        } else {
            tr.spikes[0] += static_cast<int64_t>(tr.c1_spk[t].size());
            for (uint32_t idx : tr.c1_spk[t]) {
                tr.synops.per_layer[1] += fan_c1_[idx % A1];
                feed(static_cast<int>(idx), S(1));
            }
        }
        membrane_step(current, u2, relaxed ? nullptr : &tr.c2_spk[t],
                      relaxed ? &tr.c2_val[t] : nullptr, &tr.c2_win[t], relaxed,
                      &tr.min_kink_distance);
    }

    // fc1 over all steps
    for (int t = 0; t < T; ++t) {
        current.assign(bf1_.begin(), bf1_.end());
        if (relaxed) {
            for (int i = 0; i < c2_n_; ++i) {
                S v = tr.c2_val[t][i];
                if (v == S(0)) continue;
                const S* row = &wf1_[static_cast<size_t>(i) * cfg_.hidden];
                for (int j = 0; j < cfg_.hidden; ++j) current[j] += v * row[j];
            }
        } else {
            tr.spikes[1] += static_cast<int64_t>(tr.c2_spk[t].size());
            tr.synops.per_layer[2] +=
                static_cast<int64_t>(tr.c2_spk[t].size()) * cfg_.hidden;
            for (uint32_t idx : tr.c2_spk[t]) {
                const S* row = &wf1_[static_cast<size_t>(idx) * cfg_.hidden];
                for (int j = 0; j < cfg_.hidden; ++j) current[j] += row[j];
            }
        }
        membrane_step(current, uh, relaxed ? nullptr : &tr.h_spk[t],
                      relaxed ? &tr.h_val[t] : nullptr, &tr.h_win[t], relaxed,
                      &tr.min_kink_distance);
    }

    // fc2 over all steps
    for (int t = 0; t < T; ++t) {
        current.assign(bf2_.begin(), bf2_.end());
        if (relaxed) {
            for (int i = 0; i < cfg_.hidden; ++i) {
                S v = tr.h_val[t][i];
                if (v == S(0)) continue;
                const S* row = &wf2_[static_cast<size_t>(i) * cfg_.outputs];
                for (int j = 0; j < cfg_.outputs; ++j) current[j] += v * row[j];
            }
        } else {
            tr.spikes[2] += static_cast<int64_t>(tr.h_spk[t].size());
            tr.synops.per_layer[3] +=
                static_cast<int64_t>(tr.h_spk[t].size()) * cfg_.outputs;
            for (uint32_t idx : tr.h_spk[t]) {
                const S* row = &wf2_[static_cast<size_t>(idx) * cfg_.outputs];
                for (int j = 0; j < cfg_.outputs; ++j) current[j] += row[j];
            }
        }
        membrane_step(current, uo, relaxed ? nullptr : &tr.o_spk[t],
                      relaxed ? &tr.o_val[t] : nullptr, &tr.o_win[t], relaxed,
                      &tr.min_kink_distance);
        if (relaxed) {
            for (int j = 0; j < cfg_.outputs; ++j) tr.rates[j] += tr.o_val[t][j];
        } else {
            tr.spikes[3] += static_cast<int64_t>(tr.o_spk[t].size());
            for (uint32_t idx : tr.o_spk[t]) tr.rates[idx] += S(1);
        }
    }
    for (auto& r : tr.rates) r /= static_cast<S>(T);
    tr.synops.total = tr.synops.per_layer[0] + tr.synops.per_layer[1] +
                      tr.synops.per_layer[2] + tr.synops.per_layer[3];

    if (!record_trace) {
        tr.c1_win.clear();
        tr.c2_win.clear();
        tr.h_win.clear();
        tr.o_win.clear();
        tr.c1_val.clear();
        tr.c2_val.clear();
        tr.h_val.clear();
        tr.o_val.clear();
    }
    return tr;
}

template <typename S>
void NetworkT<S>::backward(const SpikeInput& input, const Trace& tr,
                           const std::vector<S>& drates, Grads& grads) const {
    const int T = cfg_.time_steps;
    const S theta = static_cast<S>(cfg_.threshold);
    const S beta = static_cast<S>(cfg_.surrogate_beta);
    const S inv2b = beta > S(0) ? S(1) / (S(2) * beta) : S(0);
    const S pass_in_window = S(1) - theta * inv2b;
    const S invT = S(1) / static_cast<S>(T);
    const int A1 = c1_h_ * c1_w_, A2 = c2_h_ * c2_w_;
    const int OC1 = cfg_.conv1.out_channels, OC2 = cfg_.conv2.out_channels;
    const int IC1 = cfg_.in_channels;
    const int K1 = cfg_.conv1.kernel, K2 = cfg_.conv2.kernel;
    const int HWin = cfg_.in_h * cfg_.in_w;

    std::vector<S> go(cfg_.outputs, S(0)), go_next(cfg_.outputs, S(0));
    std::vector<S> gh(cfg_.hidden, S(0)), gh_next(cfg_.hidden, S(0));
    std::vector<S> g2(c2_n_, S(0)), g2_next(c2_n_, S(0));
    std::vector<S> g1(c1_n_, S(0)), g1_next(c1_n_, S(0));
    std::vector<S> dh(cfg_.hidden, S(0));
    std::vector<S> gt2(static_cast<size_t>(A2) * OC2, S(0));  // g2 transposed [pos][oc]
    std::vector<S> gt1(static_cast<size_t>(A1) * OC1, S(0));
    // conv gradient buffers in [ic][ky][kx][oc] order, folded back at the end.
    std::vector<S> dw1t(w1_.size(), S(0)), dw2t(w2_.size(), S(0));

    auto window_indices = [](const std::vector<uint64_t>& bits, int n) {
        std::vector<int> idx;
        for (size_t w = 0; w < bits.size(); ++w) {
            uint64_t word = bits[w];
            while (word) {
                int b = __builtin_ctzll(word);
                int i = static_cast<int>(w * 64 + b);
                if (i < n) idx.push_back(i);
                word &= word - 1;
            }
        }
        return idx;
    };

    for (int t = T - 1; t >= 0; --t) {
        // ---- output layer
        go = go_next;
        for (int i : window_indices(tr.o_win[t], cfg_.outputs))
            go[i] = drates[i] * invT * inv2b + go_next[i] * pass_in_window;

        // fc2 gradients
        if (tr.relaxed) {
            for (int i = 0; i < cfg_.hidden; ++i) {
                S v = tr.h_val[t][i];
                if (v == S(0)) continue;
                S* row = &grads.wf2[static_cast<size_t>(i) * cfg_.outputs];
                for (int j = 0; j < cfg_.outputs; ++j) row[j] += v * go[j];
            }
        } else {
            for (uint32_t idx : tr.h_spk[t]) {
                S* row = &grads.wf2[static_cast<size_t>(idx) * cfg_.outputs];
                for (int j = 0; j < cfg_.outputs; ++j) row[j] += go[j];
            }
        }
        for (int j = 0; j < cfg_.outputs; ++j) grads.bf2[j] += go[j];

        // ---- hidden layer
        // dh = W_fc2 * go (per input neuron: dot of its outgoing row with go)
        for (int i = 0; i < cfg_.hidden; ++i) {
            const S* row = &wf2_[static_cast<size_t>(i) * cfg_.outputs];
            S acc = S(0);
            for (int j = 0; j < cfg_.outputs; ++j) acc += row[j] * go[j];
            dh[i] = acc;
        }
        gh = gh_next;
        for (int i : window_indices(tr.h_win[t], cfg_.hidden))
            gh[i] = dh[i] * inv2b + gh_next[i] * pass_in_window;

        // fc1 gradients
        if (tr.relaxed) {
            for (int i = 0; i < c2_n_; ++i) {
                S v = tr.c2_val[t][i];
                if (v == S(0)) continue;
                S* row = &grads.wf1[static_cast<size_t>(i) * cfg_.hidden];
                for (int j = 0; j < cfg_.hidden; ++j) row[j] += v * gh[j];
            }
        } else {
            for (uint32_t idx : tr.c2_spk[t]) {
                S* row = &grads.wf1[static_cast<size_t>(idx) * cfg_.hidden];
                for (int j = 0; j < cfg_.hidden; ++j) row[j] += gh[j];
            }
        }
        for (int j = 0; j < cfg_.hidden; ++j) grads.bf1[j] += gh[j];

        // ---- conv2 output layer (flattened as fc1 input)
        g2 = g2_next;
        if (tr.relaxed) {
            for (int i = 0; i < c2_n_; ++i)
                if (detail::get_bit(tr.c2_win[t], i)) {
                    const S* row = &wf1_[static_cast<size_t>(i) * cfg_.hidden];
                    S acc = S(0);
                    for (int j = 0; j < cfg_.hidden; ++j) acc += row[j] * gh[j];
                    g2[i] = acc * inv2b + g2_next[i] * pass_in_window;
                }
        } else {
            for (int i : window_indices(tr.c2_win[t], c2_n_)) {
                const S* row = &wf1_[static_cast<size_t>(i) * cfg_.hidden];
                S acc = S(0);
                for (int j = 0; j < cfg_.hidden; ++j) acc += row[j] * gh[j];
                g2[i] = acc * inv2b + g2_next[i] * pass_in_window;
            }
        }

        // Transpose g2 into [pos][oc] for contiguous inner loops.
        for (int oc = 0; oc < OC2; ++oc)
            for (int pos = 0; pos < A2; ++pos)
                gt2[static_cast<size_t>(pos) * OC2 + oc] = g2[static_cast<size_t>(oc) * A2 + pos];
        for (int oc = 0; oc < OC2; ++oc) {
            S acc = S(0);
            const S* base = &g2[static_cast<size_t>(oc) * A2];
            for (int pos = 0; pos < A2; ++pos) acc += base[pos];
            grads.b2[oc] += acc;
        }

        // conv2 weight gradients from conv1 spikes.
        auto conv2_wgrad = [&](int idx, S value) {
            int ic = idx / A1;
            int rem = idx % A1;
            int y = rem / c1_w_, x = rem % c1_w_;
            for (auto [ky, oy] : taps_c1_y_[y])
                for (auto [kx, ox] : taps_c1_x_[x]) {
                    S* wrow = &dw2t[((static_cast<size_t>(ic) * K2 + ky) * K2 + kx) * OC2];
                    const S* grow = &gt2[(static_cast<size_t>(oy) * c2_w_ + ox) * OC2];
                    for (int oc = 0; oc < OC2; ++oc) wrow[oc] += value * grow[oc];
                }
        };
        if (tr.relaxed) {
            for (int i = 0; i < c1_n_; ++i)
                if (tr.c1_val[t][i] != S(0)) conv2_wgrad(i, tr.c1_val[t][i]);
        } else {
            for (uint32_t idx : tr.c1_spk[t]) conv2_wgrad(static_cast<int>(idx), S(1));
        }

        // ---- conv1 output layer
        g1 = g1_next;
        auto conv1_backprop_at = [&](int i) {
            int ic = i / A1;
            int rem = i % A1;
            int y = rem / c1_w_, x = rem % c1_w_;
            S acc = S(0);
            for (auto [ky, oy] : taps_c1_y_[y])
                for (auto [kx, ox] : taps_c1_x_[x]) {
                    const S* wrow = &w2t_[((static_cast<size_t>(ic) * K2 + ky) * K2 + kx) * OC2];
                    const S* grow = &gt2[(static_cast<size_t>(oy) * c2_w_ + ox) * OC2];
                    for (int oc = 0; oc < OC2; ++oc) acc += wrow[oc] * grow[oc];
                }
            return acc;
        };
        for (int i : window_indices(tr.c1_win[t], c1_n_))
            g1[i] = conv1_backprop_at(i) * inv2b + g1_next[i] * pass_in_window;

        for (int oc = 0; oc < OC1; ++oc)
            for (int pos = 0; pos < A1; ++pos)
                gt1[static_cast<size_t>(pos) * OC1 + oc] = g1[static_cast<size_t>(oc) * A1 + pos];
        for (int oc = 0; oc < OC1; ++oc) {
            S acc = S(0);
            const S* base = &g1[static_cast<size_t>(oc) * A1];
            for (int pos = 0; pos < A1; ++pos) acc += base[pos];
            grads.b1[oc] += acc;
        }

        for (uint32_t idx : input.steps[t]) {
            int ic = static_cast<int>(idx) / HWin;
            int rem = static_cast<int>(idx) % HWin;
            int y = rem / cfg_.in_w, x = rem % cfg_.in_w;
            for (auto [ky, oy] : taps_in_y_[y])
                for (auto [kx, ox] : taps_in_x_[x]) {
                    S* wrow = &dw1t[((static_cast<size_t>(ic) * K1 + ky) * K1 + kx) * OC1];
                    const S* grow = &gt1[(static_cast<size_t>(oy) * c1_w_ + ox) * OC1];
                    for (int oc = 0; oc < OC1; ++oc) wrow[oc] += grow[oc];
                }
        }

        go_next = go;
        gh_next = gh;
        g2_next = g2;
        g1_next = g1;
    }

    // Fold transposed conv gradients back to canonical [oc][ic][ky][kx].
    for (int oc = 0; oc < OC1; ++oc)
        for (int ic = 0; ic < IC1; ++ic)
            for (int ky = 0; ky < K1; ++ky)
                for (int kx = 0; kx < K1; ++kx)
                    grads.w1[((static_cast<size_t>(oc) * IC1 + ic) * K1 + ky) * K1 + kx] +=
                        dw1t[((static_cast<size_t>(ic) * K1 + ky) * K1 + kx) * OC1 + oc];
    for (int oc = 0; oc < OC2; ++oc)
        for (int ic = 0; ic < OC1; ++ic)
            for (int ky = 0; ky < K2; ++ky)
                for (int kx = 0; kx < K2; ++kx)
                    grads.w2[((static_cast<size_t>(oc) * OC1 + ic) * K2 + ky) * K2 + kx] +=
                        dw2t[((static_cast<size_t>(ic) * K2 + ky) * K2 + kx) * OC2 + oc];
}

}  // namespace ttv::snn
